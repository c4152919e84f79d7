#include "sbwm/metrics.hpp"

#include "json.hpp"

#include <charconv>

namespace sbwm::metrics {

namespace {

using json = nlohmann::json;

constexpr std::size_t csv_ks[] = {1, 5, 10, 20};

std::string num(double v)
{
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace

MetricsReport evaluate(const body::BodyChain& chain, const std::vector<std::vector<rollout::RolloutTrace>>& traces,
                       const std::vector<data::Window>& windows, const EvalOptions& options)
{
    if (traces.size() != windows.size() || traces.empty()) {
        throw bad_input("evaluate: " + std::to_string(traces.size()) + " trace groups for " +
                        std::to_string(windows.size()) + " windows");
    }
    MetricsReport r;
    r.samples = traces.front().size();
    r.t_pred = windows.front().t_pred;
    const auto repr = windows.front().representation;
    r.representation = std::string(data::to_string(repr));

    std::vector<std::vector<Sequence>> samples;
    std::vector<Sequence> truths;
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const auto& win = windows[w];
        if (traces[w].size() != r.samples || win.t_pred != r.t_pred || win.representation != repr) {
            throw bad_input("evaluate: windows must share K, t_pred and representation");
        }
        std::vector<Sequence> group;
        bool ok = true;
        for (const auto& tr : traces[w]) {
            auto p = tr.predicted();
            if (tr.diverged || p.size() != r.t_pred) {
                ok = false;
                break;
            }
            group.push_back(std::move(p));
        }
        if (!ok) {
            ++r.diverged;
            continue;
        }
        Sequence truth;
        for (std::size_t k = 0; k < win.t_pred; ++k) {
            const auto f = win.target(k);
            truth.emplace_back(f.begin(), f.end());
        }
        samples.push_back(std::move(group));
        truths.push_back(std::move(truth));
    }
    r.windows = samples.size();
    if (samples.empty()) {
        throw numerical_error("evaluate: every window diverged");
    }

    std::vector<Sequence> all;
    r.mpjpe_by_horizon.assign(r.t_pred, 0.0);
    for (std::size_t w = 0; w < samples.size(); ++w) {
        for (const auto& p : samples[w]) {
            const auto per = mpjpe_per_frame(chain, p, truths[w], repr);
            for (std::size_t t = 0; t < per.size(); ++t) {
                r.mpjpe_by_horizon[t] += per[t];
            }
            r.mpjpe += mpjpe(chain, p, truths[w], repr);
            if (r.t_pred >= 2) {
                r.vel_err += diff_errors(chain, p, truths[w], 1, repr);
            }
            if (r.t_pred >= 3) {
                r.acc_err += diff_errors(chain, p, truths[w], 2, repr);
            }
            r.persistence += persistence(p);
            r.joint_persistence += joint_persistence(chain, p, repr);
            r.violations += violations(chain, p, repr);
            all.push_back(p);
        }
    }
    const double n = static_cast<double>(all.size());
    r.mpjpe /= n;
    r.vel_err /= n;
    r.acc_err /= n;
    r.persistence /= n;
    r.joint_persistence /= n;
    for (auto& v : r.mpjpe_by_horizon) {
        v /= n;
    }
    r.freeze_rate = freeze_rate(all, options.freeze_epsilon);
    r.best_of_k = best_of_k(chain, samples, truths, options.ks.empty() ? default_ks(r.samples) : options.ks, repr);
    if (r.samples >= 2) {
        const auto cal = calibration(chain, samples, truths, repr);
        r.calibration_rho = cal.rho;
        r.variance_by_horizon.assign(r.t_pred, 0.0);
        for (std::size_t i = 0; i < cal.variance.size(); ++i) {
            r.variance_by_horizon[i % r.t_pred] += cal.variance[i];
        }
        for (auto& v : r.variance_by_horizon) {
            v /= static_cast<double>(samples.size());
        }
    }
    return r;
}

std::string report_json(const MetricsReport& r)
{
    json bok = json::object();
    for (const auto& [k, v] : r.best_of_k) {
        bok[std::to_string(k)] = v;
    }
    json j = {{"format", "sbwm-metrics-report"},
              {"version", 1},
              {"label", r.label},
              {"windows", r.windows},
              {"samples", r.samples},
              {"t_pred", r.t_pred},
              {"representation", r.representation},
              {"mpjpe_mm", r.mpjpe},
              {"vel_err_m_per_frame", r.vel_err},
              {"acc_err_m_per_frame2", r.acc_err},
              {"persistence", r.persistence},
              {"joint_persistence_m_per_frame", r.joint_persistence},
              {"freeze_rate", r.freeze_rate},
              {"best_of_k_mm", bok},
              {"calibration_rho", r.calibration_rho ? json(*r.calibration_rho) : json(nullptr)},
              {"violations", r.violations},
              {"diverged", r.diverged},
              {"mpjpe_by_horizon_mm", r.mpjpe_by_horizon},
              {"variance_by_horizon_m2", r.variance_by_horizon}};
    return j.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text)
{
    try {
        const auto j = json::parse(text);
        if (j.at("format").get<std::string>() != "sbwm-metrics-report") {
            throw bad_input("not a metrics report");
        }
        MetricsReport r;
        r.label = j.at("label").get<std::string>();
        r.windows = j.at("windows").get<std::size_t>();
        r.samples = j.at("samples").get<std::size_t>();
        r.t_pred = j.at("t_pred").get<std::size_t>();
        r.representation = j.at("representation").get<std::string>();
        r.mpjpe = j.at("mpjpe_mm").get<double>();
        r.vel_err = j.at("vel_err_m_per_frame").get<double>();
        r.acc_err = j.at("acc_err_m_per_frame2").get<double>();
        r.persistence = j.at("persistence").get<double>();
        r.joint_persistence = j.at("joint_persistence_m_per_frame").get<double>();
        r.freeze_rate = j.at("freeze_rate").get<double>();
        for (const auto& [k, v] : j.at("best_of_k_mm").items()) {
            r.best_of_k[std::stoul(k)] = v.get<double>();
        }
        if (!j.at("calibration_rho").is_null()) {
            r.calibration_rho = j.at("calibration_rho").get<double>();
        }
        r.violations = j.at("violations").get<std::size_t>();
        r.diverged = j.at("diverged").get<std::size_t>();
        r.mpjpe_by_horizon = j.at("mpjpe_by_horizon_mm").get<std::vector<double>>();
        r.variance_by_horizon = j.at("variance_by_horizon_m2").get<std::vector<double>>();
        return r;
    } catch (const json::exception& e) {
        throw bad_input(std::string("metrics report: ") + e.what());
    }
}

std::string report_csv_header()
{
    std::string h = "label,windows,samples,representation,mpjpe_mm,vel_err,acc_err,persistence,joint_persistence,"
                    "freeze_rate,violations,calibration_rho";
    for (auto k : csv_ks) {
        h += ",bok_" + std::to_string(k);
    }
    return h;
}

std::string report_csv_row(const MetricsReport& r)
{
    std::string row = r.label + ',' + std::to_string(r.windows) + ',' + std::to_string(r.samples) + ',' +
                      r.representation + ',' + num(r.mpjpe) + ',' + num(r.vel_err) + ',' + num(r.acc_err) + ',' +
                      num(r.persistence) + ',' + num(r.joint_persistence) + ',' + num(r.freeze_rate) + ',' +
                      std::to_string(r.violations) + ',' + (r.calibration_rho ? num(*r.calibration_rho) : "");
    for (auto k : csv_ks) {
        auto it = r.best_of_k.find(k);
        row += ',' + (it == r.best_of_k.end() ? std::string() : num(it->second));
    }
    return row;
}

} // namespace sbwm::metrics
