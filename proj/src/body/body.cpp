#include "sbwm/body.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace sbwm::body {

namespace {

// Forward-mode dual number; used to differentiate FK exactly.
struct Dual {
    double v = 0.0;
    double d = 0.0;
};

Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
Dual operator/(Dual a, Dual b) { return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)}; }
Dual sin(Dual a) { return {std::sin(a.v), a.d * std::cos(a.v)}; }
Dual cos(Dual a) { return {std::cos(a.v), -a.d * std::sin(a.v)}; }
Dual sqrt(Dual a)
{
    const double s = std::sqrt(a.v);
    return {s, a.d / (2.0 * s)};
}
double value_of(Dual a) { return a.v; }

double value_of(double a) { return a; }

template <class T>
T constant(double x)
{
    return T{x};
}

constexpr double small_angle_sq = 1e-16; // (1e-8)^2

template <class T>
using Mat3 = std::array<T, 9>;

template <class T>
Mat3<T> rodrigues_t(const T& wx, const T& wy, const T& wz)
{
    using std::cos;
    using std::sin;
    using std::sqrt;
    const T theta_sq = wx * wx + wy * wy + wz * wz;
    T a; // sin(theta) / theta
    T b; // (1 - cos(theta)) / theta^2
    if (value_of(theta_sq) < small_angle_sq) {
        a = constant<T>(1.0) - theta_sq / constant<T>(6.0);
        b = constant<T>(0.5) - theta_sq / constant<T>(24.0);
    } else {
        const T theta = sqrt(theta_sq);
        a = sin(theta) / theta;
        b = (constant<T>(1.0) - cos(theta)) / theta_sq;
    }
    // R = I + a K + b K^2, K = skew(w); K^2 = w w^T - |w|^2 I.
    const T one = constant<T>(1.0);
    Mat3<T> r;
    r[0] = one + b * (wx * wx - theta_sq);
    r[1] = b * wx * wy - a * wz;
    r[2] = b * wx * wz + a * wy;
    r[3] = b * wx * wy + a * wz;
    r[4] = one + b * (wy * wy - theta_sq);
    r[5] = b * wy * wz - a * wx;
    r[6] = b * wx * wz - a * wy;
    r[7] = b * wy * wz + a * wx;
    r[8] = one + b * (wz * wz - theta_sq);
    return r;
}

template <class T>
Mat3<T> matmul3(const Mat3<T>& x, const Mat3<T>& y)
{
    Mat3<T> out;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            out[i * 3 + j] = x[i * 3] * y[j] + x[i * 3 + 1] * y[3 + j] + x[i * 3 + 2] * y[6 + j];
        }
    }
    return out;
}

// pose and joints hold T; joints is resized to 3J.
template <class T>
void fk_impl(const BodyChain& chain, const std::vector<T>& pose, std::vector<T>& joints)
{
    const auto count = chain.joint_count();
    std::vector<Mat3<T>> rot(count);
    joints.assign(3 * count, constant<T>(0.0));
    rot[0] = rodrigues_t(pose[3], pose[4], pose[5]);
    joints[0] = pose[0];
    joints[1] = pose[1];
    joints[2] = pose[2];
    for (std::size_t j = 1; j < count; ++j) {
        const auto p = static_cast<std::size_t>(chain.parent[j]);
        const auto base = 6 + 3 * (j - 1);
        rot[j] = matmul3(rot[p], rodrigues_t(pose[base], pose[base + 1], pose[base + 2]));
        const auto& dir = chain.rest_direction[j];
        const double len = chain.bone_length[j];
        for (int i = 0; i < 3; ++i) {
            const auto& r = rot[j];
            T offset = r[i * 3] * constant<T>(len * dir[0]) + r[i * 3 + 1] * constant<T>(len * dir[1]) +
                       r[i * 3 + 2] * constant<T>(len * dir[2]);
            joints[3 * j + i] = joints[3 * p + i] + offset;
        }
    }
}

void check_pose(const BodyChain& chain, std::size_t dim)
{
    if (dim != chain.param_dim()) {
        throw bad_input("forward_kinematics: pose has dimension " + std::to_string(dim) + ", chain expects " +
                        std::to_string(chain.param_dim()));
    }
}

} // namespace

std::size_t BodyChain::index_of(const std::string& name) const
{
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) {
            return i;
        }
    }
    throw not_found("no joint named '" + name + "'");
}

void validate(const BodyChain& chain)
{
    const auto count = chain.joint_count();
    if (count == 0) {
        throw bad_input("chain: no joints");
    }
    if (chain.names.size() != count || chain.bone_length.size() != count || chain.rest_direction.size() != count) {
        throw bad_input("chain: per-joint arrays differ in length");
    }
    if (chain.parent[0] != -1) {
        throw bad_input("chain: joint 0 must be the root");
    }
    for (std::size_t j = 1; j < count; ++j) {
        if (chain.parent[j] < 0 || static_cast<std::size_t>(chain.parent[j]) >= j) {
            throw bad_input("chain: joint '" + chain.names[j] + "' has parent " + std::to_string(chain.parent[j]) +
                            "; parents must precede children");
        }
        if (!(chain.bone_length[j] > 0.0)) {
            throw bad_input("chain: joint '" + chain.names[j] + "' has non-positive bone length");
        }
        const auto& d = chain.rest_direction[j];
        const double norm = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        if (std::abs(norm - 1.0) > 1e-9) {
            throw bad_input("chain: joint '" + chain.names[j] + "' rest direction is not unit length");
        }
    }
}

BodyChain default_chain()
{
    struct Spec {
        const char* name;
        int parent;
        double length;
        Vec3 dir;
    };
    // Bone lengths in meters.
    static const Spec specs[] = {
        {"pelvis", -1, 0.0, {0, 0, 0}},
        {"spine", 0, 0.50, {0, 0, 1}},
        {"head", 1, 0.25, {0, 0, 1}},
        {"l_hip", 0, 0.10, {0, 1, 0}},
        {"l_knee", 3, 0.45, {0, 0, -1}},
        {"l_ankle", 4, 0.42, {0, 0, -1}},
        {"r_hip", 0, 0.10, {0, -1, 0}},
        {"r_knee", 6, 0.45, {0, 0, -1}},
        {"r_ankle", 7, 0.42, {0, 0, -1}},
        {"l_clavicle", 1, 0.05, {0, 1, 0}},
        {"l_shoulder", 9, 0.15, {0, 1, 0}},
        {"l_elbow", 10, 0.28, {0, 0, -1}},
        {"l_wrist", 11, 0.25, {0, 0, -1}},
        {"r_clavicle", 1, 0.05, {0, -1, 0}},
        {"r_shoulder", 13, 0.15, {0, -1, 0}},
        {"r_elbow", 14, 0.28, {0, 0, -1}},
        {"r_wrist", 15, 0.25, {0, 0, -1}},
    };
    BodyChain chain;
    for (const auto& s : specs) {
        chain.names.emplace_back(s.name);
        chain.parent.push_back(s.parent);
        chain.bone_length.push_back(s.length);
        chain.rest_direction.push_back(s.dir);
    }
    return chain;
}

std::string chain_to_json(const BodyChain& chain)
{
    nlohmann::json doc;
    doc["format"] = "sbwm-chain";
    doc["version"] = 1;
    auto& joints = doc["joints"];
    joints = nlohmann::json::array();
    for (std::size_t j = 0; j < chain.joint_count(); ++j) {
        joints.push_back({{"name", chain.names[j]},
                          {"parent", chain.parent[j]},
                          {"bone_length", chain.bone_length[j]},
                          {"rest_direction", chain.rest_direction[j]}});
    }
    return doc.dump(2);
}

BodyChain chain_from_json(const std::string& text)
{
    BodyChain chain;
    try {
        const auto doc = nlohmann::json::parse(text);
        for (const auto& j : doc.at("joints")) {
            chain.names.push_back(j.at("name").get<std::string>());
            chain.parent.push_back(j.at("parent").get<int>());
            chain.bone_length.push_back(j.at("bone_length").get<double>());
            chain.rest_direction.push_back(j.at("rest_direction").get<Vec3>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw bad_input(std::string("chain json: ") + e.what());
    }
    validate(chain);
    return chain;
}

BodyChain load_chain(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw not_found("chain file not found: " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return chain_from_json(buffer.str());
}

void save_chain(const std::filesystem::path& path, const BodyChain& chain)
{
    std::ofstream out(path);
    if (!out) {
        throw io_error("cannot write chain file " + path.string());
    }
    out << chain_to_json(chain) << '\n';
}

std::array<double, 9> rodrigues(const Vec3& w)
{
    return rodrigues_t<double>(w[0], w[1], w[2]);
}

std::vector<double> forward_kinematics(const BodyChain& chain, std::span<const double> pose)
{
    check_pose(chain, pose.size());
    std::vector<double> p(pose.begin(), pose.end());
    std::vector<double> joints;
    fk_impl(chain, p, joints);
    return joints;
}

std::vector<double> fk_jacobian(const BodyChain& chain, std::span<const double> pose)
{
    check_pose(chain, pose.size());
    const auto dim = pose.size();
    const auto out_dim = chain.joint_space_dim();
    std::vector<double> jac(out_dim * dim);
    std::vector<Dual> p(dim);
    std::vector<Dual> joints;
    for (std::size_t i = 0; i < dim; ++i) {
        p[i] = {pose[i], 0.0};
    }
    for (std::size_t k = 0; k < dim; ++k) {
        p[k].d = 1.0;
        fk_impl(chain, p, joints);
        for (std::size_t r = 0; r < out_dim; ++r) {
            jac[r * dim + k] = joints[r].d;
        }
        p[k].d = 0.0;
    }
    return jac;
}

nk::Tensor forward_kinematics(const BodyChain& chain, const nk::Tensor& poses)
{
    if (poses.rank() != 2) {
        throw nk::ShapeError("forward_kinematics", poses.shape(), "expected [batch, param_dim]");
    }
    check_pose(chain, poses.dim(1));
    const auto batch = poses.dim(0);
    const auto dim = poses.dim(1);
    const auto out_dim = chain.joint_space_dim();
    std::vector<double> out(batch * out_dim);
    for (std::size_t b = 0; b < batch; ++b) {
        auto joints = forward_kinematics(chain, poses.data().subspan(b * dim, dim));
        std::copy(joints.begin(), joints.end(), out.begin() + static_cast<std::ptrdiff_t>(b * out_dim));
    }
    auto* tape = nk::Tape::active();
    const bool record = tape != nullptr && poses.requires_grad();
    auto result = nk::Tensor::from({batch, out_dim}, std::move(out), record);
    if (record) {
        auto in = poses.node();
        auto on = result.node();
        tape->record({"forward_kinematics", {in}, on, [chain, in = in.get(), on = on.get(), batch, dim, out_dim]() {
                          auto gin = in->grad_buffer();
                          for (std::size_t b = 0; b < batch; ++b) {
                              std::span<const double> pose(in->value.data() + b * dim, dim);
                              const auto jac = fk_jacobian(chain, pose);
                              for (std::size_t r = 0; r < out_dim; ++r) {
                                  const double g = on->grad[b * out_dim + r];
                                  for (std::size_t k = 0; k < dim; ++k) {
                                      gin[b * dim + k] += g * jac[r * dim + k];
                                  }
                              }
                          }
                      }});
    }
    return result;
}

double max_bone_length_deviation(const BodyChain& chain, std::span<const double> joints)
{
    double worst = 0.0;
    for (std::size_t j = 1; j < chain.joint_count(); ++j) {
        const auto p = static_cast<std::size_t>(chain.parent[j]);
        double sq = 0.0;
        for (int i = 0; i < 3; ++i) {
            const double d = joints[3 * j + i] - joints[3 * p + i];
            sq += d * d;
        }
        worst = std::max(worst, std::abs(std::sqrt(sq) - chain.bone_length[j]));
    }
    return worst;
}

std::size_t bone_length_violations(const BodyChain& chain, std::span<const double> joints, double tol)
{
    if (joints.size() != chain.joint_space_dim()) {
        throw bad_input("bone_length_violations: expected " + std::to_string(chain.joint_space_dim()) +
                        " coordinates, got " + std::to_string(joints.size()));
    }
    std::size_t count = 0;
    for (std::size_t j = 1; j < chain.joint_count(); ++j) {
        const auto p = static_cast<std::size_t>(chain.parent[j]);
        double sq = 0.0;
        for (int i = 0; i < 3; ++i) {
            const double d = joints[3 * j + i] - joints[3 * p + i];
            sq += d * d;
        }
        if (std::abs(std::sqrt(sq) - chain.bone_length[j]) > tol * chain.bone_length[j]) {
            ++count;
        }
    }
    return count;
}

} // namespace sbwm::body
