#include "sbwm/data.hpp"

#include "json.hpp"

#include <spdlog/spdlog.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

// CSV, version 1:
//
//   # sbwm-motion-csv 1
//   # dim=<D> fps=<fps> representation=<manifold|joint_space>
//   # sequence id=<id> branch=<frame or -1>
//   <frame index>,<x_0>,...,<x_{D-1}>
//   ...
//
// NDJSON, version 1: one object per line, distinguished by "type":
//
//   {"type":"header","format":"sbwm-motion-ndjson","version":1,"dim":D,"fps":F,"representation":"manifold"}
//   {"type":"sequence","id":"gait-0000","branch_frame":-1}
//   {"type":"frame","frame":0,"x":[...]}
//
// Frames of a sequence follow its sequence record, indices 0, 1, 2, ...

namespace sbwm::data {

namespace {

constexpr const char* csv_magic = "# sbwm-motion-csv 1";
constexpr const char* ndjson_format = "sbwm-motion-ndjson";

std::string format_double(double v)
{
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

Error line_error(std::size_t line, const std::string& what)
{
    return bad_input("line " + std::to_string(line) + ": " + what);
}

double parse_double(std::string_view field, std::size_t line)
{
    double v = 0.0;
    auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size() || !std::isfinite(v)) {
        throw line_error(line, "malformed number '" + std::string(field) + "'");
    }
    return v;
}

long parse_long(std::string_view field, std::size_t line)
{
    long v = 0;
    auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
        throw line_error(line, "malformed integer '" + std::string(field) + "'");
    }
    return v;
}

// "key=value key=value" after a leading tag.
std::map<std::string, std::string> key_values(std::string_view text)
{
    std::map<std::string, std::string> out;
    std::istringstream in{std::string(text)};
    std::string token;
    while (in >> token) {
        auto eq = token.find('=');
        if (eq != std::string::npos) {
            out[token.substr(0, eq)] = token.substr(eq + 1);
        }
    }
    return out;
}

struct Header {
    std::size_t dim = 0;
    double fps = 30.0;
    Representation representation = Representation::manifold;
};

void check_dim(std::size_t found, std::size_t expected, std::size_t line)
{
    if (expected != 0 && found != expected) {
        throw line_error(line, "dimension mismatch: expected D=" + std::to_string(expected) + ", found D=" +
                                   std::to_string(found));
    }
}

void finish(Ingested& result)
{
    for (const auto& s : result.sequences) {
        try {
            validate(s);
        } catch (const Error& e) {
            throw bad_input("sequence '" + s.id + "': " + e.what());
        }
    }
    if (result.sequences.empty()) {
        result.warnings.emplace_back("no sequences found");
    }
    for (const auto& w : result.warnings) {
        spdlog::warn("ingest: {}", w);
    }
}

Ingested ingest_csv(const std::string& text, std::size_t expected_dim)
{
    Ingested result;
    std::istringstream in(text);
    std::string raw;
    std::size_t line = 0;
    bool have_magic = false;
    bool have_header = false;
    Header header;
    while (std::getline(in, raw)) {
        ++line;
        std::string_view s(raw);
        if (!s.empty() && s.back() == '\r') {
            s.remove_suffix(1);
        }
        if (s.empty()) {
            continue;
        }
        if (s.front() == '#') {
            if (s == csv_magic) {
                have_magic = true;
                continue;
            }
            auto body = s.substr(1);
            while (!body.empty() && body.front() == ' ') {
                body.remove_prefix(1);
            }
            if (body.starts_with("sequence")) {
                if (!have_header) {
                    throw line_error(line, "sequence before header");
                }
                auto kv = key_values(body.substr(8));
                MotionSequence seq;
                seq.id = kv.count("id") ? kv["id"] : "seq-" + std::to_string(result.sequences.size());
                seq.fps = kv.count("fps") ? parse_double(kv["fps"], line) : header.fps;
                seq.branch_frame = kv.count("branch") ? static_cast<int>(parse_long(kv["branch"], line)) : -1;
                seq.dim = header.dim;
                seq.representation = header.representation;
                result.sequences.push_back(std::move(seq));
            } else if (body.starts_with("dim=")) {
                auto kv = key_values(body);
                header.dim = static_cast<std::size_t>(parse_long(kv["dim"], line));
                if (kv.count("fps")) {
                    header.fps = parse_double(kv["fps"], line);
                }
                if (kv.count("representation")) {
                    header.representation = parse_representation(kv["representation"]);
                }
                check_dim(header.dim, expected_dim, line);
                have_header = true;
            }
            continue;
        }
        if (!have_magic || !have_header) {
            throw line_error(line, "data row before the '" + std::string(csv_magic) + "' and dim= header lines");
        }
        if (result.sequences.empty()) {
            throw line_error(line, "data row before any '# sequence' line");
        }
        auto& seq = result.sequences.back();
        std::vector<std::string_view> fields;
        std::size_t pos = 0;
        while (true) {
            auto comma = s.find(',', pos);
            fields.push_back(s.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
            if (comma == std::string_view::npos) {
                break;
            }
            pos = comma + 1;
        }
        if (fields.size() != header.dim + 1) {
            throw line_error(line, "expected " + std::to_string(header.dim + 1) + " columns, found " +
                                       std::to_string(fields.size()));
        }
        const long frame = parse_long(fields[0], line);
        if (frame != static_cast<long>(seq.length())) {
            throw line_error(line, "frame index " + std::to_string(frame) + " out of sequence (expected " +
                                       std::to_string(seq.length()) + ")");
        }
        for (std::size_t i = 1; i < fields.size(); ++i) {
            seq.frames.push_back(parse_double(fields[i], line));
        }
    }
    finish(result);
    return result;
}

Ingested ingest_ndjson(const std::string& text, std::size_t expected_dim)
{
    Ingested result;
    std::istringstream in(text);
    std::string raw;
    std::size_t line = 0;
    bool have_header = false;
    Header header;
    while (std::getline(in, raw)) {
        ++line;
        if (raw.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(raw);
            const auto type = rec.at("type").get<std::string>();
            if (type == "header") {
                if (rec.at("format").get<std::string>() != ndjson_format || rec.at("version").get<int>() != 1) {
                    throw line_error(line, "unsupported format header");
                }
                header.dim = rec.at("dim").get<std::size_t>();
                header.fps = rec.value("fps", 30.0);
                header.representation = parse_representation(rec.value("representation", std::string("manifold")));
                check_dim(header.dim, expected_dim, line);
                have_header = true;
            } else if (!have_header) {
                throw line_error(line, "record before header");
            } else if (type == "sequence") {
                MotionSequence seq;
                seq.id = rec.at("id").get<std::string>();
                seq.fps = rec.value("fps", header.fps);
                seq.branch_frame = rec.value("branch_frame", -1);
                seq.dim = header.dim;
                seq.representation = header.representation;
                result.sequences.push_back(std::move(seq));
            } else if (type == "frame") {
                if (result.sequences.empty()) {
                    throw line_error(line, "frame before any sequence record");
                }
                auto& seq = result.sequences.back();
                const auto frame = rec.at("frame").get<long>();
                if (frame != static_cast<long>(seq.length())) {
                    throw line_error(line, "frame index " + std::to_string(frame) + " out of sequence");
                }
                const auto& x = rec.at("x");
                if (!x.is_array() || x.size() != header.dim) {
                    throw line_error(line, "expected " + std::to_string(header.dim) + " values");
                }
                for (const auto& v : x) {
                    if (!v.is_number() || !std::isfinite(v.get<double>())) {
                        throw line_error(line, "non-numeric or non-finite value");
                    }
                    seq.frames.push_back(v.get<double>());
                }
            } else {
                throw line_error(line, "unknown record type '" + type + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw line_error(line, std::string("malformed record: ") + e.what());
        }
    }
    finish(result);
    return result;
}

std::string read_file(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) {
        throw not_found("motion file not found: " + path.string());
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw io_error("cannot open " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

} // namespace

std::string_view to_string(Representation r)
{
    return r == Representation::manifold ? "manifold" : "joint_space";
}

Representation parse_representation(std::string_view text)
{
    if (text == "manifold") {
        return Representation::manifold;
    }
    if (text == "joint_space" || text == "joint-space" || text == "joints") {
        return Representation::joint_space;
    }
    throw bad_input("unknown representation '" + std::string(text) + "'");
}

FileFormat parse_file_format(std::string_view text)
{
    if (text == "csv") {
        return FileFormat::csv;
    }
    if (text == "ndjson" || text == "jsonl") {
        return FileFormat::ndjson;
    }
    throw bad_input("unknown file format '" + std::string(text) + "'");
}

FileFormat format_from_extension(const std::filesystem::path& path)
{
    const auto ext = path.extension().string();
    if (ext == ".csv") {
        return FileFormat::csv;
    }
    if (ext == ".ndjson" || ext == ".jsonl") {
        return FileFormat::ndjson;
    }
    throw bad_input("cannot infer motion file format from '" + path.string() + "'");
}

void validate(const MotionSequence& seq)
{
    if (seq.dim == 0 || seq.frames.size() % seq.dim != 0) {
        throw bad_input("sequence '" + seq.id + "': frame buffer does not match dim");
    }
    if (seq.length() < 2) {
        throw bad_input("sequence '" + seq.id + "': needs at least 2 frames");
    }
    for (double v : seq.frames) {
        if (!std::isfinite(v)) {
            throw bad_input("sequence '" + seq.id + "': non-finite value");
        }
    }
}

Ingested ingest_text(const std::string& text, FileFormat format, std::size_t expected_dim)
{
    return format == FileFormat::csv ? ingest_csv(text, expected_dim) : ingest_ndjson(text, expected_dim);
}

Ingested ingest(const std::filesystem::path& path, FileFormat format, std::size_t expected_dim)
{
    const auto text = read_file(path);
    try {
        return ingest_text(text, format, expected_dim);
    } catch (const Error& e) {
        throw Error(e.category(), path.string() + ": " + e.what());
    }
}

std::string export_text(const std::vector<MotionSequence>& seqs, FileFormat format)
{
    std::ostringstream out;
    const std::size_t dim = seqs.empty() ? 0 : seqs.front().dim;
    const double fps = seqs.empty() ? 30.0 : seqs.front().fps;
    const auto repr = seqs.empty() ? Representation::manifold : seqs.front().representation;
    for (const auto& s : seqs) {
        if (s.dim != dim || s.representation != repr) {
            throw bad_input("export: sequences differ in dimension or representation");
        }
    }
    if (format == FileFormat::csv) {
        out << csv_magic << '\n';
        out << "# dim=" << dim << " fps=" << format_double(fps) << " representation=" << to_string(repr) << '\n';
        for (const auto& s : seqs) {
            out << "# sequence id=" << s.id << " branch=" << s.branch_frame << " fps=" << format_double(s.fps)
                << '\n';
            for (std::size_t t = 0; t < s.length(); ++t) {
                out << t;
                for (double v : s.frame(t)) {
                    out << ',' << format_double(v);
                }
                out << '\n';
            }
        }
        return out.str();
    }
    nlohmann::json header = {{"type", "header"},           {"format", ndjson_format}, {"version", 1},
                             {"dim", dim},                 {"fps", fps},
                             {"representation", to_string(repr)}};
    out << header.dump() << '\n';
    for (const auto& s : seqs) {
        nlohmann::json rec = {{"type", "sequence"}, {"id", s.id}, {"fps", s.fps}, {"branch_frame", s.branch_frame}};
        out << rec.dump() << '\n';
        for (std::size_t t = 0; t < s.length(); ++t) {
            auto f = s.frame(t);
            nlohmann::json fr = {{"type", "frame"}, {"frame", t}, {"x", std::vector<double>(f.begin(), f.end())}};
            out << fr.dump() << '\n';
        }
    }
    return out.str();
}

void export_sequences(const std::filesystem::path& path, const std::vector<MotionSequence>& seqs, FileFormat format)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw io_error("cannot write " + path.string());
    }
    out << export_text(seqs, format);
    if (!out) {
        throw io_error("short write to " + path.string());
    }
}

} // namespace sbwm::data
