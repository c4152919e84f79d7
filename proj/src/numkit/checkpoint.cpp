#include "sbwm/numkit/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace sbwm::nk {

namespace {

constexpr char magic[8] = {'S', 'B', 'W', 'M', 'C', 'K', 'P', 'T'};

template <class U>
void put(std::vector<std::uint8_t>& out, U value)
{
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        out.push_back(static_cast<std::uint8_t>((value >> (8 * i)) & 0xFFu));
    }
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    template <class U>
    U get()
    {
        need(sizeof(U));
        U value = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            value |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
        }
        pos_ += sizeof(U);
        return value;
    }

    std::string string(std::size_t n)
    {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const
    {
        if (bytes_.size() - pos_ < n) {
            throw bad_input("checkpoint: truncated at byte " + std::to_string(pos_));
        }
    }

    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries)
{
    std::vector<std::uint8_t> out(std::begin(magic), std::end(magic));
    put<std::uint32_t>(out, checkpoint_version);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        if (element_count(e.shape) != e.values.size()) {
            throw ShapeError("checkpoint:" + e.name, e.shape, "value count mismatch");
        }
        put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
        put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) {
            put<std::uint64_t>(out, d);
        }
        for (double v : e.values) {
            put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
        }
    }
    return out;
}

std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes)
{
    if (bytes.size() < sizeof(magic) || std::memcmp(bytes.data(), magic, sizeof(magic)) != 0) {
        throw bad_input("checkpoint: bad magic");
    }
    std::vector<std::uint8_t> body(bytes.begin() + sizeof(magic), bytes.end());
    Reader in(body);
    const auto version = in.get<std::uint32_t>();
    if (version != checkpoint_version) {
        throw bad_input("checkpoint: unsupported version " + std::to_string(version));
    }
    const auto count = in.get<std::uint32_t>();
    std::vector<CheckpointEntry> entries;
    entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        e.name = in.string(in.get<std::uint32_t>());
        const auto rank = in.get<std::uint32_t>();
        for (std::uint32_t r = 0; r < rank; ++r) {
            e.shape.push_back(static_cast<std::size_t>(in.get<std::uint64_t>()));
        }
        e.values.resize(element_count(e.shape));
        for (auto& v : e.values) {
            v = std::bit_cast<double>(in.get<std::uint64_t>());
        }
        entries.push_back(std::move(e));
    }
    if (!in.done()) {
        throw bad_input("checkpoint: trailing bytes");
    }
    return entries;
}

std::vector<CheckpointEntry> snapshot(const ParameterSet& params)
{
    std::vector<CheckpointEntry> entries;
    for (const auto& p : params) {
        entries.push_back({p.name, p.tensor.shape(), p.tensor.to_vector()});
    }
    return entries;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params)
{
    const auto bytes = encode_checkpoint(snapshot(params));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw io_error("cannot write checkpoint " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw io_error("short write to checkpoint " + path.string());
    }
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) {
        throw not_found("checkpoint not found: " + path.string());
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw io_error("cannot open checkpoint " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_checkpoint(bytes);
    } catch (const Error& e) {
        throw Error(e.category(), path.string() + ": " + e.what());
    }
}

void restore(const std::vector<CheckpointEntry>& entries, ParameterSet& params)
{
    if (entries.size() != params.size()) {
        throw bad_input("checkpoint holds " + std::to_string(entries.size()) + " parameters, model expects " +
                        std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        auto tensor = params[i].tensor;
        if (e.name != params[i].name) {
            throw bad_input("checkpoint entry " + std::to_string(i) + " is '" + e.name + "', expected '" +
                            params[i].name + "'");
        }
        if (e.shape != tensor.shape()) {
            throw ShapeError("checkpoint:" + e.name, e.shape, tensor.shape());
        }
        std::copy(e.values.begin(), e.values.end(), tensor.mutable_data().begin());
    }
}

void load_checkpoint(const std::filesystem::path& path, ParameterSet& params)
{
    restore(read_checkpoint(path), params);
}

} // namespace sbwm::nk
