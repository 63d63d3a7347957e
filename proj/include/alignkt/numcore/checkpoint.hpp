#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "alignkt/numcore/params.hpp"

// Checkpoint container, all integers little-endian:
//
//   magic        8 bytes  "AKTCKPT1"
//   manifest     u64 length + UTF-8 text (key=value lines)
//   count        u32 number of arrays
//   per array    u32 name length, name bytes,
//                u32 rank, rank x u64 dims,
//                product(dims) x f64 (IEEE-754 binary64, little-endian)

namespace alignkt::nc {

inline constexpr char kCheckpointMagic[8] = {'A', 'K', 'T', 'C', 'K', 'P', 'T', '1'};

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class Reader {
public:
    explicit Reader(std::string buf) : buf_(std::move(buf)) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        if constexpr (std::endian::native == std::endian::big)
            for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
        T v;
        std::memcpy(&v, bytes, sizeof(T));
        return v;
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) throw std::runtime_error("checkpoint: truncated file");
    }
    std::string buf_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace detail

struct CheckpointArray {
    std::string name;
    Array value;
};

struct Checkpoint {
    std::string manifest;
    std::vector<CheckpointArray> arrays;
};

inline std::string encode_checkpoint(const ParamStore& params, const std::string& manifest) {
    std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put_le<std::uint64_t>(out, manifest.size());
    out += manifest;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& e : params.entries()) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
        out += e.name;
        const auto& v = e.tensor.value();
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.rank()));
        for (auto d : v.shape()) detail::put_le<std::uint64_t>(out, d);
        for (double x : v.data()) detail::put_le<double>(out, x);
    }
    return out;
}

inline Checkpoint decode_checkpoint(std::string bytes) {
    detail::Reader rd(std::move(bytes));
    if (rd.bytes(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic)))
        throw std::runtime_error("checkpoint: bad magic");
    Checkpoint ck;
    ck.manifest = rd.bytes(rd.get<std::uint64_t>());
    const auto count = rd.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointArray a;
        a.name = rd.bytes(rd.get<std::uint32_t>());
        const auto rank = rd.get<std::uint32_t>();
        Shape shape(rank);
        for (auto& d : shape) d = rd.get<std::uint64_t>();
        std::vector<double> data(shape_size(shape));
        for (auto& x : data) x = rd.get<double>();
        a.value = Array(std::move(shape), std::move(data));
        ck.arrays.push_back(std::move(a));
    }
    if (!rd.done()) throw std::runtime_error("checkpoint: trailing bytes");
    return ck;
}

inline void save_checkpoint(const std::string& path, const ParamStore& params, const std::string& manifest) {
    detail::write_file(path, encode_checkpoint(params, manifest));
}

inline Checkpoint read_checkpoint(const std::string& path) { return decode_checkpoint(detail::read_file(path)); }

// Copies arrays into an already-built store; every name and shape must match.
inline void load_into(ParamStore& params, const Checkpoint& ck) {
    if (ck.arrays.size() != params.size())
        throw std::runtime_error("checkpoint: holds " + std::to_string(ck.arrays.size()) + " arrays, model expects " +
                                 std::to_string(params.size()));
    for (const auto& a : ck.arrays) {
        auto& t = params.get(a.name);
        if (t.shape() != a.value.shape())
            throw std::runtime_error("checkpoint: shape mismatch for '" + a.name + "': " + shape_str(a.value.shape()) +
                                     " vs " + shape_str(t.shape()));
        t.mutable_value() = a.value;
    }
}

}  // namespace alignkt::nc
