#pragma once
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "nkd/nets.hpp"
#include "nkd/rng.hpp"

// "DKCK" checkpoint files. Byte layout (everything little-endian, see
// docs/checkpoint_format.md for the normative description):
//   magic "DKCK" | version u32 | spec-hash u64 (FNV-1a of the spec string)
//   | spec-string (u32 length + bytes) | channel count u32
//   | per channel: mean f64, std f64 | param count u32
//   | per param: name (u32 length + bytes), ndims u32, dims u32...,
//     values f64...

namespace nkd {

struct Checkpoint {
    NetSpec spec;
    ParamSet params;
    Vec norm_mean, norm_std; // per input channel
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& os, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(os, v);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw FormatError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double get_f64(std::istream& is) {
    std::uint64_t v = get_u64(is);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

inline std::string get_string(std::istream& is) {
    std::uint32_t n = get_u32(is);
    if (n > (1u << 20)) throw FormatError("checkpoint: implausible string length");
    std::string s(n, '\0');
    if (n && !is.read(s.data(), n)) throw FormatError("checkpoint: truncated string");
    return s;
}

} // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("checkpoint: cannot open " + path + " for writing");
    os.write("DKCK", 4);
    detail::put_u32(os, 1);
    std::string spec_text = ck.spec.canonical();
    detail::put_u64(os, fnv1a64(spec_text));
    detail::put_u32(os, static_cast<std::uint32_t>(spec_text.size()));
    os.write(spec_text.data(), static_cast<std::streamsize>(spec_text.size()));
    if (ck.norm_mean.size() != ck.norm_std.size())
        throw UsageError("checkpoint: mean/std channel count mismatch");
    detail::put_u32(os, static_cast<std::uint32_t>(ck.norm_mean.size()));
    for (std::size_t c = 0; c < ck.norm_mean.size(); ++c) {
        detail::put_f64(os, ck.norm_mean[c]);
        detail::put_f64(os, ck.norm_std[c]);
    }
    detail::put_u32(os, static_cast<std::uint32_t>(ck.params.entries.size()));
    for (const auto& e : ck.params.entries) {
        detail::put_u32(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::put_u32(os, static_cast<std::uint32_t>(e.shape.size()));
        for (int d : e.shape) detail::put_u32(os, static_cast<std::uint32_t>(d));
        for (double v : e.values) detail::put_f64(os, v);
    }
    if (!os) throw FormatError("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("checkpoint: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "DKCK", 4) != 0)
        throw FormatError("checkpoint: bad magic in " + path);
    std::uint32_t version = detail::get_u32(is);
    if (version != 1) throw FormatError("checkpoint: unsupported version");
    std::uint64_t stored_hash = detail::get_u64(is);
    std::string spec_text = detail::get_string(is);
    if (fnv1a64(spec_text) != stored_hash) throw FormatError("checkpoint: spec hash mismatch");

    Checkpoint ck;
    ck.spec = NetSpec::from_canonical(spec_text);
    std::uint32_t channels = detail::get_u32(is);
    ck.norm_mean.resize(channels);
    ck.norm_std.resize(channels);
    for (std::uint32_t c = 0; c < channels; ++c) {
        ck.norm_mean[c] = detail::get_f64(is);
        ck.norm_std[c] = detail::get_f64(is);
    }
    std::uint32_t count = detail::get_u32(is);
    for (std::uint32_t p = 0; p < count; ++p) {
        std::string name = detail::get_string(is);
        std::uint32_t ndims = detail::get_u32(is);
        if (ndims > 8) throw FormatError("checkpoint: implausible rank");
        std::vector<int> shape(ndims);
        for (auto& d : shape) d = static_cast<int>(detail::get_u32(is));
        auto& entry = ck.params.add(name, shape);
        for (double& v : entry.values) v = detail::get_f64(is);
    }
    if (!is) throw FormatError("checkpoint: truncated parameter data");
    return ck;
}

} // namespace nkd
