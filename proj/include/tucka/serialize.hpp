#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>

#include "tucka/adapter.hpp"
#include "tucka/errors.hpp"

namespace tucka {

// Adapter files are little-endian and fixed-layout:
//   8 bytes magic "TUCKADPT"
//   u32 format version (currently 1)
//   u64 d, d_out, r, p, t, k
//   f64 alpha, u8 normalize
//   f64[k*p*r*r] cores, f64[t*p] factor_c, f64[d*r] factor_u (row-major)
inline constexpr char kAdapterMagic[8] = {'T', 'U', 'C', 'K', 'A', 'D', 'P', 'T'};
inline constexpr std::uint32_t kAdapterFormatVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "adapter serialization assumes a little-endian host");

namespace detail {

template <class T>
void write_pod(std::ostream& os, const T& value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
    T value{};
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!is) throw IoError("adapter stream ended mid-field");
    return value;
}

inline void write_doubles(std::ostream& os, const std::vector<double>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline void read_doubles(std::istream& is, std::vector<double>& v) {
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!is) throw IoError("adapter stream ended mid-array");
}

}  // namespace detail

inline void save_adapter(const TuckaAdapter& a, std::ostream& os) {
    a.config.validate();
    os.write(kAdapterMagic, sizeof(kAdapterMagic));
    detail::write_pod(os, kAdapterFormatVersion);
    for (std::uint64_t v : {a.config.d, a.config.d_out, a.config.r, a.config.p, a.config.t,
                            a.config.k})
        detail::write_pod(os, v);
    detail::write_pod(os, a.config.alpha);
    detail::write_pod(os, static_cast<std::uint8_t>(a.config.normalize ? 1 : 0));
    detail::write_doubles(os, a.cores.data());
    detail::write_doubles(os, a.factor_c.data());
    detail::write_doubles(os, a.factor_u.data());
    if (!os) throw IoError("adapter write failed");
}

[[nodiscard]] inline TuckaAdapter load_adapter(std::istream& is) {
    char magic[sizeof(kAdapterMagic)];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kAdapterMagic, sizeof(magic)) != 0)
        throw IoError("not an adapter file (bad magic)");
    const auto version = detail::read_pod<std::uint32_t>(is);
    if (version != kAdapterFormatVersion)
        throw IoError("unsupported adapter format version " + std::to_string(version));

    AdapterConfig config;
    config.d = detail::read_pod<std::uint64_t>(is);
    config.d_out = detail::read_pod<std::uint64_t>(is);
    config.r = detail::read_pod<std::uint64_t>(is);
    config.p = detail::read_pod<std::uint64_t>(is);
    config.t = detail::read_pod<std::uint64_t>(is);
    config.k = detail::read_pod<std::uint64_t>(is);
    config.alpha = detail::read_pod<double>(is);
    config.normalize = detail::read_pod<std::uint8_t>(is) != 0;
    config.validate();

    TuckaAdapter a;
    a.config = config;
    a.cores = Tensor4(config.k, config.p, config.r, config.r);
    a.factor_c = Matrix(config.t, config.p);
    a.factor_u = Matrix(config.d, config.r);
    detail::read_doubles(is, a.cores.data());
    detail::read_doubles(is, a.factor_c.data());
    detail::read_doubles(is, a.factor_u.data());
    return a;
}

inline void save_adapter_file(const TuckaAdapter& a, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    save_adapter(a, os);
}

[[nodiscard]] inline TuckaAdapter load_adapter_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return load_adapter(is);
}

}  // namespace tucka
