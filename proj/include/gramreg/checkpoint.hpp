#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "gramreg/errors.hpp"
#include "gramreg/network.hpp"

namespace gramreg {

// Binary layout: magic "GRAMREG1", version byte, precision byte ('f'/'d'),
// the network spec, epoch counter, RNG state, then named parameter blocks.
// All integers and IEEE-754 payloads are little-endian.

inline constexpr char kCheckpointMagic[8] = {'G', 'R', 'A', 'M', 'R', 'E', 'G', '1'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace detail {

inline void put_bytes(std::ostream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void put_u8(std::ostream& out, std::uint8_t v) { put_bytes(out, &v, 1); }

inline void put_u32(std::ostream& out, std::uint32_t v) { put_bytes(out, &v, 4); }

inline void put_u64(std::ostream& out, std::uint64_t v) { put_bytes(out, &v, 8); }

inline void put_string(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    put_bytes(out, s.data(), s.size());
}

template <typename T>
void put_tensor(std::ostream& out, const Tensor<T>& t) {
    put_u8(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u64(out, d);
    put_bytes(out, t.data().data(), t.numel() * sizeof(T));
}

struct Reader {
    std::istream& in;
    std::string file;

    void bytes(void* p, std::size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (in.gcount() != static_cast<std::streamsize>(n))
            throw FormatError(file + ": truncated checkpoint");
    }
    std::uint8_t u8() {
        std::uint8_t v;
        bytes(&v, 1);
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        bytes(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        bytes(&v, 8);
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        if (n > (1u << 20)) throw FormatError(file + ": unreasonable string length");
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    template <typename T>
    Tensor<T> tensor() {
        const std::uint8_t rank = u8();
        if (rank > 8) throw FormatError(file + ": unreasonable tensor rank");
        std::vector<std::size_t> shape;
        std::size_t numel = 1;
        for (std::uint8_t i = 0; i < rank; ++i) {
            shape.push_back(static_cast<std::size_t>(u64()));
            numel *= shape.back();
            if (numel > (1ull << 32)) throw FormatError(file + ": unreasonable tensor size");
        }
        if (rank == 0) return Tensor<T>{};
        Tensor<T> t(shape);
        bytes(t.data().data(), t.numel() * sizeof(T));
        return t;
    }
};

inline void put_spec(std::ostream& out, const NetworkSpec& s) {
    put_u8(out, static_cast<std::uint8_t>(s.architecture));
    put_u64(out, s.views);
    put_u64(out, s.input_channels);
    put_u64(out, s.input_height);
    put_u64(out, s.input_width);
    put_u64(out, s.classes);
    put_u32(out, static_cast<std::uint32_t>(s.layers.size()));
    for (const auto& l : s.layers) {
        put_u8(out, static_cast<std::uint8_t>(l.kind));
        put_string(out, l.name);
        put_u64(out, l.out);
        put_u64(out, l.kh);
        put_u64(out, l.kw);
        put_u64(out, l.stride);
    }
    put_u64(out, s.feature_layer);
}

inline NetworkSpec read_spec(Reader& r) {
    NetworkSpec s;
    const std::uint8_t arch = r.u8();
    if (arch > 2) throw FormatError(r.file + ": unknown architecture tag");
    s.architecture = static_cast<Architecture>(arch);
    s.views = r.u64();
    s.input_channels = r.u64();
    s.input_height = r.u64();
    s.input_width = r.u64();
    s.classes = r.u64();
    const std::uint32_t n = r.u32();
    if (n > 1024) throw FormatError(r.file + ": unreasonable layer count");
    for (std::uint32_t i = 0; i < n; ++i) {
        LayerSpec l;
        const std::uint8_t kind = r.u8();
        if (kind > 4) throw FormatError(r.file + ": unknown layer kind");
        l.kind = static_cast<LayerKind>(kind);
        l.name = r.str();
        l.out = r.u64();
        l.kh = r.u64();
        l.kw = r.u64();
        l.stride = r.u64();
        s.layers.push_back(std::move(l));
    }
    s.feature_layer = r.u64();
    return s;
}

}  // namespace detail

template <typename T>
constexpr char precision_tag() {
    return std::is_same_v<T, float> ? 'f' : 'd';
}

template <typename T>
void save_checkpoint(const NetworkState<T>& net, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    detail::put_bytes(out, kCheckpointMagic, 8);
    detail::put_u8(out, kCheckpointVersion);
    detail::put_u8(out, static_cast<std::uint8_t>(precision_tag<T>()));
    detail::put_spec(out, net.spec);
    detail::put_u64(out, net.epoch);
    detail::put_u64(out, net.rng.state());
    detail::put_u32(out, static_cast<std::uint32_t>(net.params.size()));
    for (const auto& p : net.params) {
        detail::put_string(out, p.weights.name);
        detail::put_u8(out, static_cast<std::uint8_t>(p.weights.layout));
        detail::put_u8(out, p.trainable ? 1 : 0);
        detail::put_tensor(out, p.weights.kernels);
        detail::put_tensor(out, p.weights.bias);
        detail::put_tensor(out, p.vel_kernels);
        detail::put_tensor(out, p.vel_bias);
    }
    if (!out.good()) throw IoError("write failed for " + path.string());
}

/// Peeks at the header so callers can pick the right precision before a full
/// load. Returns 'f' or 'd'.
inline char checkpoint_precision(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path.string() + ": cannot open checkpoint");
    detail::Reader r{in, path.string()};
    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw FormatError(path.string() + ": not a checkpoint (bad magic)");
    const std::uint8_t version = r.u8();
    if (version != kCheckpointVersion)
        throw FormatError(path.string() + ": unsupported checkpoint version " +
                          std::to_string(version));
    const char prec = static_cast<char>(r.u8());
    if (prec != 'f' && prec != 'd')
        throw FormatError(path.string() + ": unknown precision tag");
    return prec;
}

template <typename T>
NetworkState<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path.string() + ": cannot open checkpoint");
    detail::Reader r{in, path.string()};
    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw FormatError(path.string() + ": not a checkpoint (bad magic)");
    const std::uint8_t version = r.u8();
    if (version != kCheckpointVersion)
        throw FormatError(path.string() + ": unsupported checkpoint version " +
                          std::to_string(version));
    const char prec = static_cast<char>(r.u8());
    if (prec != precision_tag<T>())
        throw FormatError(path.string() + ": precision mismatch (checkpoint is '" +
                          std::string(1, prec) + "', run wants '" +
                          std::string(1, precision_tag<T>()) + "'); no silent cast");

    const NetworkSpec spec = detail::read_spec(r);
    spec.validate();
    NetworkState<T> net = init_network<T>(spec, 0);
    net.epoch = r.u64();
    net.rng.set_state(r.u64());
    const std::uint32_t count = r.u32();
    if (count != net.params.size())
        throw FormatError(path.string() + ": parameter count does not match the spec");
    for (std::uint32_t i = 0; i < count; ++i) {
        ParamEntry<T>& e = net.params[i];
        const std::string name = r.str();
        if (name != e.weights.name)
            throw FormatError(path.string() + ": parameter '" + name + "' out of order");
        const std::uint8_t layout = r.u8();
        if (layout != static_cast<std::uint8_t>(e.weights.layout))
            throw FormatError(path.string() + ": layout mismatch for '" + name + "'");
        e.trainable = r.u8() != 0;
        Tensor<T> kernels = r.tensor<T>();
        Tensor<T> bias = r.tensor<T>();
        Tensor<T> vk = r.tensor<T>();
        Tensor<T> vb = r.tensor<T>();
        if (kernels.shape() != e.weights.kernels.shape() ||
            bias.numel() != e.weights.bias.numel() || vk.shape() != kernels.shape() ||
            vb.numel() != bias.numel())
            throw FormatError(path.string() + ": tensor shapes for '" + name +
                              "' do not match the spec");
        e.weights.kernels = std::move(kernels);
        e.weights.bias = std::move(bias);
        e.vel_kernels = std::move(vk);
        e.vel_bias = std::move(vb);
    }
    char extra;
    if (in.read(&extra, 1).gcount() != 0)
        throw FormatError(path.string() + ": trailing bytes after checkpoint payload");
    return net;
}

}  // namespace gramreg
