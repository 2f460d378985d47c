#include "msurv/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace msurv {

namespace {

constexpr char kMagic[8] = {'M', 'S', 'R', 'V', 'C', 'K', 'P', '1'};

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw ParseError("truncated checkpoint: " + path);
    }
    return v;
}

}  // namespace

void save_checkpoint(const Params& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint64_t>(out, params.entries().size());
    for (const auto& [name, e] : params.entries()) {
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<std::uint8_t>(out, e.trainable ? 1 : 0);
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rows()));
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.cols()));
        out.write(reinterpret_cast<const char*>(e.value.data()),
                  static_cast<std::streamsize>(e.value.size() * sizeof(double)));
    }
    if (!out) throw ConfigError("failed writing checkpoint: " + path);
}

Params load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open checkpoint: " + path);
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw ParseError("not a parameter checkpoint: " + path);
    }
    const auto count = read_pod<std::uint64_t>(in, path);
    Params params;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<std::uint32_t>(in, path);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw ParseError("truncated checkpoint: " + path);
        const auto trainable = read_pod<std::uint8_t>(in, path);
        const auto rows = read_pod<std::uint32_t>(in, path);
        const auto cols = read_pod<std::uint32_t>(in, path);
        Tensor t(rows, cols);
        if (!in.read(reinterpret_cast<char*>(t.data()),
                     static_cast<std::streamsize>(t.size() * sizeof(double)))) {
            throw ParseError("truncated checkpoint: " + path);
        }
        params.add(name, std::move(t), trainable != 0);
    }
    return params;
}

void load_checkpoint_into(Params& params, const std::string& path) {
    Params loaded = load_checkpoint(path);
    for (auto& [name, e] : loaded.entries()) {
        if (!params.has(name)) continue;
        auto& dst = params.entry(name);
        if (!dst.value.same_shape(e.value)) {
            throw ContractError("checkpoint shape mismatch for " + name + ": " +
                                e.value.shape_str() + " vs " + dst.value.shape_str());
        }
        dst.value = e.value;
        dst.trainable = e.trainable;
    }
}

}  // namespace msurv
