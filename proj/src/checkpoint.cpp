#include "capfor/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace capfor {

namespace {

constexpr char kMagic[4] = {'B', 'T', 'K', 'D'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ofstream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw CheckpointError("checkpoint: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::ifstream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw CheckpointError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_f32_raw(std::ofstream& out, const float* data, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, &data[i], 4);
        write_u32(out, bits);
    }
}

void read_f32_raw(std::ifstream& in, float* data, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t bits = read_u32(in);
        std::memcpy(&data[i], &bits, 4);
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& tensors) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot open for writing: " + path);
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) write_u64(out, static_cast<std::uint64_t>(d));
        write_f32_raw(out, t.data(), t.numel());
    }
    if (!out) throw CheckpointError("checkpoint: write failed: " + path);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("checkpoint: cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw CheckpointError("checkpoint: bad magic in " + path);
    }
    const std::uint32_t version = read_u32(in);
    if (version != kVersion) {
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version) +
                              " in " + path);
    }
    const std::uint32_t count = read_u32(in);
    std::map<std::string, Tensor> tensors;
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::uint32_t name_len = read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw CheckpointError("checkpoint: truncated name in " + path);
        const std::uint32_t rank = read_u32(in);
        std::vector<std::size_t> shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d)
            shape[d] = static_cast<std::size_t>(read_u64(in));
        Tensor t(shape);
        read_f32_raw(in, t.data(), t.numel());
        tensors.emplace(std::move(name), std::move(t));
    }
    return tensors;
}

std::map<std::string, Tensor> snapshot(const std::vector<Parameter*>& params) {
    std::map<std::string, Tensor> out;
    for (const Parameter* p : params) {
        if (!out.emplace(p->name, p->value).second) {
            throw CheckpointError("checkpoint: duplicate parameter name: " + p->name);
        }
    }
    return out;
}

void restore(const std::map<std::string, Tensor>& tensors,
             const std::vector<Parameter*>& params) {
    for (Parameter* p : params) {
        auto it = tensors.find(p->name);
        if (it == tensors.end()) {
            throw CheckpointError("checkpoint: missing tensor: " + p->name);
        }
        if (!it->second.same_shape(p->value)) {
            throw CheckpointError("checkpoint: shape mismatch for " + p->name + ": " +
                                  it->second.shape_str() + " vs " + p->value.shape_str());
        }
        p->value = it->second;
    }
}

}  // namespace capfor
