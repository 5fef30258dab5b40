#include "anyctl/tnsr.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include "anyctl/error.hpp"

namespace anyctl {

namespace {

void put_u32(std::ostream& out, uint32_t v) {
    const char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8),
                       static_cast<char>(v >> 16), static_cast<char>(v >> 24)};
    out.write(b, 4);
}

uint32_t get_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw IoError("truncated TNSR header in " + path);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) |
           (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void write_tnsr(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write("TNSR", 4);
    put_u32(out, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) {
        if (t.size(i) < 0 || t.size(i) > UINT32_MAX)
            throw IoError("extent out of range for " + path);
        put_u32(out, static_cast<uint32_t>(t.size(i)));
    }
    for (int64_t i = 0; i < t.numel(); ++i)
        put_u32(out, std::bit_cast<uint32_t>(t[i]));
    if (!out) throw IoError("short write to " + path);
}

Tensor read_tnsr(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() != 4 || std::string_view(magic, 4) != "TNSR")
        throw IoError("not a TNSR file: " + path);
    const uint32_t rank = get_u32(in, path);
    if (rank > 8) throw IoError("implausible TNSR rank in " + path);
    Shape shape(rank);
    int64_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        shape[i] = get_u32(in, path);
        n *= shape[i];
        if (n > (int64_t(1) << 31)) throw IoError("oversized TNSR in " + path);
    }
    auto t = Tensor::zeros(shape);
    for (int64_t i = 0; i < n; ++i) {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        if (in.gcount() != 4) throw IoError("truncated TNSR payload in " + path);
        const uint32_t v = static_cast<uint32_t>(b[0]) |
                           (static_cast<uint32_t>(b[1]) << 8) |
                           (static_cast<uint32_t>(b[2]) << 16) |
                           (static_cast<uint32_t>(b[3]) << 24);
        t[i] = std::bit_cast<float>(v);
    }
    return t;
}

}  // namespace anyctl
