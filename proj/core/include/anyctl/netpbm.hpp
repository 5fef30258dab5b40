#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace anyctl {

// Binary netpbm raster: P5 (1 channel) or P6 (3 channels), maxval 1..255,
// pixels row-major with interleaved channels. Writing then reading is
// byte-exact; the writer emits one canonical header form.
struct Pnm {
    int64_t width = 0;
    int64_t height = 0;
    int64_t channels = 1;
    int maxval = 255;
    std::vector<uint8_t> pixels;

    uint8_t at(int64_t y, int64_t x, int64_t c = 0) const {
        return pixels[static_cast<size_t>((y * width + x) * channels + c)];
    }
    uint8_t& at(int64_t y, int64_t x, int64_t c = 0) {
        return pixels[static_cast<size_t>((y * width + x) * channels + c)];
    }
};

Pnm read_pnm(const std::string& path);
void write_pnm(const std::string& path, const Pnm& img);

}  // namespace anyctl
