#include "anyctl/netpbm.hpp"

#include <fstream>

#include "anyctl/error.hpp"

namespace anyctl {

namespace {

// Skips whitespace and '#' comments between header fields.
int next_header_int(std::istream& in, const std::string& path) {
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    if (c == EOF || !std::isdigit(c))
        throw IoError("bad netpbm header in " + path);
    long v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        if (v > 1 << 20) throw IoError("oversized netpbm field in " + path);
        c = in.get();
    }
    if (c != EOF) in.unget();
    return static_cast<int>(v);
}

}  // namespace

Pnm read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    Pnm img;
    if (m0 == 'P' && m1 == '5')
        img.channels = 1;
    else if (m0 == 'P' && m1 == '6')
        img.channels = 3;
    else
        throw IoError("not a binary PGM/PPM: " + path);
    img.width = next_header_int(in, path);
    img.height = next_header_int(in, path);
    img.maxval = next_header_int(in, path);
    if (img.width < 1 || img.height < 1 || img.maxval < 1 || img.maxval > 255)
        throw IoError("unsupported netpbm geometry in " + path);
    // Exactly one whitespace byte separates the header from the raster.
    in.get();
    img.pixels.resize(
        static_cast<size_t>(img.width * img.height * img.channels));
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
        throw IoError("truncated raster in " + path);
    return img;
}

void write_pnm(const std::string& path, const Pnm& img) {
    if (img.channels != 1 && img.channels != 3)
        throw IoError("netpbm supports 1 or 3 channels, got " +
                      std::to_string(img.channels));
    if (img.width < 1 || img.height < 1 || img.maxval < 1 || img.maxval > 255)
        throw IoError("bad netpbm geometry for " + path);
    if (img.pixels.size() !=
        static_cast<size_t>(img.width * img.height * img.channels))
        throw IoError("pixel count does not match geometry for " + path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << (img.channels == 1 ? "P5" : "P6") << "\n"
        << img.width << " " << img.height << "\n"
        << img.maxval << "\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw IoError("short write to " + path);
}

}  // namespace anyctl
