#include "anyctl/sampler.hpp"

#include <cmath>

namespace anyctl {

Pnm tensor_to_pnm(const TensorT<float>& img) {
    if (img.rank() != 3 || img.size(0) != 3)
        throw ShapeError("tensor_to_pnm: expected [3,H,W], got " +
                         shape_str(img.shape()));
    Pnm out;
    out.height = img.size(1);
    out.width = img.size(2);
    out.channels = 3;
    out.maxval = 255;
    out.pixels.assign(static_cast<size_t>(3 * out.height * out.width), 0);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < out.height; ++y)
            for (int64_t x = 0; x < out.width; ++x) {
                const float v =
                    img[(c * out.height + y) * out.width + x];
                const float clamped = std::min(1.0f, std::max(0.0f, v));
                out.at(y, x, c) =
                    static_cast<uint8_t>(std::lround(clamped * 255.0f));
            }
    return out;
}

}  // namespace anyctl
