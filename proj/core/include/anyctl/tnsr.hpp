#pragma once

#include <string>

#include "anyctl/tensor.hpp"

namespace anyctl {

// TNSR container: "TNSR", u32 LE rank, rank u32 LE extents, then row-major
// f32 LE payload. Every weight and activation dump uses this.
void write_tnsr(const std::string& path, const Tensor& t);
Tensor read_tnsr(const std::string& path);

}  // namespace anyctl
