#pragma once

#include <string>

#include "sanet/tensor.hpp"

namespace sanet {

// Binary PPM (P6, maxval 255). Pixels are [3,H,W] floats in [0,1]; writing
// quantizes with round(v*255), reading divides by 255.
void write_ppm(const std::string& path, const Tensor& img);
Tensor read_ppm(const std::string& path);

}  // namespace sanet
