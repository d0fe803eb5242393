#include "sanet/ppm.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace sanet {

void write_ppm(const std::string& path, const Tensor& img) {
  if (img.ndim() != 3 || img.dim(0) != 3)
    throw std::invalid_argument("write_ppm: expected [3,H,W], got " + shape_str(img.shape));
  const int H = img.dim(1), W = img.dim(2);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
  f << "P6\n" << W << " " << H << "\n255\n";
  std::vector<unsigned char> row((size_t)W * 3);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = img.data[((size_t)c * H + y) * W + x];
        v = v < 0 ? 0 : (v > 1 ? 1 : v);
        row[(size_t)x * 3 + c] = (unsigned char)std::lround(v * 255.0f);
      }
    f.write((const char*)row.data(), (std::streamsize)row.size());
  }
  if (!f) throw std::runtime_error("write_ppm: short write to " + path);
}

Tensor read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  int W = 0, H = 0, maxval = 0;
  f >> magic >> W >> H >> maxval;
  if (magic != "P6" || W <= 0 || H <= 0 || maxval != 255)
    throw std::runtime_error("read_ppm: unsupported header in " + path);
  f.get();  // single whitespace after header
  std::vector<unsigned char> raw((size_t)W * H * 3);
  f.read((char*)raw.data(), (std::streamsize)raw.size());
  if ((size_t)f.gcount() != raw.size()) throw std::runtime_error("read_ppm: truncated file " + path);
  Tensor img({3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        img.data[((size_t)c * H + y) * W + x] = raw[((size_t)y * W + x) * 3 + c] / 255.0f;
  return img;
}

}  // namespace sanet
