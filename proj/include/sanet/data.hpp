#pragma once

#include <cstdint>
#include <json.hpp>
#include <numbers>
#include <string>
#include <vector>

#include "sanet/rng.hpp"
#include "sanet/tensor.hpp"

// Procedural vehicle-like renderings with known identity and orientation.
// Identity lives in the ARRANGEMENT of a few roof patches drawn from small
// shared palettes, locked to the body frame, so two identities usually share
// near-identical color histograms and can only be told apart once images are
// rotationally aligned. A fixed white nose marker breaks the 180-degree
// symmetry of the body.

namespace sanet {

struct SyntheticSpec {
  int num_identities = 96;   // total; the last test_identities are held out
  int test_identities = 32;
  int images_per_identity = 20;  // per TRAIN identity; test identities get 2
  int image_size = 64;
  double rotation_range = 2.0 * std::numbers::pi;  // orientations ~ U[0, range)
  double translation_jitter = 0.04;                // center offset, fraction of size
  double scale_jitter_lo = 0.92;
  double scale_jitter_hi = 1.08;
  double noise_sigma = 0.02;
  uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::ordered_json& j, const SyntheticSpec& s);
void spec_from_json(const nlohmann::json& j, SyntheticSpec& s);

struct RenderJitter {
  double dx = 0, dy = 0;  // pixels
  double scale = 1;
  uint64_t noise_seed = 0;  // 0 disables noise
};

// Deterministic: identical arguments give bitwise-identical pixels.
Tensor render_vehicle(const SyntheticSpec& spec, uint64_t identity_seed, double orientation,
                      const RenderJitter& jitter);

struct LabeledImage {
  Tensor pixels;  // [3,S,S] in [0,1]
  int identity = -1;
  float orientation = 0;  // radians in [0, rotation_range)
  std::string name;       // file stem
};

struct Dataset {
  SyntheticSpec spec;
  int train_identity_count = 0;
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> query;    // one per test identity
  std::vector<LabeledImage> gallery;  // its true match at another orientation
};

// Train identities are labels 0..T-1; each test identity contributes one
// query and one gallery image at different orientations (other identities'
// gallery images act as the distractors).
Dataset generate_dataset(const SyntheticSpec& spec);

void write_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

struct AugmentConfig {
  double erase_prob = 0.5;
  double erase_area_lo = 0.02, erase_area_hi = 0.2;  // fraction of image area
  double erase_aspect_lo = 0.3, erase_aspect_hi = 3.3;
  double channel_mul_lo = 0.8, channel_mul_hi = 1.2;
  double channel_add_lo = -0.1, channel_add_hi = 0.1;
};

// Random erasing then per-channel color jitter, clamped to [0,1]. Draw order
// per image: erase coin; on success (area, aspect) until the box fits (at
// most 10 tries) then x0, y0; then per channel (mul, add). With the erase
// probability at 0 and collapsed jitter ranges the output equals the input.
Tensor augment(const Tensor& img, const AugmentConfig& cfg, RngStream& rng);

// P distinct identities, K images each, order shuffled. Returns indices into
// `split`.
std::vector<int> pk_sample(const std::vector<LabeledImage>& split, int P, int K, RngStream& rng);

}  // namespace sanet
