#include "sanet/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "sanet/jsonkeys.hpp"
#include "sanet/ops.hpp"
#include "sanet/ppm.hpp"

namespace fs = std::filesystem;

namespace sanet {

void SyntheticSpec::validate() const {
  if (test_identities < 1 || num_identities <= test_identities)
    throw std::invalid_argument("dataset: need at least one train and one test identity, got " +
                                std::to_string(num_identities) + " total / " +
                                std::to_string(test_identities) + " test");
  if (images_per_identity < 1)
    throw std::invalid_argument("dataset: images_per_identity must be positive");
  if (image_size < 8 || image_size % 2 != 0)
    throw std::invalid_argument("dataset: image_size must be even and >= 8, got " +
                                std::to_string(image_size));
  if (rotation_range <= 0 || rotation_range > 2.0 * std::numbers::pi + 1e-9)
    throw std::invalid_argument("dataset: rotation_range must be in (0, 2*pi]");
  if (translation_jitter < 0 || translation_jitter > 0.25)
    throw std::invalid_argument("dataset: translation_jitter must be in [0, 0.25]");
  if (scale_jitter_lo <= 0 || scale_jitter_hi < scale_jitter_lo)
    throw std::invalid_argument("dataset: scale jitter range is empty");
  if (noise_sigma < 0) throw std::invalid_argument("dataset: noise_sigma must be >= 0");
}

void to_json(nlohmann::ordered_json& j, const SyntheticSpec& s) {
  j = nlohmann::ordered_json{{"num_identities", s.num_identities},
                             {"test_identities", s.test_identities},
                             {"images_per_identity", s.images_per_identity},
                             {"image_size", s.image_size},
                             {"rotation_range", s.rotation_range},
                             {"translation_jitter", s.translation_jitter},
                             {"scale_jitter_lo", s.scale_jitter_lo},
                             {"scale_jitter_hi", s.scale_jitter_hi},
                             {"noise_sigma", s.noise_sigma},
                             {"seed", s.seed}};
}

void spec_from_json(const nlohmann::json& j, SyntheticSpec& s) {
  require_known_keys(j,
                     {"num_identities", "test_identities", "images_per_identity", "image_size",
                      "rotation_range", "translation_jitter", "scale_jitter_lo",
                      "scale_jitter_hi", "noise_sigma", "seed"},
                     "dataset spec");
  s.num_identities = j.value("num_identities", s.num_identities);
  s.test_identities = j.value("test_identities", s.test_identities);
  s.images_per_identity = j.value("images_per_identity", s.images_per_identity);
  s.image_size = j.value("image_size", s.image_size);
  s.rotation_range = j.value("rotation_range", s.rotation_range);
  s.translation_jitter = j.value("translation_jitter", s.translation_jitter);
  s.scale_jitter_lo = j.value("scale_jitter_lo", s.scale_jitter_lo);
  s.scale_jitter_hi = j.value("scale_jitter_hi", s.scale_jitter_hi);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.seed = j.value("seed", s.seed);
}

// ------------------------------------------------------------------ renderer

namespace {

struct Color {
  float r, g, b;
};

// Small shared palettes: color statistics barely separate identities, the
// patch ARRANGEMENT does.
const std::array<Color, 3> kBodyPalette = {Color{0.72f, 0.20f, 0.20f}, Color{0.20f, 0.42f, 0.78f},
                                           Color{0.24f, 0.62f, 0.30f}};
const std::array<Color, 2> kPatchPalette = {Color{0.93f, 0.83f, 0.22f}, Color{0.58f, 0.24f, 0.72f}};
const Color kMarkerColor = {0.95f, 0.95f, 0.95f};
const float kBackground = 0.12f;

struct Patch {
  double u, v, r;
  Color color;
};

struct IdentityStyle {
  Color body;
  std::array<Patch, 3> patches;
};

// Units below are fractions of the image size. Patch centers stay clear of
// the nose marker and of each other so every patch remains visible.
constexpr double kBodyHalfLen = 0.30, kBodyHalfWidth = 0.14;
constexpr double kMarkerU = 0.20, kMarkerR = 0.08;

IdentityStyle identity_style(uint64_t identity_seed) {
  RngStream rng(identity_seed);
  IdentityStyle st;
  const Color& base = kBodyPalette[(size_t)rng.uniform_int((int)kBodyPalette.size())];
  st.body = {base.r + (float)rng.uniform(-0.04, 0.04), base.g + (float)rng.uniform(-0.04, 0.04),
             base.b + (float)rng.uniform(-0.04, 0.04)};
  for (int i = 0; i < 3; ++i) {
    Patch p{};
    for (int attempt = 0; attempt < 50; ++attempt) {
      p.u = rng.uniform(-0.24, 0.06);
      p.v = rng.uniform(-0.07, 0.07);
      bool clear = true;
      for (int k = 0; k < i; ++k) {
        double du = p.u - st.patches[(size_t)k].u, dv = p.v - st.patches[(size_t)k].v;
        if (du * du + dv * dv < 0.11 * 0.11) clear = false;
      }
      if (clear) break;
    }
    p.r = rng.uniform(0.05, 0.075);
    p.color = kPatchPalette[(size_t)rng.uniform_int((int)kPatchPalette.size())];
    st.patches[(size_t)i] = p;
  }
  return st;
}

inline bool inside_body(double u, double v) {
  // capsule: segment of half-length (len - width) along u, inflated by width
  double core = kBodyHalfLen - kBodyHalfWidth;
  double cu = std::clamp(u, -core, core);
  double du = u - cu;
  return du * du + v * v <= kBodyHalfWidth * kBodyHalfWidth;
}

Color shade(const IdentityStyle& st, double u, double v) {
  if (!inside_body(u, v)) return {kBackground, kBackground, kBackground};
  double mu = u - kMarkerU;
  if (mu * mu + v * v <= kMarkerR * kMarkerR) return kMarkerColor;
  for (const Patch& p : st.patches) {
    double du = u - p.u, dv = v - p.v;
    if (du * du + dv * dv <= p.r * p.r) return p.color;
  }
  return st.body;
}

}  // namespace

Tensor render_vehicle(const SyntheticSpec& spec, uint64_t identity_seed, double orientation,
                      const RenderJitter& jitter) {
  const int S = spec.image_size;
  const int ss = 2;  // supersampling factor
  const IdentityStyle st = identity_style(identity_seed);
  const double c = S * 0.5;
  const double co = std::cos(orientation), si = std::sin(orientation);
  const double inv_scale = 1.0 / (jitter.scale * S);
  Tensor img({3, S, S});
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      float acc[3] = {0, 0, 0};
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          double px = (x * ss + sx + 0.5) / ss - c - jitter.dx;
          double py = (y * ss + sy + 0.5) / ss - c - jitter.dy;
          // rotate by -orientation into the body frame, then rescale
          double u = (co * px + si * py) * inv_scale;
          double v = (-si * px + co * py) * inv_scale;
          Color col = shade(st, u, v);
          acc[0] += col.r;
          acc[1] += col.g;
          acc[2] += col.b;
        }
      const float inv = 1.0f / (ss * ss);
      for (int ch = 0; ch < 3; ++ch) img.data[((size_t)ch * S + y) * S + x] = acc[ch] * inv;
    }
  if (jitter.noise_seed != 0 && spec.noise_sigma > 0) {
    RngStream noise(jitter.noise_seed);
    for (auto& v : img.data)
      v = std::clamp(v + (float)(spec.noise_sigma * noise.normal()), 0.0f, 1.0f);
  }
  return img;
}

// ------------------------------------------------------------------ dataset

namespace {

std::string format_name(const char* prefix, int identity, int index) {
  char buf[64];
  if (index >= 0)
    std::snprintf(buf, sizeof(buf), "%s_%04d_%02d", prefix, identity, index);
  else
    std::snprintf(buf, sizeof(buf), "%s_%04d", prefix, identity);
  return buf;
}

double wrap_angle_diff(double a, double b, double range) {
  double d = std::fmod(std::abs(a - b), range);
  return std::min(d, range - d);
}

LabeledImage make_image(const SyntheticSpec& spec, int identity, int index, double orientation,
                        const std::string& name) {
  RngStream jr = RngStream::derive(spec.seed, "jitter", (uint64_t)identity, (uint64_t)index);
  RenderJitter j;
  double t = spec.translation_jitter * spec.image_size;
  j.dx = jr.uniform(-t, t);
  j.dy = jr.uniform(-t, t);
  j.scale = jr.uniform(spec.scale_jitter_lo, spec.scale_jitter_hi);
  j.noise_seed = RngStream::derive(spec.seed, "noise", (uint64_t)identity, (uint64_t)index).next_u64();
  uint64_t id_seed = RngStream::derive(spec.seed, "identity", (uint64_t)identity).next_u64();
  LabeledImage li;
  li.pixels = render_vehicle(spec, id_seed, orientation, j);
  li.identity = identity;
  li.orientation = (float)orientation;
  li.name = name;
  return li;
}

}  // namespace

Dataset generate_dataset(const SyntheticSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  const int T = spec.num_identities - spec.test_identities;
  ds.train_identity_count = T;

  struct Job {
    int identity, index;
    double orientation;
    std::string name;
    int bucket;  // 0 train, 1 query, 2 gallery
  };
  std::vector<Job> jobs;
  for (int id = 0; id < T; ++id)
    for (int k = 0; k < spec.images_per_identity; ++k) {
      auto orng = RngStream::derive(spec.seed, "orient", (uint64_t)id, (uint64_t)k);
      jobs.push_back({id, k, orng.uniform(0.0, spec.rotation_range), format_name("tr", id, k), 0});
    }
  for (int id = T; id < spec.num_identities; ++id) {
    auto o0 = RngStream::derive(spec.seed, "orient", (uint64_t)id, 0);
    auto o1 = RngStream::derive(spec.seed, "orient", (uint64_t)id, 1);
    double oq = o0.uniform(0.0, spec.rotation_range);
    double og = o1.uniform(0.0, spec.rotation_range);
    // the match must sit at a clearly different orientation
    for (int i = 0; i < 100 && wrap_angle_diff(oq, og, spec.rotation_range) < 0.15; ++i)
      og = o1.uniform(0.0, spec.rotation_range);
    jobs.push_back({id, 0, oq, format_name("q", id, -1), 1});
    jobs.push_back({id, 1, og, format_name("g", id, -1), 2});
  }

  std::vector<LabeledImage> rendered(jobs.size());
#pragma omp parallel for schedule(dynamic)
  for (int64_t i = 0; i < (int64_t)jobs.size(); ++i) {
    const Job& jb = jobs[(size_t)i];
    rendered[(size_t)i] = make_image(spec, jb.identity, jb.index, jb.orientation, jb.name);
  }
  for (size_t i = 0; i < jobs.size(); ++i) {
    switch (jobs[i].bucket) {
      case 0: ds.train.push_back(std::move(rendered[i])); break;
      case 1: ds.query.push_back(std::move(rendered[i])); break;
      default: ds.gallery.push_back(std::move(rendered[i])); break;
    }
  }
  return ds;
}

// --------------------------------------------------------------------- disk

namespace {

const char* bucket_dir(int b) { return b == 0 ? "train" : b == 1 ? "query" : "gallery"; }
const char* bucket_name(int b) { return b == 0 ? "train" : b == 1 ? "query" : "gallery"; }

void append_bucket(nlohmann::ordered_json& images, std::string& csv, const std::string& dir,
                   const std::vector<LabeledImage>& list, int bucket) {
  char line[256];
  for (const auto& li : list) {
    std::string rel = std::string(bucket_dir(bucket)) + "/" + li.name + ".ppm";
    write_ppm(dir + "/" + rel, li.pixels);
    images.push_back(nlohmann::ordered_json{{"file", rel},
                                            {"identity", li.identity},
                                            {"orientation", (double)li.orientation},
                                            {"split", bucket_name(bucket)}});
    std::snprintf(line, sizeof(line), "%s,%d,%.9g,%s\n", rel.c_str(), li.identity,
                  (double)li.orientation, bucket_name(bucket));
    csv += line;
  }
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& dir) {
  for (const char* sub : {"train", "query", "gallery"}) fs::create_directories(fs::path(dir) / sub);
  nlohmann::ordered_json meta;
  to_json(meta["spec"], ds.spec);
  meta["train_identity_count"] = ds.train_identity_count;
  meta["images"] = nlohmann::ordered_json::array();
  std::string csv = "file,identity,orientation,split\n";
  append_bucket(meta["images"], csv, dir, ds.train, 0);
  append_bucket(meta["images"], csv, dir, ds.query, 1);
  append_bucket(meta["images"], csv, dir, ds.gallery, 2);
  std::ofstream mf(dir + "/meta.json", std::ios::binary);
  mf << meta.dump(2) << "\n";
  std::ofstream cf(dir + "/labels.csv", std::ios::binary);
  cf << csv;
  if (!mf || !cf) throw std::runtime_error("cannot write dataset metadata under " + dir);
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream mf(dir + "/meta.json");
  if (!mf) throw std::runtime_error("dataset: cannot open " + dir + "/meta.json");
  nlohmann::json meta = nlohmann::json::parse(mf);
  Dataset ds;
  spec_from_json(meta.at("spec"), ds.spec);
  ds.train_identity_count = meta.at("train_identity_count").get<int>();
  for (const auto& e : meta.at("images")) {
    LabeledImage li;
    std::string rel = e.at("file").get<std::string>();
    li.pixels = read_ppm(dir + "/" + rel);
    li.identity = e.at("identity").get<int>();
    li.orientation = (float)e.at("orientation").get<double>();
    li.name = fs::path(rel).stem().string();
    std::string split = e.at("split").get<std::string>();
    if (split == "train")
      ds.train.push_back(std::move(li));
    else if (split == "query")
      ds.query.push_back(std::move(li));
    else if (split == "gallery")
      ds.gallery.push_back(std::move(li));
    else
      throw std::runtime_error("dataset: unknown split '" + split + "' in meta.json");
  }
  return ds;
}

// ------------------------------------------------------------- augmentation

Tensor augment(const Tensor& img, const AugmentConfig& cfg, RngStream& rng) {
  op_check(img.ndim() == 3 && img.dim(0) == 3,
           "augment: expected [3,H,W] image, got " + shape_str(img.shape));
  const int H = img.dim(1), W = img.dim(2);
  Tensor out = img;
  if (rng.uniform() < cfg.erase_prob) {
    double mean = 0;
    for (float v : img.data) mean += v;
    mean /= (double)img.data.size();
    for (int attempt = 0; attempt < 10; ++attempt) {
      double area = rng.uniform(cfg.erase_area_lo, cfg.erase_area_hi) * H * W;
      double aspect = rng.uniform(cfg.erase_aspect_lo, cfg.erase_aspect_hi);
      int w = std::max(1, (int)std::lround(std::sqrt(area * aspect)));
      int h = std::max(1, (int)std::lround(std::sqrt(area / aspect)));
      if (w > W || h > H) continue;
      int x0 = rng.uniform_int(W - w + 1);
      int y0 = rng.uniform_int(H - h + 1);
      for (int c = 0; c < 3; ++c)
        for (int y = y0; y < y0 + h; ++y)
          for (int x = x0; x < x0 + w; ++x) out.data[((size_t)c * H + y) * W + x] = (float)mean;
      break;
    }
  }
  for (int c = 0; c < 3; ++c) {
    float m = (float)rng.uniform(cfg.channel_mul_lo, cfg.channel_mul_hi);
    float a = (float)rng.uniform(cfg.channel_add_lo, cfg.channel_add_hi);
    float* p = out.data.data() + (size_t)c * H * W;
    for (int i = 0; i < H * W; ++i) p[i] = std::clamp(p[i] * m + a, 0.0f, 1.0f);
  }
  return out;
}

// ----------------------------------------------------------------- sampling

std::vector<int> pk_sample(const std::vector<LabeledImage>& split, int P, int K, RngStream& rng) {
  op_check(P >= 2 && K >= 2, "pk_sample: need P >= 2 and K >= 2");
  std::map<int, std::vector<int>> by_id;
  for (size_t i = 0; i < split.size(); ++i) by_id[split[i].identity].push_back((int)i);
  std::vector<int> eligible;
  for (auto& [id, idxs] : by_id)
    if ((int)idxs.size() >= K) eligible.push_back(id);
  op_check((int)eligible.size() >= P,
           "pk_sample: need " + std::to_string(P) + " identities with at least " + std::to_string(K) +
               " images, split has " + std::to_string(eligible.size()));
  // partial Fisher-Yates: first P slots
  for (int i = 0; i < P; ++i) {
    int j = i + rng.uniform_int((int)eligible.size() - i);
    std::swap(eligible[(size_t)i], eligible[(size_t)j]);
  }
  std::vector<int> batch;
  for (int i = 0; i < P; ++i) {
    std::vector<int> idxs = by_id[eligible[(size_t)i]];
    for (int k = 0; k < K; ++k) {
      int j = k + rng.uniform_int((int)idxs.size() - k);
      std::swap(idxs[(size_t)k], idxs[(size_t)j]);
      batch.push_back(idxs[(size_t)k]);
    }
  }
  for (int i = (int)batch.size() - 1; i > 0; --i) {
    int j = rng.uniform_int(i + 1);
    std::swap(batch[(size_t)i], batch[(size_t)j]);
  }
  return batch;
}

}  // namespace sanet
