#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sanet/data.hpp"
#include "sanet/eval.hpp"
#include "sanet/model.hpp"
#include "sanet/rng.hpp"

using namespace sanet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* tag) {
    path = fs::temp_directory_path() / (std::string("sanet_eval_") + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

SANetConfig tiny_model_config() {
  SANetConfig c;
  c.input_size = 32;
  c.trunk_channels = {4, 6, 8, 8};
  c.branch_channels = 12;
  c.embed_dim_global = 8;
  c.embed_dim_part = 6;
  c.parts_per_branch = 2;
  c.num_classes = 3;
  return c;
}

std::vector<LabeledImage> random_images(int n, int size, uint64_t seed) {
  auto rng = RngStream::derive(seed, "img");
  std::vector<LabeledImage> out;
  for (int i = 0; i < n; ++i) {
    LabeledImage li;
    li.pixels = Tensor({3, size, size});
    for (auto& v : li.pixels.data) v = (float)rng.uniform(0, 1);
    li.identity = i % 3;
    li.name = "img" + std::to_string(i);
    out.push_back(std::move(li));
  }
  return out;
}

// same rank semantics, written independently: ascending distance, ties by
// ascending gallery index
std::vector<double> cmc_oracle(const Tensor& D, const std::vector<int>& ql,
                               const std::vector<int>& gl, int k_max) {
  const int Q = D.dim(0), G = D.dim(1);
  std::vector<double> curve((size_t)k_max, 0.0);
  for (int i = 0; i < Q; ++i) {
    int match = -1;
    for (int j = 0; j < G; ++j)
      if (gl[(size_t)j] == ql[(size_t)i]) match = j;
    const float* row = D.data.data() + (size_t)i * G;
    int rank = 0;
    for (int j = 0; j < G; ++j) {
      if (row[j] < row[match]) ++rank;
      if (row[j] == row[match] && j < match) ++rank;
    }
    for (int k = rank; k < k_max; ++k) curve[(size_t)k] += 1.0 / Q;
  }
  return curve;
}

}  // namespace

TEST_CASE("retrieval curve matches a brute-force oracle") {
  auto rng = RngStream::derive(3, "d");
  const int Q = 8, G = 10;
  Tensor D({Q, G});
  for (auto& v : D.data) v = (float)rng.uniform(0, 2);
  // queries hold ids 0..7, gallery holds 0..9 shuffled
  std::vector<int> ql{0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<int> gl{7, 3, 9, 0, 5, 8, 1, 6, 2, 4};
  auto got = cmc(D, ql, gl, G);
  auto want = cmc_oracle(D, ql, gl, G);
  REQUIRE(got.size() == want.size());
  for (size_t k = 0; k < got.size(); ++k) CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-12));
  // non-decreasing and exhaustive at k = G
  for (size_t k = 1; k < got.size(); ++k) CHECK(got[k] >= got[k - 1]);
  CHECK(got.back() == doctest::Approx(1.0));
}

TEST_CASE("rank ties break toward the lower gallery index") {
  Tensor D({1, 4});
  for (auto& v : D.data) v = 0.5f;  // all distances equal
  CHECK(cmc(D, {2}, {2, 0, 1, 3}, 1)[0] == doctest::Approx(1.0));  // match first
  CHECK(cmc(D, {2}, {0, 1, 3, 2}, 3)[2] == doctest::Approx(0.0));  // match last
  CHECK(cmc(D, {2}, {0, 1, 3, 2}, 4)[3] == doctest::Approx(1.0));
}

TEST_CASE("retrieval curve ignores row order") {
  auto rng = RngStream::derive(5, "d");
  const int Q = 6, G = 6;
  Tensor D({Q, G});
  for (auto& v : D.data) v = (float)rng.uniform(0, 1);
  std::vector<int> ql{0, 1, 2, 3, 4, 5}, gl{3, 1, 4, 0, 5, 2};
  auto base = cmc(D, ql, gl, G);

  // permute the gallery columns together with their labels
  std::vector<int> perm{4, 2, 0, 5, 1, 3};
  Tensor Dp({Q, G});
  std::vector<int> glp((size_t)G);
  for (int j = 0; j < G; ++j) {
    glp[(size_t)j] = gl[(size_t)perm[(size_t)j]];
    for (int i = 0; i < Q; ++i)
      Dp.data[(size_t)i * G + j] = D.data[(size_t)i * G + perm[(size_t)j]];
  }
  auto permuted = cmc(Dp, ql, glp, G);
  for (size_t k = 0; k < base.size(); ++k)
    CHECK(permuted[k] == doctest::Approx(base[k]).epsilon(1e-12));

  // permute the query rows
  Tensor Dq({Q, G});
  std::vector<int> qlp((size_t)Q);
  for (int i = 0; i < Q; ++i) {
    qlp[(size_t)i] = ql[(size_t)perm[(size_t)i]];
    for (int j = 0; j < G; ++j)
      Dq.data[(size_t)i * G + j] = D.data[(size_t)perm[(size_t)i] * G + j];
  }
  auto qper = cmc(Dq, qlp, gl, G);
  for (size_t k = 0; k < base.size(); ++k) CHECK(qper[k] == doctest::Approx(base[k]).epsilon(1e-12));
}

TEST_CASE("retrieval input contracts") {
  Tensor D({2, 3});
  CHECK_THROWS_AS((void)cmc(D, {0, 1}, {0, 1, 1}, 1), std::invalid_argument);  // id 1 twice
  CHECK_THROWS_AS((void)cmc(D, {0, 2}, {0, 1, 1}, 1), std::invalid_argument);  // id 2 missing
  CHECK_THROWS_AS((void)cmc(D, {0}, {0, 1, 2}, 1), std::invalid_argument);     // count mismatch
  CHECK_THROWS_AS((void)cmc(D, {0, 1}, {0, 1, 2}, 0), std::invalid_argument);  // bad k
  Tensor D3({2, 3, 1});
  CHECK_THROWS_AS((void)cmc(D3, {0, 1}, {0, 1, 2}, 1), std::invalid_argument);
}

TEST_CASE("distance matrix values and scale covariance") {
  EmbeddingMatrix q, g;
  q.values = Tensor({2, 2}, {0, 0, 1, 1});
  g.values = Tensor({2, 2}, {3, 4, 1, 1});
  Tensor D = distance_matrix(q, g);
  CHECK(D.data[0] == doctest::Approx(5.0).epsilon(1e-6));          // (0,0) to (3,4)
  CHECK(D.data[1] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-6));
  CHECK(D.data[3] == doctest::Approx(0.0).epsilon(1e-5));          // coincident rows

  auto rng = RngStream::derive(7, "e");
  EmbeddingMatrix a, b;
  a.values = Tensor({3, 4});
  b.values = Tensor({5, 4});
  for (auto& v : a.values.data) v = (float)rng.uniform(-1, 1);
  for (auto& v : b.values.data) v = (float)rng.uniform(-1, 1);
  Tensor base = distance_matrix(a, b);
  for (auto& v : a.values.data) v *= 3.0f;
  for (auto& v : b.values.data) v *= 3.0f;
  Tensor scaled = distance_matrix(a, b);
  for (size_t i = 0; i < base.data.size(); ++i)
    CHECK(scaled.data[i] == doctest::Approx(3.0 * base.data[i]).epsilon(1e-5));

  EmbeddingMatrix wrong;
  wrong.values = Tensor({2, 3});
  CHECK_THROWS_AS((void)distance_matrix(a, wrong), std::invalid_argument);
}

TEST_CASE("batch size never changes the embeddings") {
  SANet model(tiny_model_config(), 9);
  auto images = random_images(7, 32, 11);
  EmbeddingMatrix one = embed_set(model, images, 1);
  EmbeddingMatrix three = embed_set(model, images, 3);
  EmbeddingMatrix all = embed_set(model, images, 32);
  REQUIRE(one.values.shape == std::vector<int>{7, model.config().embedding_dim()});
  for (size_t i = 0; i < one.values.data.size(); ++i) {
    CHECK(one.values.data[i] == three.values.data[i]);
    CHECK(one.values.data[i] == all.values.data[i]);
  }
  for (int i = 0; i < 7; ++i) {
    CHECK(one.labels[(size_t)i] == images[(size_t)i].identity);
    CHECK(one.names[(size_t)i] == images[(size_t)i].name);
  }
  CHECK_THROWS_AS((void)embed_set(model, {}, 8), std::invalid_argument);
  CHECK_THROWS_AS((void)embed_set(model, images, 0), std::invalid_argument);
  auto bad = random_images(1, 16, 12);  // wrong resolution
  CHECK_THROWS_AS((void)embed_set(model, bad, 8), std::invalid_argument);
}

TEST_CASE("alignment export reflects the regressed transform") {
  SANet model(tiny_model_config(), 13);
  auto images = random_images(2, 32, 14);
  // untrained: theta is the identity and the aligned copy is exact
  auto th = regress_theta(model, images[0]);
  for (int k = 0; k < 6; ++k) CHECK(th[(size_t)k] == kIdentityTheta[(size_t)k]);
  Tensor same = aligned_image(model, images[0]);
  for (size_t i = 0; i < same.data.size(); ++i) CHECK(same.data[i] == images[0].pixels.data[i]);

  // a perturbed regression head moves pixels
  auto rng = RngStream::derive(15, "w");
  for (auto& v : model.params().get("stn.fc2.w").value.data) v = (float)rng.uniform(-0.1, 0.1);
  Tensor moved = aligned_image(model, images[0]);
  double diff = 0;
  for (size_t i = 0; i < moved.data.size(); ++i)
    diff = std::max(diff, (double)std::abs(moved.data[i] - images[0].pixels.data[i]));
  CHECK(diff > 0);

  TempDir dir("align");
  export_alignment_pairs(model, images, dir.str());
  for (const char* f : {"img0_before.ppm", "img0_after.ppm", "img1_before.ppm", "img1_after.ppm",
                        "theta.csv"})
    CHECK(fs::exists(dir.path / f));
  std::ifstream tf(dir.path / "theta.csv");
  std::string line;
  int rows = 0;
  while (std::getline(tf, line)) {
    if (rows > 0) CHECK(std::count(line.begin(), line.end(), ',') == 6);
    ++rows;
  }
  CHECK(rows == 3);
}

TEST_CASE("result export writes the curve and the rank table") {
  auto rng = RngStream::derive(17, "d");
  EmbeddingMatrix q, g;
  q.values = Tensor({3, 4});
  g.values = Tensor({5, 4});
  for (auto& v : q.values.data) v = (float)rng.uniform(-1, 1);
  for (auto& v : g.values.data) v = (float)rng.uniform(-1, 1);
  q.labels = {0, 1, 2};
  g.labels = {3, 2, 0, 4, 1};
  for (int i = 0; i < 3; ++i) q.names.push_back("q" + std::to_string(i));
  for (int i = 0; i < 5; ++i) g.names.push_back("g" + std::to_string(i));
  Tensor D = distance_matrix(q, g);
  auto curve = cmc(D, q.labels, g.labels, 5);

  TempDir dir("results");
  export_results(dir.str(), curve, D, q, g);

  std::ifstream cf(dir.path / "cmc.csv");
  std::string line;
  std::getline(cf, line);
  CHECK(line == "k,accuracy");
  size_t k = 0;
  while (std::getline(cf, line)) {
    std::istringstream ss(line);
    std::string kf, af;
    std::getline(ss, kf, ',');
    std::getline(ss, af);
    CHECK(std::stoul(kf) == k + 1);
    CHECK(std::stod(af) == doctest::Approx(curve[k]).epsilon(1e-9));
    ++k;
  }
  CHECK(k == curve.size());

  std::ifstream rf(dir.path / "ranks.csv");
  int rows = 0;
  while (std::getline(rf, line)) {
    CHECK(std::count(line.begin(), line.end(), ',') == 10);  // name + top5 + ok5
    ++rows;
  }
  CHECK(rows == 4);  // header + one row per query
}

TEST_CASE("axis estimate recovers the rendered orientation") {
  SyntheticSpec spec;
  spec.image_size = 64;
  for (double phi : {0.0, 0.4, 1.0, 2.2, 3.0}) {
    Tensor img = render_vehicle(spec, 31, phi, {});
    auto angle = estimate_axis_angle(img);
    REQUIRE(angle.has_value());
    double want = std::fmod(phi, std::numbers::pi);
    double d = std::abs(*angle - want);
    d = std::min(d, std::numbers::pi - d);
    CHECK(d < 0.08);
  }
  // featureless image: nothing clears the background threshold
  Tensor flat({3, 32, 32});
  for (auto& v : flat.data) v = 0.12f;
  CHECK(!estimate_axis_angle(flat).has_value());
}

TEST_CASE("axial dispersion statistic") {
  CHECK(axial_circular_std({0.7, 0.7, 0.7}) == doctest::Approx(0.0).epsilon(1e-6));
  // angles pi apart describe the same axis
  CHECK(axial_circular_std({0.2, 0.2 + std::numbers::pi}) == doctest::Approx(0.0).epsilon(1e-6));
  // known two-point value: r = sqrt(1/2), std = 0.5*sqrt(ln 2)
  CHECK(axial_circular_std({0.0, std::numbers::pi / 4}) ==
        doctest::Approx(0.5 * std::sqrt(std::log(2.0))).epsilon(1e-9));
  // orthogonal axes are maximally dispersed
  CHECK(axial_circular_std({0.0, std::numbers::pi / 2}) > 2.0);
  CHECK_THROWS_AS((void)axial_circular_std({}), std::invalid_argument);
}
