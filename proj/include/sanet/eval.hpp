#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "sanet/data.hpp"
#include "sanet/model.hpp"

namespace sanet {

struct EmbeddingMatrix {
  Tensor values;  // [rows, dim]
  std::vector<int> labels;
  std::vector<std::string> names;
};

// Embed a full image list without augmentation; row order follows the input.
// Batching must not change results beyond fp noise.
EmbeddingMatrix embed_set(const SANet& model, const std::vector<LabeledImage>& images,
                          int batch_size = 32);

// Pairwise Euclidean distances, [queries, gallery].
Tensor distance_matrix(const EmbeddingMatrix& q, const EmbeddingMatrix& g);

// cmc(D)[k-1] = fraction of queries whose true match appears in the first k
// gallery entries sorted by ascending distance (ties broken by ascending
// gallery index). Every query identity must appear exactly once in the
// gallery.
std::vector<double> cmc(const Tensor& D, const std::vector<int>& q_labels,
                        const std::vector<int>& g_labels, int k_max);

// cmc.csv (k,accuracy rows) and ranks.csv (per query: top-10 gallery names
// plus correctness flags).
void export_results(const std::string& out_dir, const std::vector<double>& curve, const Tensor& D,
                    const EmbeddingMatrix& q, const EmbeddingMatrix& g);

// Resample an image with the theta the model regresses for it.
Tensor aligned_image(const SANet& model, const LabeledImage& image);
std::array<float, 6> regress_theta(const SANet& model, const LabeledImage& image);

// <stem>_before.ppm / <stem>_after.ppm pairs plus theta.csv.
void export_alignment_pairs(const SANet& model, const std::vector<LabeledImage>& images,
                            const std::string& out_dir);

// Principal-axis angle of the thresholded foreground, in [0, pi). Empty when
// fewer than 10 pixels clear the threshold.
std::optional<double> estimate_axis_angle(const Tensor& img);

// Circular standard deviation of axis angles (period pi), via angle doubling.
double axial_circular_std(const std::vector<double>& angles);

}  // namespace sanet
