#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "core/linalg.hpp"

namespace anatcl {

struct SimilarityHistogram {
  Vec edges;                        // bins+1 ascending over [-1, 1]
  std::vector<std::size_t> counts;  // one per bin
  std::size_t n_pairs = 0;
  double mean = 0.0;
  double median = 0.0;
  double frac_above_09 = 0.0;  // fraction of pairs with cosine > 0.9
};

// All n(n-1)/2 unordered pairwise cosines, binned over [-1, 1]. A value
// exactly on an interior edge lands in the upper bin; the last bin is
// right-closed so cosine 1.0 is counted.
SimilarityHistogram similarity_histogram(const std::vector<Vec>& embeddings,
                                         std::size_t bins);

struct CollapseIndex {
  double intra = 0.0;  // mean cosine over same-anatomy pairs
  double inter = 0.0;  // mean cosine over cross-anatomy pairs
  double margin = 0.0;            // intra - inter
  double ratio = 0.0;             // (1 - inter) / (1 - intra)
  bool intra_defined = false;     // false when no same-anatomy pair exists
  double inter_frac_above_09 = 0.0;  // cross-anatomy pairs with cosine > 0.9
};

// Requires at least two distinct anatomy labels. When every anatomy has a
// single embedding there are no intra pairs; intra_defined is false and
// margin/ratio are computed with intra = 0.
CollapseIndex collapse_index(const std::vector<Vec>& embeddings,
                             const std::vector<std::size_t>& anatomy_labels);

struct Projection2D {
  std::vector<std::array<double, 2>> coords;  // one (x, y) per embedding
  std::array<double, 2> explained = {0.0, 0.0};  // variance fractions
};

// Top-2 principal directions of the centered data via power iteration with
// deflation (tolerance 1e-10, at most 10,000 iterations, fixed internal
// start vectors). Sign convention: the first loading of each component
// with magnitude above 1e-12 is positive. Throws DegenerateInput when all
// points coincide.
Projection2D pca_project(const std::vector<Vec>& embeddings);

}  // namespace anatcl
