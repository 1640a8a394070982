#include "core/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace anatcl {

SimilarityHistogram similarity_histogram(const std::vector<Vec>& embeddings,
                                         std::size_t bins) {
  if (embeddings.size() < 2) {
    throw InvalidArgument("similarity_histogram: need >= 2 embeddings");
  }
  if (bins == 0) throw InvalidArgument("similarity_histogram: bins must be >= 1");

  SimilarityHistogram h;
  h.edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) {
    h.edges[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(bins);
  }
  h.counts.assign(bins, 0);

  Vec cosines;
  cosines.reserve(embeddings.size() * (embeddings.size() - 1) / 2);
  for (std::size_t a = 0; a < embeddings.size(); ++a) {
    for (std::size_t b = a + 1; b < embeddings.size(); ++b) {
      cosines.push_back(cosine_similarity(embeddings[a], embeddings[b]));
    }
  }
  h.n_pairs = cosines.size();

  double sum = 0.0;
  std::size_t above = 0;
  for (double c : cosines) {
    // Bin = number of interior edges <= c; an exact edge hit goes up, and
    // everything >= the last interior edge (cosine 1.0 included) lands in
    // the final bin.
    const auto idx = static_cast<std::size_t>(
        std::upper_bound(h.edges.begin() + 1, h.edges.end() - 1, c) -
        (h.edges.begin() + 1));
    h.counts[std::min(idx, bins - 1)] += 1;
    sum += c;
    if (c > 0.9) ++above;
  }
  h.mean = sum / static_cast<double>(h.n_pairs);
  h.frac_above_09 =
      static_cast<double>(above) / static_cast<double>(h.n_pairs);

  std::sort(cosines.begin(), cosines.end());
  const std::size_t n = cosines.size();
  h.median = (n % 2 == 1) ? cosines[n / 2]
                          : 0.5 * (cosines[n / 2 - 1] + cosines[n / 2]);
  return h;
}

CollapseIndex collapse_index(const std::vector<Vec>& embeddings,
                             const std::vector<std::size_t>& anatomy_labels) {
  if (embeddings.size() != anatomy_labels.size()) {
    throw InvalidArgument("collapse_index: one label per embedding required");
  }
  const std::set<std::size_t> distinct(anatomy_labels.begin(),
                                       anatomy_labels.end());
  if (distinct.size() < 2) {
    throw InvalidArgument("collapse_index: need >= 2 distinct anatomies");
  }

  double intra_sum = 0.0, inter_sum = 0.0;
  std::size_t intra_n = 0, inter_n = 0, inter_above = 0;
  for (std::size_t a = 0; a < embeddings.size(); ++a) {
    for (std::size_t b = a + 1; b < embeddings.size(); ++b) {
      const double c = cosine_similarity(embeddings[a], embeddings[b]);
      if (anatomy_labels[a] == anatomy_labels[b]) {
        intra_sum += c;
        ++intra_n;
      } else {
        inter_sum += c;
        ++inter_n;
        if (c > 0.9) ++inter_above;
      }
    }
  }

  CollapseIndex ci;
  ci.inter = inter_sum / static_cast<double>(inter_n);
  ci.intra_defined = intra_n > 0;
  ci.intra = ci.intra_defined ? intra_sum / static_cast<double>(intra_n) : 0.0;
  ci.margin = ci.intra - ci.inter;
  ci.ratio = (1.0 - ci.inter) / (1.0 - ci.intra);  // may be inf at intra == 1
  ci.inter_frac_above_09 =
      static_cast<double>(inter_above) / static_cast<double>(inter_n);
  return ci;
}

namespace {

// Dominant eigenpair of the symmetric PSD matrix c. orthogonal_to (when
// non-null) is projected out every iteration to keep the deflated problem
// clean. Returns false when c is numerically zero along every start.
bool power_iteration(const Matrix& c, const Vec* orthogonal_to, Rng& rng,
                     Vec& vec_out, double& value_out) {
  const std::size_t d = c.rows;
  Vec v(d);
  for (double& x : v) x = rng.normal();
  if (orthogonal_to) {
    const double p = dot(v, *orthogonal_to);
    for (std::size_t k = 0; k < d; ++k) v[k] -= p * (*orthogonal_to)[k];
  }
  const double n0 = norm(v);
  if (n0 < 1e-30) return false;
  for (double& x : v) x /= n0;

  for (int iter = 0; iter < 10000; ++iter) {
    Vec next(d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += c.at(r, k) * v[k];
      next[r] = acc;
    }
    if (orthogonal_to) {
      const double p = dot(next, *orthogonal_to);
      for (std::size_t k = 0; k < d; ++k) next[k] -= p * (*orthogonal_to)[k];
    }
    const double nn = norm(next);
    if (nn < 1e-30) return false;  // rank exhausted
    for (double& x : next) x /= nn;
    double delta = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      delta = std::max(delta, std::fabs(next[k] - v[k]));
    }
    v = next;
    if (delta < 1e-10) break;
  }

  Vec cv(d, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t k = 0; k < d; ++k) cv[r] += c.at(r, k) * v[k];
  }
  vec_out = v;
  value_out = dot(v, cv);
  return true;
}

void fix_sign(Vec& v) {
  for (double x : v) {
    if (std::fabs(x) > 1e-12) {
      if (x < 0) {
        for (double& y : v) y = -y;
      }
      return;
    }
  }
}

}  // namespace

Projection2D pca_project(const std::vector<Vec>& embeddings) {
  if (embeddings.size() < 3) {
    throw InvalidArgument("pca_project: need >= 3 embeddings");
  }
  const std::size_t d = embeddings[0].size();
  if (d < 2) throw InvalidArgument("pca_project: need dimension >= 2");
  for (const Vec& e : embeddings) {
    if (e.size() != d) {
      throw InvalidArgument("pca_project: inconsistent dimensions");
    }
  }

  const auto n = static_cast<double>(embeddings.size());
  Vec mean(d, 0.0);
  for (const Vec& e : embeddings) {
    for (std::size_t k = 0; k < d; ++k) mean[k] += e[k];
  }
  for (double& x : mean) x /= n;

  Matrix cov(d, d);
  for (const Vec& e : embeddings) {
    for (std::size_t r = 0; r < d; ++r) {
      const double xr = e[r] - mean[r];
      for (std::size_t k = 0; k < d; ++k) {
        cov.at(r, k) += xr * (e[k] - mean[k]);
      }
    }
  }
  for (double& x : cov.data) x /= n;

  double trace = 0.0;
  for (std::size_t k = 0; k < d; ++k) trace += cov.at(k, k);
  if (trace < 1e-24) {
    throw DegenerateInput("pca_project: all points coincide (rank 0)");
  }

  // Fixed seed keeps the projection a pure function of its input.
  Rng rng(0x9c0ffee123456789ULL, {});
  Vec v1, v2;
  double l1 = 0.0, l2 = 0.0;
  if (!power_iteration(cov, nullptr, rng, v1, l1)) {
    throw DegenerateInput("pca_project: power iteration found no component");
  }

  Matrix deflated = cov;
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t k = 0; k < d; ++k) {
      deflated.at(r, k) -= l1 * v1[r] * v1[k];
    }
  }
  if (!power_iteration(deflated, &v1, rng, v2, l2)) {
    // Rank-1 data: any direction orthogonal to v1 carries zero variance.
    v2.assign(d, 0.0);
    const std::size_t pivot = (std::fabs(v1[0]) < 0.9) ? 0 : 1;
    v2[pivot] = 1.0;
    const double p = dot(v2, v1);
    for (std::size_t k = 0; k < d; ++k) v2[k] -= p * v1[k];
    v2 = l2_normalize(v2);
    l2 = 0.0;
  }
  fix_sign(v1);
  fix_sign(v2);
  l1 = std::max(l1, 0.0);
  l2 = std::min(std::max(l2, 0.0), l1);

  Projection2D out;
  out.explained = {l1 / trace, l2 / trace};
  out.coords.resize(embeddings.size());
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    double x = 0.0, y = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double centered = embeddings[i][k] - mean[k];
      x += centered * v1[k];
      y += centered * v2[k];
    }
    out.coords[i] = {x, y};
  }
  return out;
}

}  // namespace anatcl
