#include "core/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"

namespace anatcl {

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_row(const Vec& v) {
  Matrix m(1, v.size());
  m.data = v;
  return m;
}

Vec Matrix::row(std::size_t r) const {
  return Vec(data.begin() + static_cast<std::ptrdiff_t>(r * cols),
             data.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
}

void require_finite(const double* p, std::size_t n, const std::string& what) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) {
      throw DegenerateInput(what + ": non-finite element at index " +
                            std::to_string(i));
    }
  }
}

void require_finite(const Vec& v, const std::string& what) {
  require_finite(v.data(), v.size(), what);
}

void require_finite(const Matrix& m, const std::string& what) {
  require_finite(m.data.data(), m.data.size(), what);
}

double sorted_sum(Vec values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

double dot(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) {
    throw InvalidArgument("dot: length mismatch " + std::to_string(a.size()) +
                          " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const Vec& v) { return std::sqrt(dot(v, v)); }

double cosine_similarity(const Vec& a, const Vec& b) {
  require_finite(a, "cosine_similarity lhs");
  require_finite(b, "cosine_similarity rhs");
  const double na = norm(a);
  const double nb = norm(b);
  if (na <= kDegenerateNorm || nb <= kDegenerateNorm) {
    throw DegenerateInput("cosine_similarity: zero-norm input");
  }
  return dot(a, b) / (na * nb);
}

Vec softmax(const Vec& logits) {
  if (logits.empty()) throw InvalidArgument("softmax: empty input");
  require_finite(logits, "softmax");
  const double m = *std::max_element(logits.begin(), logits.end());
  Vec e(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) e[i] = std::exp(logits[i] - m);
  const double denom = sorted_sum(e);
  for (double& x : e) x /= denom;
  return e;
}

Vec log_softmax(const Vec& logits) {
  if (logits.empty()) throw InvalidArgument("log_softmax: empty input");
  require_finite(logits, "log_softmax");
  const double m = *std::max_element(logits.begin(), logits.end());
  Vec e(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) e[i] = std::exp(logits[i] - m);
  const double log_denom = std::log(sorted_sum(e));
  Vec out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] - m - log_denom;
  }
  return out;
}

Vec l2_normalize(const Vec& v) {
  require_finite(v, "l2_normalize");
  const double n = norm(v);
  if (n <= kDegenerateNorm) {
    throw DegenerateInput("l2_normalize: norm below " +
                          std::to_string(kDegenerateNorm));
  }
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw InvalidArgument("matmul: inner dimensions " + std::to_string(a.cols) +
                          " vs " + std::to_string(b.rows));
  }
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a.at(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) {
        out.at(i, j) += aik * b.at(k, j);
      }
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) out.at(j, i) = m.at(i, j);
  }
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw InvalidArgument("add: shape mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

Matrix scale(const Matrix& m, double c) {
  Matrix out = m;
  for (double& x : out.data) x *= c;
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw InvalidArgument("hadamard: shape mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
  return out;
}

}  // namespace anatcl
