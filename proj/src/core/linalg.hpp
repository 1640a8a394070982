#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace anatcl {

using Vec = std::vector<double>;

// Norms below this threshold count as degenerate and raise DegenerateInput.
inline constexpr double kDegenerateNorm = 1e-12;

// Dense row-major matrix of doubles. Shape is fixed at construction.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Matrix identity(std::size_t n);
  static Matrix from_row(const Vec& v);

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const {
    return rows == o.rows && cols == o.cols;
  }
  Vec row(std::size_t r) const;

  bool operator==(const Matrix&) const = default;
};

// Throws DegenerateInput if any element is NaN or infinite.
void require_finite(const double* p, std::size_t n, const std::string& what);
void require_finite(const Vec& v, const std::string& what);
void require_finite(const Matrix& m, const std::string& what);

// Sum with addends accumulated in ascending value order. Makes reductions
// invariant to input permutation at the bit level.
double sorted_sum(Vec values);

double dot(const Vec& a, const Vec& b);
double norm(const Vec& v);

// <a,b> / (|a||b|). Throws DegenerateInput when either norm is below
// kDegenerateNorm; a silent 0 here would poison downstream gradients.
double cosine_similarity(const Vec& a, const Vec& b);

// Max-subtracted softmax. The denominator uses sorted_sum so that permuting
// the logits permutes the outputs bit-exactly.
Vec softmax(const Vec& logits);

// Fused log(softmax) with max subtraction.
Vec log_softmax(const Vec& logits);

// v / |v|. Throws DegenerateInput when |v| <= kDegenerateNorm.
Vec l2_normalize(const Vec& v);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double c);
Matrix hadamard(const Matrix& a, const Matrix& b);

}  // namespace anatcl
