#pragma once

#include <map>
#include <string>
#include <vector>

#include "core/linalg.hpp"

namespace anatcl {

class Graph;

// Handle to a node inside a Graph. Cheap to copy; valid only for the graph
// that created it.
struct Expr {
  int id = -1;
};

// Gradients of a scalar expression with respect to every named parameter.
struct GradReport {
  double value = 0.0;
  std::map<std::string, Matrix> gradients;
};

// Result of comparing reverse-mode gradients against central differences.
struct FdReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double ad_value = 0.0;
  double fd_value = 0.0;
};

// Reverse-mode differentiation over a static DAG of matrix-valued nodes.
//
// Nodes are stored in construction order, which is a topological order by
// construction (inputs must exist before use), so forward evaluation walks
// the node list once and the backward sweep walks it in reverse. Both orders
// are fixed, making every evaluation bit-reproducible.
//
// All values are row-major matrices; vectors are 1xD rows and scalars are
// 1x1. Shapes are checked when a node is built, not at evaluation time.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Expr constant(Matrix value);
  Expr constant_scalar(double value);

  // A named differentiable leaf. Names must be unique within the graph.
  Expr parameter(const std::string& name, Matrix value);
  // Declares the leaf without a value; bind() must run before evaluation.
  Expr parameter(const std::string& name, std::size_t rows, std::size_t cols);
  void bind(const std::string& name, Matrix value);

  Expr matmul(Expr a, Expr b);
  Expr transpose(Expr a);
  Expr add(Expr a, Expr b);
  Expr negate(Expr a);
  Expr scale(Expr a, double c);
  // Elementwise a * s where s is 1x1.
  Expr scalar_mul(Expr a, Expr s);
  // Elementwise product, same shapes.
  Expr mul(Expr a, Expr b);
  Expr exp(Expr a);
  // Elementwise natural log; requires strictly positive entries.
  Expr log(Expr a);
  Expr sum(Expr a);
  Expr mean(Expr a);
  // Main diagonal as a column vector.
  Expr diag(Expr a);
  // Stacks 1xD rows into an NxD matrix.
  Expr stack_rows(const std::vector<Expr>& rows);
  // L2-normalizes each row; degenerate rows raise DegenerateInput.
  Expr row_normalize(Expr a);
  Expr softmax_rows(Expr a);
  Expr log_softmax_rows(Expr a);
  // Cosine similarity of two equal-length row vectors, as a 1x1 node.
  Expr cosine(Expr u, Expr v);

  std::size_t node_rows(Expr e) const { return node(e).rows; }
  std::size_t node_cols(Expr e) const { return node(e).cols; }

  // Forward pass; root must be 1x1.
  double evaluate(Expr root);
  // Value of any node after the last evaluate/evaluate_with_gradients call.
  const Matrix& value(Expr e) const;

  // Forward + reverse sweep. Returns the scalar value and the gradient for
  // every named parameter. Throws InvalidArgument when a parameter is
  // unbound or the root is not scalar.
  GradReport evaluate_with_gradients(Expr root);

  // Central finite differences over every parameter coordinate:
  //   rel_err = |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
  FdReport finite_difference_check(Expr root, double step);

  const std::vector<std::string>& parameter_names() const { return param_names_; }

 private:
  enum class Op {
    kConstant,
    kParameter,
    kMatMul,
    kTranspose,
    kAdd,
    kNegate,
    kScale,
    kScalarMul,
    kMul,
    kExp,
    kLog,
    kSum,
    kMean,
    kDiag,
    kStackRows,
    kRowNormalize,
    kSoftmaxRows,
    kLogSoftmaxRows,
    kCosine,
  };

  struct Node {
    Op op;
    std::vector<int> in;
    double c = 0.0;
    std::size_t rows = 0, cols = 0;
    Matrix value;
    Matrix grad;
    std::string name;
    bool bound = false;
  };

  Expr push(Node n);
  void forward();
  void backward(Expr root);
  Node& node(Expr e);
  const Node& node(Expr e) const;
  int param_id(const std::string& name) const;

  std::vector<Node> nodes_;
  std::map<std::string, int> params_;
  std::vector<std::string> param_names_;
};

}  // namespace anatcl
