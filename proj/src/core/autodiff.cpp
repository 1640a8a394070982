#include "core/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"

namespace anatcl {

namespace {

double rel_error(double a, double b) {
  return std::fabs(a - b) / std::max(1e-8, std::fabs(a) + std::fabs(b));
}

}  // namespace

Graph::Node& Graph::node(Expr e) {
  if (e.id < 0 || e.id >= static_cast<int>(nodes_.size())) {
    throw InvalidArgument("graph: expression does not belong to this graph");
  }
  return nodes_[static_cast<std::size_t>(e.id)];
}

const Graph::Node& Graph::node(Expr e) const {
  return const_cast<Graph*>(this)->node(e);
}

Expr Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return Expr{static_cast<int>(nodes_.size()) - 1};
}

Expr Graph::constant(Matrix value) {
  require_finite(value, "graph constant");
  Node n;
  n.op = Op::kConstant;
  n.rows = value.rows;
  n.cols = value.cols;
  n.value = std::move(value);
  n.bound = true;
  return push(std::move(n));
}

Expr Graph::constant_scalar(double value) {
  Matrix m(1, 1);
  m.data[0] = value;
  return constant(std::move(m));
}

Expr Graph::parameter(const std::string& name, Matrix value) {
  require_finite(value, "parameter " + name);
  Expr e = parameter(name, value.rows, value.cols);
  Node& n = node(e);
  n.value = std::move(value);
  n.bound = true;
  return e;
}

Expr Graph::parameter(const std::string& name, std::size_t rows,
                      std::size_t cols) {
  if (params_.count(name)) {
    throw InvalidArgument("parameter '" + name + "' already defined");
  }
  Node n;
  n.op = Op::kParameter;
  n.rows = rows;
  n.cols = cols;
  n.name = name;
  Expr e = push(std::move(n));
  params_[name] = e.id;
  param_names_.push_back(name);
  return e;
}

void Graph::bind(const std::string& name, Matrix value) {
  Node& n = node(Expr{param_id(name)});
  if (n.rows != value.rows || n.cols != value.cols) {
    throw InvalidArgument("bind '" + name + "': shape mismatch");
  }
  require_finite(value, "bind " + name);
  n.value = std::move(value);
  n.bound = true;
}

int Graph::param_id(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw InvalidArgument("unknown parameter '" + name + "'");
  }
  return it->second;
}

Expr Graph::matmul(Expr a, Expr b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.cols != nb.rows) {
    throw InvalidArgument("matmul: inner dimensions " +
                          std::to_string(na.cols) + " vs " +
                          std::to_string(nb.rows));
  }
  Node n;
  n.op = Op::kMatMul;
  n.in = {a.id, b.id};
  n.rows = na.rows;
  n.cols = nb.cols;
  return push(std::move(n));
}

Expr Graph::transpose(Expr a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kTranspose;
  n.in = {a.id};
  n.rows = na.cols;
  n.cols = na.rows;
  return push(std::move(n));
}

Expr Graph::add(Expr a, Expr b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.rows != nb.rows || na.cols != nb.cols) {
    throw InvalidArgument("add: shape mismatch");
  }
  Node n;
  n.op = Op::kAdd;
  n.in = {a.id, b.id};
  n.rows = na.rows;
  n.cols = na.cols;
  return push(std::move(n));
}

Expr Graph::negate(Expr a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kNegate;
  n.in = {a.id};
  n.rows = na.rows;
  n.cols = na.cols;
  return push(std::move(n));
}

Expr Graph::scale(Expr a, double c) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kScale;
  n.in = {a.id};
  n.c = c;
  n.rows = na.rows;
  n.cols = na.cols;
  return push(std::move(n));
}

Expr Graph::scalar_mul(Expr a, Expr s) {
  const Node& na = node(a);
  const Node& ns = node(s);
  if (ns.rows != 1 || ns.cols != 1) {
    throw InvalidArgument("scalar_mul: scalar operand must be 1x1");
  }
  Node n;
  n.op = Op::kScalarMul;
  n.in = {a.id, s.id};
  n.rows = na.rows;
  n.cols = na.cols;
  return push(std::move(n));
}

Expr Graph::mul(Expr a, Expr b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.rows != nb.rows || na.cols != nb.cols) {
    throw InvalidArgument("mul: shape mismatch");
  }
  Node n;
  n.op = Op::kMul;
  n.in = {a.id, b.id};
  n.rows = na.rows;
  n.cols = na.cols;
  return push(std::move(n));
}

Expr Graph::exp(Expr a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kExp;
  n.in = {a.id};
  n.rows = na.rows;
  n.cols = na.cols;
  return push(std::move(n));
}

Expr Graph::log(Expr a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kLog;
  n.in = {a.id};
  n.rows = na.rows;
  n.cols = na.cols;
  return push(std::move(n));
}

Expr Graph::sum(Expr a) {
  Node n;
  n.op = Op::kSum;
  n.in = {a.id};
  n.rows = 1;
  n.cols = 1;
  return push(std::move(n));
}

Expr Graph::mean(Expr a) {
  const Node& na = node(a);
  if (na.rows * na.cols == 0) throw InvalidArgument("mean: empty input");
  Node n;
  n.op = Op::kMean;
  n.in = {a.id};
  n.rows = 1;
  n.cols = 1;
  return push(std::move(n));
}

Expr Graph::diag(Expr a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kDiag;
  n.in = {a.id};
  n.rows = std::min(na.rows, na.cols);
  n.cols = 1;
  return push(std::move(n));
}

Expr Graph::stack_rows(const std::vector<Expr>& rows) {
  if (rows.empty()) throw InvalidArgument("stack_rows: no rows");
  const std::size_t d = node(rows[0]).cols;
  for (Expr e : rows) {
    const Node& ne = node(e);
    if (ne.rows != 1 || ne.cols != d) {
      throw InvalidArgument("stack_rows: every input must be a 1x" +
                            std::to_string(d) + " row");
    }
  }
  Node n;
  n.op = Op::kStackRows;
  for (Expr e : rows) n.in.push_back(e.id);
  n.rows = rows.size();
  n.cols = d;
  return push(std::move(n));
}

Expr Graph::row_normalize(Expr a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kRowNormalize;
  n.in = {a.id};
  n.rows = na.rows;
  n.cols = na.cols;
  return push(std::move(n));
}

Expr Graph::softmax_rows(Expr a) {
  const Node& na = node(a);
  if (na.cols == 0) throw InvalidArgument("softmax_rows: empty rows");
  Node n;
  n.op = Op::kSoftmaxRows;
  n.in = {a.id};
  n.rows = na.rows;
  n.cols = na.cols;
  return push(std::move(n));
}

Expr Graph::log_softmax_rows(Expr a) {
  const Node& na = node(a);
  if (na.cols == 0) throw InvalidArgument("log_softmax_rows: empty rows");
  Node n;
  n.op = Op::kLogSoftmaxRows;
  n.in = {a.id};
  n.rows = na.rows;
  n.cols = na.cols;
  return push(std::move(n));
}

Expr Graph::cosine(Expr u, Expr v) {
  const Node& nu = node(u);
  const Node& nv = node(v);
  if (nu.rows != 1 || nv.rows != 1 || nu.cols != nv.cols) {
    throw InvalidArgument("cosine: inputs must be equal-length rows");
  }
  Node n;
  n.op = Op::kCosine;
  n.in = {u.id, v.id};
  n.rows = 1;
  n.cols = 1;
  return push(std::move(n));
}

void Graph::forward() {
  for (Node& n : nodes_) {
    switch (n.op) {
      case Op::kConstant:
        break;
      case Op::kParameter:
        if (!n.bound) {
          throw InvalidArgument("parameter '" + n.name + "' is unbound");
        }
        break;
      case Op::kMatMul:
        n.value = anatcl::matmul(nodes_[n.in[0]].value, nodes_[n.in[1]].value);
        break;
      case Op::kTranspose:
        n.value = anatcl::transpose(nodes_[n.in[0]].value);
        break;
      case Op::kAdd:
        n.value = anatcl::add(nodes_[n.in[0]].value, nodes_[n.in[1]].value);
        break;
      case Op::kNegate:
        n.value = anatcl::scale(nodes_[n.in[0]].value, -1.0);
        break;
      case Op::kScale:
        n.value = anatcl::scale(nodes_[n.in[0]].value, n.c);
        break;
      case Op::kScalarMul:
        n.value = anatcl::scale(nodes_[n.in[0]].value,
                                nodes_[n.in[1]].value.data[0]);
        break;
      case Op::kMul:
        n.value = anatcl::hadamard(nodes_[n.in[0]].value, nodes_[n.in[1]].value);
        break;
      case Op::kExp: {
        n.value = nodes_[n.in[0]].value;
        for (double& x : n.value.data) x = std::exp(x);
        break;
      }
      case Op::kLog: {
        n.value = nodes_[n.in[0]].value;
        for (double& x : n.value.data) {
          if (x <= 0.0) throw DegenerateInput("log: non-positive entry");
          x = std::log(x);
        }
        break;
      }
      case Op::kSum: {
        // Sorted accumulation keeps the reduction bit-identical under any
        // permutation of the inputs (batch order, sentence order).
        const Matrix& a = nodes_[n.in[0]].value;
        n.value = Matrix(1, 1);
        n.value.data[0] = sorted_sum(a.data);
        break;
      }
      case Op::kMean: {
        const Matrix& a = nodes_[n.in[0]].value;
        n.value = Matrix(1, 1);
        n.value.data[0] = sorted_sum(a.data) / static_cast<double>(a.data.size());
        break;
      }
      case Op::kDiag: {
        const Matrix& a = nodes_[n.in[0]].value;
        n.value = Matrix(n.rows, 1);
        for (std::size_t i = 0; i < n.rows; ++i) n.value.at(i, 0) = a.at(i, i);
        break;
      }
      case Op::kStackRows: {
        n.value = Matrix(n.rows, n.cols);
        for (std::size_t i = 0; i < n.in.size(); ++i) {
          const Matrix& r = nodes_[n.in[i]].value;
          std::copy(r.data.begin(), r.data.end(),
                    n.value.data.begin() +
                        static_cast<std::ptrdiff_t>(i * n.cols));
        }
        break;
      }
      case Op::kRowNormalize: {
        const Matrix& a = nodes_[n.in[0]].value;
        n.value = a;
        for (std::size_t i = 0; i < a.rows; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < a.cols; ++j) s += a.at(i, j) * a.at(i, j);
          const double nm = std::sqrt(s);
          if (nm <= kDegenerateNorm) {
            throw DegenerateInput("row_normalize: degenerate row " +
                                  std::to_string(i));
          }
          for (std::size_t j = 0; j < a.cols; ++j) n.value.at(i, j) /= nm;
        }
        break;
      }
      case Op::kSoftmaxRows: {
        const Matrix& a = nodes_[n.in[0]].value;
        n.value = Matrix(a.rows, a.cols);
        for (std::size_t i = 0; i < a.rows; ++i) {
          Vec out = anatcl::softmax(a.row(i));
          std::copy(out.begin(), out.end(),
                    n.value.data.begin() +
                        static_cast<std::ptrdiff_t>(i * a.cols));
        }
        break;
      }
      case Op::kLogSoftmaxRows: {
        const Matrix& a = nodes_[n.in[0]].value;
        n.value = Matrix(a.rows, a.cols);
        for (std::size_t i = 0; i < a.rows; ++i) {
          Vec out = anatcl::log_softmax(a.row(i));
          std::copy(out.begin(), out.end(),
                    n.value.data.begin() +
                        static_cast<std::ptrdiff_t>(i * a.cols));
        }
        break;
      }
      case Op::kCosine: {
        const Matrix& u = nodes_[n.in[0]].value;
        const Matrix& v = nodes_[n.in[1]].value;
        n.value = Matrix(1, 1);
        n.value.data[0] = anatcl::cosine_similarity(u.data, v.data);
        break;
      }
    }
  }
}

void Graph::backward(Expr root) {
  for (Node& n : nodes_) {
    n.grad = Matrix(n.value.rows ? n.value.rows : n.rows,
                    n.value.cols ? n.value.cols : n.cols);
  }
  node(root).grad.data[0] = 1.0;

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = *it;
    const Matrix& g = n.grad;
    switch (n.op) {
      case Op::kConstant:
      case Op::kParameter:
        break;
      case Op::kMatMul: {
        Node& a = nodes_[n.in[0]];
        Node& b = nodes_[n.in[1]];
        a.grad = anatcl::add(a.grad, anatcl::matmul(g, anatcl::transpose(b.value)));
        b.grad = anatcl::add(b.grad, anatcl::matmul(anatcl::transpose(a.value), g));
        break;
      }
      case Op::kTranspose: {
        Node& a = nodes_[n.in[0]];
        a.grad = anatcl::add(a.grad, anatcl::transpose(g));
        break;
      }
      case Op::kAdd: {
        nodes_[n.in[0]].grad = anatcl::add(nodes_[n.in[0]].grad, g);
        nodes_[n.in[1]].grad = anatcl::add(nodes_[n.in[1]].grad, g);
        break;
      }
      case Op::kNegate: {
        Node& a = nodes_[n.in[0]];
        a.grad = anatcl::add(a.grad, anatcl::scale(g, -1.0));
        break;
      }
      case Op::kScale: {
        Node& a = nodes_[n.in[0]];
        a.grad = anatcl::add(a.grad, anatcl::scale(g, n.c));
        break;
      }
      case Op::kScalarMul: {
        Node& a = nodes_[n.in[0]];
        Node& s = nodes_[n.in[1]];
        a.grad = anatcl::add(a.grad, anatcl::scale(g, s.value.data[0]));
        double acc = 0.0;
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          acc += g.data[i] * a.value.data[i];
        }
        s.grad.data[0] += acc;
        break;
      }
      case Op::kMul: {
        Node& a = nodes_[n.in[0]];
        Node& b = nodes_[n.in[1]];
        a.grad = anatcl::add(a.grad, anatcl::hadamard(g, b.value));
        b.grad = anatcl::add(b.grad, anatcl::hadamard(g, a.value));
        break;
      }
      case Op::kExp: {
        Node& a = nodes_[n.in[0]];
        a.grad = anatcl::add(a.grad, anatcl::hadamard(g, n.value));
        break;
      }
      case Op::kLog: {
        Node& a = nodes_[n.in[0]];
        Matrix inv = a.value;
        for (double& x : inv.data) x = 1.0 / x;
        a.grad = anatcl::add(a.grad, anatcl::hadamard(g, inv));
        break;
      }
      case Op::kSum: {
        Node& a = nodes_[n.in[0]];
        const double gs = g.data[0];
        for (double& x : a.grad.data) x += gs;
        break;
      }
      case Op::kMean: {
        Node& a = nodes_[n.in[0]];
        const double gs = g.data[0] / static_cast<double>(a.value.data.size());
        for (double& x : a.grad.data) x += gs;
        break;
      }
      case Op::kDiag: {
        Node& a = nodes_[n.in[0]];
        for (std::size_t i = 0; i < n.rows; ++i) a.grad.at(i, i) += g.at(i, 0);
        break;
      }
      case Op::kStackRows: {
        for (std::size_t i = 0; i < n.in.size(); ++i) {
          Node& r = nodes_[n.in[i]];
          for (std::size_t j = 0; j < n.cols; ++j) {
            r.grad.at(0, j) += g.at(i, j);
          }
        }
        break;
      }
      case Op::kRowNormalize: {
        Node& a = nodes_[n.in[0]];
        for (std::size_t i = 0; i < n.value.rows; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < n.value.cols; ++j) {
            s += a.value.at(i, j) * a.value.at(i, j);
          }
          const double nm = std::sqrt(s);
          double gy = 0.0;
          for (std::size_t j = 0; j < n.value.cols; ++j) {
            gy += g.at(i, j) * n.value.at(i, j);
          }
          for (std::size_t j = 0; j < n.value.cols; ++j) {
            a.grad.at(i, j) += (g.at(i, j) - gy * n.value.at(i, j)) / nm;
          }
        }
        break;
      }
      case Op::kSoftmaxRows: {
        Node& a = nodes_[n.in[0]];
        for (std::size_t i = 0; i < n.value.rows; ++i) {
          double gy = 0.0;
          for (std::size_t j = 0; j < n.value.cols; ++j) {
            gy += g.at(i, j) * n.value.at(i, j);
          }
          for (std::size_t j = 0; j < n.value.cols; ++j) {
            a.grad.at(i, j) += n.value.at(i, j) * (g.at(i, j) - gy);
          }
        }
        break;
      }
      case Op::kLogSoftmaxRows: {
        Node& a = nodes_[n.in[0]];
        for (std::size_t i = 0; i < n.value.rows; ++i) {
          double gs = 0.0;
          for (std::size_t j = 0; j < n.value.cols; ++j) gs += g.at(i, j);
          for (std::size_t j = 0; j < n.value.cols; ++j) {
            a.grad.at(i, j) += g.at(i, j) - std::exp(n.value.at(i, j)) * gs;
          }
        }
        break;
      }
      case Op::kCosine: {
        Node& u = nodes_[n.in[0]];
        Node& v = nodes_[n.in[1]];
        const double gs = g.data[0];
        const double nu = anatcl::norm(u.value.data);
        const double nv = anatcl::norm(v.value.data);
        const double c = n.value.data[0];
        for (std::size_t j = 0; j < u.value.data.size(); ++j) {
          u.grad.data[j] +=
              gs * (v.value.data[j] / (nu * nv) - c * u.value.data[j] / (nu * nu));
          v.grad.data[j] +=
              gs * (u.value.data[j] / (nu * nv) - c * v.value.data[j] / (nv * nv));
        }
        break;
      }
    }
  }
}

double Graph::evaluate(Expr root) {
  const Node& r = node(root);
  if (r.rows != 1 || r.cols != 1) {
    throw InvalidArgument("evaluate: root must be scalar (1x1), got " +
                          std::to_string(r.rows) + "x" + std::to_string(r.cols));
  }
  forward();
  return node(root).value.data[0];
}

const Matrix& Graph::value(Expr e) const { return node(e).value; }

GradReport Graph::evaluate_with_gradients(Expr root) {
  GradReport report;
  report.value = evaluate(root);
  backward(root);
  for (const auto& [name, id] : params_) {
    report.gradients[name] = nodes_[static_cast<std::size_t>(id)].grad;
  }
  return report;
}

FdReport Graph::finite_difference_check(Expr root, double step) {
  if (step <= 0.0) throw InvalidArgument("finite_difference_check: step <= 0");
  GradReport ad = evaluate_with_gradients(root);
  FdReport fd;
  for (const auto& [name, id] : params_) {
    Node& p = nodes_[static_cast<std::size_t>(id)];
    for (std::size_t i = 0; i < p.value.data.size(); ++i) {
      const double saved = p.value.data[i];
      p.value.data[i] = saved + step;
      const double up = evaluate(root);
      p.value.data[i] = saved - step;
      const double down = evaluate(root);
      p.value.data[i] = saved;
      const double g_fd = (up - down) / (2.0 * step);
      const double g_ad = ad.gradients[name].data[i];
      const double err = rel_error(g_ad, g_fd);
      if (err > fd.max_rel_error) {
        fd.max_rel_error = err;
        fd.worst_param = name;
        fd.worst_index = i;
        fd.ad_value = g_ad;
        fd.fd_value = g_fd;
      }
    }
  }
  // Restore cached forward values at the unperturbed point.
  forward();
  return fd;
}

}  // namespace anatcl
