#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "core/autodiff.hpp"
#include "core/linalg.hpp"
#include "core/rng.hpp"

namespace anatcl {

// Sentence pooling for the text encoder. Positional is the default: it
// weights sentence s by 0.8^(s-1), so sentence order matters and shuffle
// augmentation has something to perturb. Mean pooling is order-free.
enum class Pooling { kMean, kPositional };

Pooling pooling_from_string(const std::string& s);
std::string to_string(Pooling p);

// Learnable state of the toy encoders. Anatomy indices are 0-based
// throughout the library.
struct ModelParams {
  std::size_t M = 0;  // anatomy count
  std::size_t D = 0;  // embedding dimension
  std::vector<Vec> Q;  // M query rows, each length D
  Matrix W_v;          // DxD visual projection
  Matrix W_t;          // DxD text projection
  double log_tau = 0.0;

  // W_v, W_t = identity + elementwise U(-0.01, 0.01); Q rows U(-1/sqrt(D),
  // 1/sqrt(D)); log_tau = ln 0.07. Draw order is fixed: W_v rows, W_t rows,
  // Q rows, in index order.
  static ModelParams init(std::size_t M, std::size_t D, Rng& rng);

  double tau() const;  // exp(log_tau), positive by construction
};

// Single-head scaled dot-product attention over the token rows:
//   p_t = W_v f_t,  weights = softmax(Q_j . p_t / sqrt(D)),
//   out = l2_normalize(sum_t weights_t p_t).
// tokens is TxD, one token per row. Throws on out-of-range anatomy index or
// a degenerate (all-zero) attention output.
Vec aggregate_visual(const ModelParams& params, std::size_t anatomy_index,
                     const Matrix& tokens);

// Attention weights alone, for diagnostics and invariance tests.
Vec attention_weights(const ModelParams& params, std::size_t anatomy_index,
                      const Matrix& tokens);

// Pools sentence feature vectors then projects and normalizes:
//   mean:       pooled = mean_s f_s
//   positional: pooled = sum_s w_s f_s / sum_s w_s, w_s = 0.8^(s-1)
//   out = l2_normalize(W_t pooled)
// Mean pooling accumulates each dimension in sorted order, so a sentence
// permutation yields a bit-identical result.
Vec encode_report(const ModelParams& params, const std::vector<Vec>& sentences,
                  Pooling pooling);

double temperature(const ModelParams& params);

// Expr handles for every learnable leaf of a model inside one Graph.
// Parameter names: "Q<j>", "W_v", "W_t", "log_tau".
struct ModelGraphRefs {
  std::vector<Expr> Q;  // 1xD each
  Expr W_v;
  Expr W_t;
  Expr log_tau;  // 1x1
};

ModelGraphRefs add_model_parameters(Graph& g, const ModelParams& params);

// Rebinds the graph leaves to the current parameter values. Graph topology
// is reused across training steps; only leaf values change.
void bind_model_parameters(Graph& g, const ModelParams& params);

// Attention as a differentiable subgraph. tokens may be a constant or a
// parameter node of shape TxD; output is a unit-norm 1xD row.
Expr graph_aggregate_visual(Graph& g, const ModelGraphRefs& refs,
                            std::size_t anatomy_index, Expr tokens);

// Text encoding with sentence features fixed as data. Pooling runs outside
// the graph (mean uses sorted accumulation, matching encode_report bitwise)
// and enters as a constant; only W_t receives gradients.
Expr graph_encode_report(Graph& g, const ModelGraphRefs& refs,
                         const std::vector<Vec>& sentences, Pooling pooling);

// Text encoding with sentence features as graph nodes (1xD each), for
// gradient checks that differentiate with respect to the inputs.
Expr graph_encode_report_expr(Graph& g, const ModelGraphRefs& refs,
                              const std::vector<Expr>& sentences,
                              Pooling pooling);

// exp(log_tau) as a 1x1 node.
Expr graph_temperature(Graph& g, const ModelGraphRefs& refs);

// Checkpoint file: JSON {version, M, D, params: {name: {shape, data}}}.
// Doubles are written as shortest round-trip decimals, so read(write(p))
// is bit-exact.
void write_checkpoint(const ModelParams& params, const std::string& path);
ModelParams read_checkpoint(const std::string& path);

}  // namespace anatcl
