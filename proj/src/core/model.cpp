#include "core/model.hpp"

#include <cmath>
#include <fstream>

#include "core/error.hpp"
#include "json.hpp"

namespace anatcl {

namespace {

// Pooled sentence vector, before projection. Mean mode accumulates each
// dimension in sorted order so the result is permutation-invariant at the
// bit level; positional mode is deliberately order-sensitive.
Vec pool_sentences(const std::vector<Vec>& sentences, Pooling pooling) {
  if (sentences.empty()) {
    throw InvalidArgument("encode_report: empty sentence list");
  }
  const std::size_t d = sentences[0].size();
  for (const Vec& s : sentences) {
    if (s.size() != d) {
      throw InvalidArgument("encode_report: inconsistent sentence dimensions");
    }
    require_finite(s, "sentence feature");
  }
  Vec pooled(d, 0.0);
  if (pooling == Pooling::kMean) {
    Vec column(sentences.size());
    for (std::size_t k = 0; k < d; ++k) {
      for (std::size_t s = 0; s < sentences.size(); ++s) column[s] = sentences[s][k];
      pooled[k] = sorted_sum(column) / static_cast<double>(sentences.size());
    }
  } else {
    double wsum = 0.0;
    double w = 1.0;
    for (std::size_t s = 0; s < sentences.size(); ++s) {
      for (std::size_t k = 0; k < d; ++k) pooled[k] += w * sentences[s][k];
      wsum += w;
      w *= 0.8;
    }
    for (double& x : pooled) x /= wsum;
  }
  return pooled;
}

Vec positional_weights(std::size_t count) {
  Vec w(count);
  double v = 1.0;
  double wsum = 0.0;
  for (std::size_t s = 0; s < count; ++s) {
    w[s] = v;
    wsum += v;
    v *= 0.8;
  }
  for (double& x : w) x /= wsum;
  return w;
}

// row . W^T, i.e. W applied to the row seen as a column vector.
Vec apply_projection(const Matrix& w, const Vec& v) {
  Vec out(w.rows, 0.0);
  for (std::size_t r = 0; r < w.rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < w.cols; ++c) acc += w.at(r, c) * v[c];
    out[r] = acc;
  }
  return out;
}

}  // namespace

Pooling pooling_from_string(const std::string& s) {
  if (s == "mean") return Pooling::kMean;
  if (s == "positional") return Pooling::kPositional;
  throw InvalidArgument("unknown pooling mode '" + s +
                        "' (expected mean|positional)");
}

std::string to_string(Pooling p) {
  return p == Pooling::kMean ? "mean" : "positional";
}

ModelParams ModelParams::init(std::size_t M, std::size_t D, Rng& rng) {
  if (M == 0 || D == 0) throw InvalidArgument("model init: M and D must be >= 1");
  ModelParams p;
  p.M = M;
  p.D = D;
  p.W_v = Matrix::identity(D);
  for (double& x : p.W_v.data) x += rng.uniform_in(-0.01, 0.01);
  p.W_t = Matrix::identity(D);
  for (double& x : p.W_t.data) x += rng.uniform_in(-0.01, 0.01);
  const double qb = 1.0 / std::sqrt(static_cast<double>(D));
  p.Q.resize(M, Vec(D));
  for (std::size_t j = 0; j < M; ++j) {
    for (std::size_t k = 0; k < D; ++k) p.Q[j][k] = rng.uniform_in(-qb, qb);
  }
  p.log_tau = std::log(0.07);
  return p;
}

double ModelParams::tau() const { return std::exp(log_tau); }

Vec attention_weights(const ModelParams& params, std::size_t anatomy_index,
                      const Matrix& tokens) {
  if (anatomy_index >= params.M) {
    throw InvalidArgument("anatomy index " + std::to_string(anatomy_index) +
                          " out of range (M=" + std::to_string(params.M) + ")");
  }
  if (tokens.rows == 0 || tokens.cols != params.D) {
    throw InvalidArgument("aggregate_visual: tokens must be TxD with T >= 1");
  }
  require_finite(tokens, "visual tokens");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(params.D));
  Vec logits(tokens.rows);
  for (std::size_t t = 0; t < tokens.rows; ++t) {
    const Vec projected = apply_projection(params.W_v, tokens.row(t));
    logits[t] = dot(params.Q[anatomy_index], projected) * inv_sqrt_d;
  }
  return softmax(logits);
}

Vec aggregate_visual(const ModelParams& params, std::size_t anatomy_index,
                     const Matrix& tokens) {
  const Vec weights = attention_weights(params, anatomy_index, tokens);
  Vec out(params.D, 0.0);
  for (std::size_t t = 0; t < tokens.rows; ++t) {
    const Vec projected = apply_projection(params.W_v, tokens.row(t));
    for (std::size_t k = 0; k < params.D; ++k) out[k] += weights[t] * projected[k];
  }
  return l2_normalize(out);
}

Vec encode_report(const ModelParams& params, const std::vector<Vec>& sentences,
                  Pooling pooling) {
  const Vec pooled = pool_sentences(sentences, pooling);
  if (pooled.size() != params.D) {
    throw InvalidArgument("encode_report: sentence dimension " +
                          std::to_string(pooled.size()) + " != D=" +
                          std::to_string(params.D));
  }
  return l2_normalize(apply_projection(params.W_t, pooled));
}

double temperature(const ModelParams& params) { return params.tau(); }

ModelGraphRefs add_model_parameters(Graph& g, const ModelParams& params) {
  ModelGraphRefs refs;
  refs.W_v = g.parameter("W_v", params.W_v);
  refs.W_t = g.parameter("W_t", params.W_t);
  refs.Q.reserve(params.M);
  for (std::size_t j = 0; j < params.M; ++j) {
    refs.Q.push_back(
        g.parameter("Q" + std::to_string(j), Matrix::from_row(params.Q[j])));
  }
  refs.log_tau = g.parameter("log_tau", Matrix::from_row({params.log_tau}));
  return refs;
}

void bind_model_parameters(Graph& g, const ModelParams& params) {
  g.bind("W_v", params.W_v);
  g.bind("W_t", params.W_t);
  for (std::size_t j = 0; j < params.M; ++j) {
    g.bind("Q" + std::to_string(j), Matrix::from_row(params.Q[j]));
  }
  g.bind("log_tau", Matrix::from_row({params.log_tau}));
}

Expr graph_aggregate_visual(Graph& g, const ModelGraphRefs& refs,
                            std::size_t anatomy_index, Expr tokens) {
  if (anatomy_index >= refs.Q.size()) {
    throw InvalidArgument("anatomy index " + std::to_string(anatomy_index) +
                          " out of range (M=" + std::to_string(refs.Q.size()) +
                          ")");
  }
  const std::size_t d = g.node_cols(tokens);
  Expr projected = g.matmul(tokens, g.transpose(refs.W_v));  // TxD
  Expr logits = g.scale(g.matmul(refs.Q[anatomy_index], g.transpose(projected)),
                        1.0 / std::sqrt(static_cast<double>(d)));  // 1xT
  Expr weights = g.softmax_rows(logits);
  return g.row_normalize(g.matmul(weights, projected));  // 1xD
}

Expr graph_encode_report(Graph& g, const ModelGraphRefs& refs,
                         const std::vector<Vec>& sentences, Pooling pooling) {
  Expr pooled = g.constant(Matrix::from_row(pool_sentences(sentences, pooling)));
  return g.row_normalize(g.matmul(pooled, g.transpose(refs.W_t)));
}

Expr graph_encode_report_expr(Graph& g, const ModelGraphRefs& refs,
                              const std::vector<Expr>& sentences,
                              Pooling pooling) {
  if (sentences.empty()) {
    throw InvalidArgument("encode_report: empty sentence list");
  }
  Vec w;
  if (pooling == Pooling::kMean) {
    w.assign(sentences.size(), 1.0 / static_cast<double>(sentences.size()));
  } else {
    w = positional_weights(sentences.size());
  }
  Expr stacked = g.stack_rows(sentences);                  // LxD
  Expr pooled = g.matmul(g.constant(Matrix::from_row(w)), stacked);  // 1xD
  return g.row_normalize(g.matmul(pooled, g.transpose(refs.W_t)));
}

Expr graph_temperature(Graph& g, const ModelGraphRefs& refs) {
  return g.exp(refs.log_tau);
}

namespace {

nlohmann::json matrix_to_json(std::size_t rows, std::size_t cols,
                              const Vec& data) {
  nlohmann::json j;
  j["shape"] = {rows, cols};
  j["data"] = data;
  return j;
}

void json_to_matrix(const nlohmann::json& j, std::size_t rows,
                    std::size_t cols, Vec& out, const std::string& name) {
  const auto& shape = j.at("shape");
  if (shape.size() != 2 || shape[0].get<std::size_t>() != rows ||
      shape[1].get<std::size_t>() != cols) {
    throw IoError("checkpoint: unexpected shape for " + name);
  }
  out = j.at("data").get<Vec>();
  if (out.size() != rows * cols) {
    throw IoError("checkpoint: data length mismatch for " + name);
  }
}

constexpr int kCheckpointVersion = 1;

}  // namespace

void write_checkpoint(const ModelParams& params, const std::string& path) {
  nlohmann::json j;
  j["version"] = kCheckpointVersion;
  j["M"] = params.M;
  j["D"] = params.D;
  nlohmann::json p;
  p["W_v"] = matrix_to_json(params.D, params.D, params.W_v.data);
  p["W_t"] = matrix_to_json(params.D, params.D, params.W_t.data);
  for (std::size_t q = 0; q < params.M; ++q) {
    p["Q" + std::to_string(q)] = matrix_to_json(1, params.D, params.Q[q]);
  }
  p["log_tau"] = matrix_to_json(1, 1, {params.log_tau});
  j["params"] = std::move(p);

  std::ofstream out(path);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

ModelParams read_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint parse error in " + path + ": " + e.what());
  }
  try {
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw IoError("checkpoint version " + std::to_string(version) +
                    " unsupported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
    }
    ModelParams params;
    params.M = j.at("M").get<std::size_t>();
    params.D = j.at("D").get<std::size_t>();
    const auto& p = j.at("params");
    params.W_v = Matrix(params.D, params.D);
    params.W_t = Matrix(params.D, params.D);
    json_to_matrix(p.at("W_v"), params.D, params.D, params.W_v.data, "W_v");
    json_to_matrix(p.at("W_t"), params.D, params.D, params.W_t.data, "W_t");
    params.Q.resize(params.M);
    for (std::size_t q = 0; q < params.M; ++q) {
      const std::string name = "Q" + std::to_string(q);
      json_to_matrix(p.at(name), 1, params.D, params.Q[q], name);
    }
    Vec lt;
    json_to_matrix(p.at("log_tau"), 1, 1, lt, "log_tau");
    params.log_tau = lt[0];
    return params;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint field error in " + path + ": " + e.what());
  }
}

}  // namespace anatcl
