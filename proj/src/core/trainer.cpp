#include "core/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "core/error.hpp"
#include "nlohmann/json.hpp"

namespace anatcl {

namespace {

using nlohmann::json;

double frobenius(const Matrix& m) {
  double sq = 0.0;
  for (double x : m.data) sq += x * x;
  return std::sqrt(sq);
}

std::map<std::string, Matrix> params_to_map(const ModelParams& p) {
  std::map<std::string, Matrix> out;
  out.emplace("W_v", p.W_v);
  out.emplace("W_t", p.W_t);
  for (std::size_t j = 0; j < p.M; ++j)
    out.emplace("Q" + std::to_string(j), Matrix::from_row(p.Q[j]));
  Matrix lt(1, 1);
  lt.data[0] = p.log_tau;
  out.emplace("log_tau", lt);
  return out;
}

void params_from_map(ModelParams& p, const std::map<std::string, Matrix>& m) {
  p.W_v = m.at("W_v");
  p.W_t = m.at("W_t");
  for (std::size_t j = 0; j < p.M; ++j)
    p.Q[j] = m.at("Q" + std::to_string(j)).row(0);
  p.log_tau = m.at("log_tau").data[0];
}

std::string param_norm_summary(const ModelParams& p) {
  std::ostringstream os;
  os << "|W_v|=" << frobenius(p.W_v) << " |W_t|=" << frobenius(p.W_t);
  double qsq = 0.0;
  for (const Vec& q : p.Q)
    for (double x : q) qsq += x * x;
  os << " |Q|=" << std::sqrt(qsq) << " log_tau=" << p.log_tau;
  return os.str();
}

// Full-cohort collapse indices under the current parameters. Reports are
// encoded as stored (no augmentation); labels are the anatomy indices.
EpochSnapshot snapshot_at(std::size_t epoch, const ModelParams& params,
                          const Cohort& cohort, Pooling pooling) {
  const std::size_t M = cohort.config.M;
  std::vector<Vec> text, vis;
  std::vector<std::size_t> text_labels, vis_labels;
  text.reserve(cohort.patients.size() * M);
  vis.reserve(cohort.patients.size() * M);
  for (const auto& patient : cohort.patients) {
    for (std::size_t j = 0; j < M; ++j) {
      vis.push_back(aggregate_visual(params, j, patient[j].visual_tokens));
      vis_labels.push_back(j);
      if (patient[j].sentences.empty()) continue;  // anatomy not mentioned
      text.push_back(encode_report(params, patient[j].sentences, pooling));
      text_labels.push_back(j);
    }
  }
  EpochSnapshot s;
  s.epoch = epoch;
  s.text = collapse_index(text, text_labels);
  s.visual = collapse_index(vis, vis_labels);
  return s;
}

json collapse_to_json(const CollapseIndex& c) {
  json o;
  o["intra"] = c.intra;
  o["inter"] = c.inter;
  o["margin"] = c.margin;
  o["ratio"] = c.ratio;
  o["intra_defined"] = c.intra_defined;
  o["inter_frac_above_09"] = c.inter_frac_above_09;
  return o;
}

}  // namespace

void validate(const TrainConfig& cfg) {
  if (cfg.batch_size == 0)
    throw InvalidArgument("train config: batch_size must be >= 1");
  if (!std::isfinite(cfg.learning_rate) || cfg.learning_rate < 0.0)
    throw InvalidArgument("train config: learning_rate must be finite and >= 0");
  if (!std::isfinite(cfg.lambda) || cfg.lambda < 0.0)
    throw InvalidArgument("train config: lambda must be finite and >= 0");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0))
    throw InvalidArgument("train config: beta1 must lie in [0, 1)");
  if (!(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
    throw InvalidArgument("train config: beta2 must lie in [0, 1)");
  if (!(cfg.eps_adam > 0.0))
    throw InvalidArgument("train config: eps_adam must be > 0");
  if (!std::isfinite(cfg.clip_norm) || cfg.clip_norm <= 0.0)
    throw InvalidArgument("train config: clip_norm must be finite and > 0");
  validate(cfg.augment);
}

void adam_step(std::map<std::string, Matrix>& params,
               const std::map<std::string, Matrix>& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (const auto& [name, gmat] : grads) {
    auto it = params.find(name);
    if (it == params.end())
      throw InvalidArgument("adam_step: gradient for unknown parameter '" +
                            name + "'");
    Matrix& p = it->second;
    if (!p.same_shape(gmat))
      throw InvalidArgument("adam_step: shape mismatch for '" + name + "'");
    Matrix& m =
        state.m.try_emplace(name, Matrix(p.rows, p.cols)).first->second;
    Matrix& v =
        state.v.try_emplace(name, Matrix(p.rows, p.cols)).first->second;
    if (!m.same_shape(p) || !v.same_shape(p))
      throw InvalidArgument("adam_step: stale moment shape for '" + name + "'");
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      const double gk = gmat.data[k];
      m.data[k] = beta1 * m.data[k] + (1.0 - beta1) * gk;
      v.data[k] = beta2 * v.data[k] + (1.0 - beta2) * gk * gk;
      const double mhat = m.data[k] / bc1;
      const double vhat = v.data[k] / bc2;
      p.data[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

LossGraph assemble_loss(Graph& g,
                        const std::vector<std::vector<Expr>>& v_rows,
                        const std::vector<std::vector<Expr>>& r_rows,
                        const AnatomyBatch& availability,
                        const RecombinationPlan* plan, Expr inv_tau,
                        double lambda) {
  const std::size_t M = availability.M;
  LossGraph out;
  out.local.assign(M, std::nullopt);
  std::vector<Expr> terms;
  for (std::size_t j = 0; j < M; ++j) {
    const std::vector<std::size_t> pats = availability.available_patients(j);
    if (pats.empty()) continue;
    std::vector<Expr> vs, rs;
    vs.reserve(pats.size());
    rs.reserve(pats.size());
    for (std::size_t b : pats) {
      vs.push_back(v_rows[b][j]);
      rs.push_back(r_rows[b][j]);
    }
    const Expr lj = graph_bidirectional_infonce(g, g.stack_rows(vs),
                                                g.stack_rows(rs), inv_tau);
    out.local[j] = lj;
    terms.push_back(lj);
  }
  if (terms.empty())
    throw InvalidArgument("assemble_loss: batch has no available pairs");
  Expr total = terms[0];
  for (std::size_t t = 1; t < terms.size(); ++t) total = g.add(total, terms[t]);

  if (plan != nullptr && lambda > 0.0) {
    std::vector<Expr> all_v, all_r;
    for (std::size_t j = 0; j < M; ++j) {
      for (std::size_t b : availability.available_patients(j)) {
        all_v.push_back(v_rows[b][j]);
        all_r.push_back(r_rows[b][j]);
      }
    }
    const Expr sel = g.constant(group_mean_selector(availability, *plan));
    const Expr v_groups = g.matmul(sel, g.stack_rows(all_v));
    const Expr r_groups = g.matmul(sel, g.stack_rows(all_r));
    const Expr lg =
        graph_bidirectional_infonce(g, v_groups, r_groups, inv_tau);
    out.global_loss = lg;
    total = g.add(total, g.scale(lg, lambda));
  }
  out.total = total;
  return out;
}

std::pair<ModelParams, TrainTrace> train(const Cohort& cohort,
                                         const TrainConfig& cfg) {
  validate(cfg);
  const std::size_t n = cohort.patients.size();
  if (n == 0) throw InvalidArgument("train: cohort has no patients");
  if (cfg.batch_size > n)
    throw InvalidArgument("train: batch_size exceeds the cohort size");
  const std::size_t M = cohort.config.M;

  Rng init_rng(cfg.seed, {kStreamModelInit});
  ModelParams params = ModelParams::init(M, cohort.config.D, init_rng);

  AdamState adam;
  TrainTrace trace;
  // Collapse indices need at least two anatomies to define an inter set.
  const bool with_snapshots = M >= 2;
  if (with_snapshots)
    trace.snapshots.push_back(snapshot_at(0, params, cohort, cfg.pooling));

  const double lambda_eff = cfg.enable_global_loss ? cfg.lambda : 0.0;
  std::size_t global_step = 0;
  bool stopped = false;

  for (std::size_t epoch = 1; epoch <= cfg.epochs && !stopped; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(cfg.seed, {kStreamEpochShuffle, epoch});
    shuffle_rng.shuffle(order);

    bool epoch_complete = true;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n;
         start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(start + cfg.batch_size, n);
      const std::size_t B = end - start;

      Graph g;
      const ModelGraphRefs refs = add_model_parameters(g, params);
      const Expr inv_tau = g.exp(g.negate(refs.log_tau));

      AnatomyBatch meta(B, M, cohort.config.D);
      std::vector<std::vector<Expr>> v_rows(B, std::vector<Expr>(M));
      std::vector<std::vector<Expr>> r_rows(B, std::vector<Expr>(M));
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t patient = order[start + b];
        for (std::size_t j = 0; j < M; ++j) {
          const PatientAnatomy& pa = cohort.patients[patient][j];
          if (pa.sentences.empty()) continue;  // anatomy not mentioned
          meta.available[meta.slot(b, j)] = 1;
          v_rows[b][j] = graph_aggregate_visual(
              g, refs, j, g.constant(pa.visual_tokens));
          if (cfg.enable_augment) {
            Rng arng(cfg.seed, {kStreamAugment, epoch,
                                static_cast<std::uint64_t>(patient),
                                static_cast<std::uint64_t>(j)});
            r_rows[b][j] = graph_encode_report(
                g, refs, augment_report(pa.sentences, cfg.augment, arng),
                cfg.pooling);
          } else {
            r_rows[b][j] =
                graph_encode_report(g, refs, pa.sentences, cfg.pooling);
          }
        }
      }

      RecombinationPlan plan;
      const RecombinationPlan* plan_ptr = nullptr;
      if (lambda_eff > 0.0) {
        Rng plan_rng(cfg.seed, {kStreamPlan, epoch, batch_index});
        plan = build_recombination_plan(meta, plan_rng);
        plan_ptr = &plan;
      }

      const LossGraph lg =
          assemble_loss(g, v_rows, r_rows, meta, plan_ptr, inv_tau, lambda_eff);
      GradReport rep = g.evaluate_with_gradients(lg.total);

      ++global_step;
      if (!std::isfinite(rep.value))
        throw NumericError("train: non-finite loss at step " +
                           std::to_string(global_step) + " (" +
                           param_norm_summary(params) + ")");
      for (const auto& [name, gmat] : rep.gradients) {
        for (double x : gmat.data) {
          if (!std::isfinite(x))
            throw NumericError("train: non-finite gradient for '" + name +
                               "' at step " + std::to_string(global_step) +
                               " (" + param_norm_summary(params) + ")");
        }
      }

      StepRecord record;
      record.step = global_step;
      record.loss.total = rep.value + 0.0;
      record.loss.local.assign(M, std::nullopt);
      for (std::size_t j = 0; j < M; ++j) {
        if (lg.local[j])
          record.loss.local[j] = g.value(*lg.local[j]).data[0] + 0.0;
      }
      if (lg.global_loss)
        record.loss.global_loss = g.value(*lg.global_loss).data[0] + 0.0;
      record.loss.tau = params.tau();
      record.loss.lambda = lambda_eff;

      double grad_sq = 0.0;
      for (const auto& [name, gmat] : rep.gradients)
        for (double x : gmat.data) grad_sq += x * x;
      const double grad_norm = std::sqrt(grad_sq);
      if (grad_norm > cfg.clip_norm) {
        const double factor = cfg.clip_norm / grad_norm;
        for (auto& [name, gmat] : rep.gradients)
          for (double& x : gmat.data) x *= factor;
        record.clipped = true;
      }

      std::map<std::string, Matrix> pmap = params_to_map(params);
      adam_step(pmap, rep.gradients, adam, cfg.learning_rate, cfg.beta1,
                cfg.beta2, cfg.eps_adam);
      params_from_map(params, pmap);

      trace.steps.push_back(std::move(record));

      if (cfg.max_steps > 0 && global_step >= cfg.max_steps) {
        stopped = true;
        epoch_complete = (end == n);
        break;
      }
    }
    if (with_snapshots && epoch_complete)
      trace.snapshots.push_back(snapshot_at(epoch, params, cohort, cfg.pooling));
  }
  return {std::move(params), std::move(trace)};
}

std::string trace_to_jsonl(const TrainTrace& trace) {
  std::string out;
  for (const StepRecord& s : trace.steps) {
    json o;
    o["step"] = s.step;
    o["loss_total"] = s.loss.total;
    json loc = json::array();
    for (const auto& l : s.loss.local) {
      if (l)
        loc.push_back(*l);
      else
        loc.push_back(nullptr);
    }
    o["loss_local"] = loc;
    if (s.loss.global_loss) o["loss_global"] = *s.loss.global_loss;
    o["tau"] = s.loss.tau;
    o["lambda"] = s.loss.lambda;
    o["clipped"] = s.clipped;
    out += o.dump();
    out += '\n';
  }
  for (const EpochSnapshot& s : trace.snapshots) {
    json o;
    o["epoch"] = s.epoch;
    o["text"] = collapse_to_json(s.text);
    o["visual"] = collapse_to_json(s.visual);
    out += o.dump();
    out += '\n';
  }
  return out;
}

void write_trace(const TrainTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_trace: cannot open '" + path + "'");
  out << trace_to_jsonl(trace);
  if (!out) throw IoError("write_trace: write failed for '" + path + "'");
}

GradcheckReport run_gradcheck(const GradcheckConfig& cfg) {
  if (cfg.n_configs == 0)
    throw InvalidArgument("gradcheck: n_configs must be >= 1");
  if (cfg.max_b == 0 || cfg.max_m == 0 || cfg.max_d < 2)
    throw InvalidArgument("gradcheck: size bounds must allow B,M >= 1, D >= 2");
  GradcheckReport report;
  for (std::size_t c = 0; c < cfg.n_configs; ++c) {
    Rng rng(cfg.seed, {5, c});
    const std::size_t B = 1 + rng.uniform_below(cfg.max_b);
    const std::size_t M = 1 + rng.uniform_below(cfg.max_m);
    const std::size_t D = 2 + rng.uniform_below(cfg.max_d - 1);
    const std::size_t T = 1 + rng.uniform_below(3);
    const std::size_t L = 1 + rng.uniform_below(3);

    ModelParams params = ModelParams::init(M, D, rng);
    Graph g;
    const ModelGraphRefs refs = add_model_parameters(g, params);
    const Expr inv_tau = g.exp(g.negate(refs.log_tau));

    AnatomyBatch meta(B, M, D);
    std::fill(meta.available.begin(), meta.available.end(), 1);
    std::vector<std::vector<Expr>> v_rows(B, std::vector<Expr>(M));
    std::vector<std::vector<Expr>> r_rows(B, std::vector<Expr>(M));
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t j = 0; j < M; ++j) {
        const std::string tag =
            std::to_string(b) + "_" + std::to_string(j);
        Matrix tok(T, D);
        for (double& x : tok.data) x = rng.uniform_in(-1.0, 1.0);
        v_rows[b][j] =
            graph_aggregate_visual(g, refs, j, g.parameter("tok_" + tag, tok));
        std::vector<Expr> sent;
        for (std::size_t s = 0; s < L; ++s) {
          Matrix row(1, D);
          for (double& x : row.data) x = rng.uniform_in(-1.0, 1.0);
          sent.push_back(
              g.parameter("sent_" + tag + "_" + std::to_string(s), row));
        }
        r_rows[b][j] =
            graph_encode_report_expr(g, refs, sent, Pooling::kPositional);
      }
    }

    Rng plan_rng(cfg.seed, {5, c, 1});
    const RecombinationPlan plan = build_recombination_plan(meta, plan_rng);
    const RecombinationPlan* plan_ptr = cfg.lambda > 0.0 ? &plan : nullptr;
    const LossGraph lg =
        assemble_loss(g, v_rows, r_rows, meta, plan_ptr, inv_tau, cfg.lambda);
    const FdReport fd = g.finite_difference_check(lg.total, cfg.step);

    GradcheckCase cs;
    cs.b = B;
    cs.m = M;
    cs.d = D;
    cs.tokens = T;
    cs.sentences = L;
    cs.max_rel_error = fd.max_rel_error;
    cs.worst_param = fd.worst_param;
    cs.worst_index = fd.worst_index;
    report.cases.push_back(std::move(cs));
    report.max_rel_error = std::max(report.max_rel_error, fd.max_rel_error);
  }
  report.pass = report.max_rel_error <= cfg.tolerance;
  return report;
}

}  // namespace anatcl
