#include "core/objective.hpp"

#include <algorithm>
#include <numeric>

#include "core/error.hpp"

namespace anatcl {

void AnatomyBatch::set_pair(std::size_t i, std::size_t j, Vec v, Vec r) {
  if (i >= B || j >= M) throw InvalidArgument("set_pair: index out of range");
  if (v.size() != D || r.size() != D) {
    throw InvalidArgument("set_pair: token dimension != D");
  }
  require_finite(v, "visual token");
  require_finite(r, "report token");
  const std::size_t s = slot(i, j);
  V[s] = std::move(v);
  R[s] = std::move(r);
  available[s] = 1;
}

std::size_t AnatomyBatch::n_available(std::size_t j) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < B; ++i) n += is_available(i, j) ? 1 : 0;
  return n;
}

std::vector<std::size_t> AnatomyBatch::available_patients(std::size_t j) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < B; ++i) {
    if (is_available(i, j)) out.push_back(i);
  }
  return out;
}

std::size_t RecombinationPlan::group_size(std::size_t k) const {
  std::size_t m = 0;
  for (const auto& row : assignment) m += (row[k] != kAbsent) ? 1 : 0;
  return m;
}

Expr graph_bidirectional_infonce(Graph& g, Expr v_stack, Expr r_stack,
                                 Expr inv_tau) {
  const std::size_t n = g.node_rows(v_stack);
  if (n == 0 || g.node_rows(r_stack) != n ||
      g.node_cols(v_stack) != g.node_cols(r_stack)) {
    throw InvalidArgument("infonce: stacks must be same-shape with N >= 1");
  }
  Expr sim = g.matmul(g.row_normalize(v_stack),
                      g.transpose(g.row_normalize(r_stack)));
  Expr logits = g.scalar_mul(sim, inv_tau);
  Expr diag_sum = g.sum(g.add(g.diag(g.log_softmax_rows(logits)),
                              g.diag(g.log_softmax_rows(g.transpose(logits)))));
  return g.scale(g.negate(diag_sum), 1.0 / static_cast<double>(n));
}

namespace {

Matrix stack_rows_matrix(const std::vector<const Vec*>& rows, std::size_t d) {
  Matrix m(rows.size(), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i]->size() != d) {
      throw InvalidArgument("stack: inconsistent row length");
    }
    std::copy(rows[i]->begin(), rows[i]->end(),
              m.data.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return m;
}

double infonce_value(const Matrix& v_stack, const Matrix& r_stack, double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("temperature must be > 0");
  Graph g;
  Expr loss = graph_bidirectional_infonce(g, g.constant(v_stack),
                                          g.constant(r_stack),
                                          g.constant_scalar(1.0 / tau));
  return g.evaluate(loss) + 0.0;  // -0 from the N=1 case folds to +0
}

}  // namespace

std::optional<double> local_contrastive_loss(const AnatomyBatch& batch,
                                             std::size_t j, double tau) {
  if (j >= batch.M) throw InvalidArgument("anatomy index out of range");
  if (!(tau > 0.0)) throw InvalidArgument("temperature must be > 0");
  const std::vector<std::size_t> avail = batch.available_patients(j);
  if (avail.empty()) return std::nullopt;
  std::vector<const Vec*> v_rows, r_rows;
  for (std::size_t i : avail) {
    v_rows.push_back(&batch.V[batch.slot(i, j)]);
    r_rows.push_back(&batch.R[batch.slot(i, j)]);
  }
  return infonce_value(stack_rows_matrix(v_rows, batch.D),
                       stack_rows_matrix(r_rows, batch.D), tau);
}

RecombinationPlan plan_from_permutations(
    const AnatomyBatch& batch,
    const std::vector<std::vector<std::size_t>>& slot_order,
    const std::vector<std::vector<std::size_t>>& avail_order) {
  if (slot_order.size() != batch.M || avail_order.size() != batch.M) {
    throw InvalidArgument("plan: need one permutation pair per anatomy");
  }
  RecombinationPlan plan;
  plan.K = batch.B;
  plan.assignment.assign(batch.M,
                         std::vector<std::size_t>(batch.B,
                                                  RecombinationPlan::kAbsent));
  for (std::size_t j = 0; j < batch.M; ++j) {
    const std::size_t n = avail_order[j].size();
    if (n != batch.n_available(j) || slot_order[j].size() < n) {
      throw InvalidArgument("plan: permutation sizes do not match availability");
    }
    for (std::size_t idx = 0; idx < n; ++idx) {
      const std::size_t k = slot_order[j][idx];
      const std::size_t i = avail_order[j][idx];
      if (k >= batch.B || !batch.is_available(i, j) ||
          plan.assignment[j][k] != RecombinationPlan::kAbsent) {
        throw InvalidArgument("plan: invalid slot or patient assignment");
      }
      plan.assignment[j][k] = i;
    }
  }

  // Drop empty groups, keeping slot order.
  std::vector<std::size_t> kept;
  for (std::size_t k = 0; k < batch.B; ++k) {
    if (plan.group_size(k) > 0) kept.push_back(k);
  }
  if (kept.empty()) throw InvalidArgument("plan: batch has no available pairs");
  for (auto& row : plan.assignment) {
    std::vector<std::size_t> compact(kept.size());
    for (std::size_t k = 0; k < kept.size(); ++k) compact[k] = row[kept[k]];
    row = std::move(compact);
  }
  plan.K = kept.size();
  return plan;
}

RecombinationPlan build_recombination_plan(const AnatomyBatch& batch,
                                           Rng& rng) {
  if (batch.B == 0 || batch.M == 0) throw InvalidArgument("plan: empty batch");
  bool any = false;
  for (char a : batch.available) any = any || (a != 0);
  if (!any) throw InvalidArgument("plan: batch has no available pairs");

  std::vector<std::vector<std::size_t>> slot_order(batch.M);
  std::vector<std::vector<std::size_t>> avail_order(batch.M);
  for (std::size_t j = 0; j < batch.M; ++j) {
    avail_order[j] = batch.available_patients(j);
    if (avail_order[j].empty()) continue;  // consumes no draws
    slot_order[j].resize(batch.B);
    std::iota(slot_order[j].begin(), slot_order[j].end(), std::size_t{0});
    rng.shuffle(slot_order[j]);
    rng.shuffle(avail_order[j]);
  }
  return plan_from_permutations(batch, slot_order, avail_order);
}

std::vector<std::pair<Vec, Vec>> synthesize_global_tokens(
    const AnatomyBatch& batch, const RecombinationPlan& plan) {
  if (plan.assignment.size() != batch.M) {
    throw InvalidArgument("plan does not match batch anatomy count");
  }
  std::vector<std::pair<Vec, Vec>> globals;
  globals.reserve(plan.K);
  for (std::size_t k = 0; k < plan.K; ++k) {
    Vec v(batch.D, 0.0), r(batch.D, 0.0);
    std::size_t m = 0;
    for (std::size_t j = 0; j < batch.M; ++j) {
      const std::size_t i = plan.assignment[j][k];
      if (i == RecombinationPlan::kAbsent) continue;
      if (!batch.is_available(i, j)) {
        throw InvalidArgument("plan assigns an unavailable pair");
      }
      const std::size_t s = batch.slot(i, j);
      for (std::size_t d = 0; d < batch.D; ++d) {
        v[d] += batch.V[s][d];
        r[d] += batch.R[s][d];
      }
      ++m;
    }
    if (m == 0) throw InvalidArgument("plan contains an empty group");
    const double inv = 1.0 / static_cast<double>(m);
    for (double& x : v) x *= inv;
    for (double& x : r) x *= inv;
    globals.emplace_back(std::move(v), std::move(r));
  }
  return globals;
}

double global_contrastive_loss(
    const std::vector<std::pair<Vec, Vec>>& globals, double tau) {
  if (globals.empty()) throw InvalidArgument("global loss: no groups");
  const std::size_t d = globals[0].first.size();
  std::vector<const Vec*> v_rows, r_rows;
  for (const auto& [v, r] : globals) {
    v_rows.push_back(&v);
    r_rows.push_back(&r);
  }
  return infonce_value(stack_rows_matrix(v_rows, d),
                       stack_rows_matrix(r_rows, d), tau);
}

LossBreakdown total_loss(const AnatomyBatch& batch,
                         const RecombinationPlan& plan, double tau,
                         double lambda) {
  if (lambda < 0.0) throw InvalidArgument("lambda must be >= 0");
  LossBreakdown out;
  out.tau = tau;
  out.lambda = lambda;
  out.local.resize(batch.M);
  double total = 0.0;
  for (std::size_t j = 0; j < batch.M; ++j) {
    out.local[j] = local_contrastive_loss(batch, j, tau);
    if (out.local[j]) total += *out.local[j];
  }
  if (lambda > 0.0) {
    out.global_loss =
        global_contrastive_loss(synthesize_global_tokens(batch, plan), tau);
    total += lambda * *out.global_loss;
  }
  out.total = total;
  return out;
}

Matrix group_mean_selector(const AnatomyBatch& batch,
                           const RecombinationPlan& plan) {
  // Stacked-row position of available pair (j, i): anatomy-major order.
  std::vector<std::size_t> offset(batch.M, 0);
  std::size_t total = 0;
  for (std::size_t j = 0; j < batch.M; ++j) {
    offset[j] = total;
    total += batch.n_available(j);
  }
  Matrix sel(plan.K, total);
  for (std::size_t k = 0; k < plan.K; ++k) {
    const double inv = 1.0 / static_cast<double>(plan.group_size(k));
    for (std::size_t j = 0; j < batch.M; ++j) {
      const std::size_t i = plan.assignment[j][k];
      if (i == RecombinationPlan::kAbsent) continue;
      const std::vector<std::size_t> avail = batch.available_patients(j);
      const auto rank = static_cast<std::size_t>(
          std::lower_bound(avail.begin(), avail.end(), i) - avail.begin());
      sel.at(k, offset[j] + rank) = inv;
    }
  }
  return sel;
}

}  // namespace anatcl
