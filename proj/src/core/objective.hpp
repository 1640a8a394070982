#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "core/autodiff.hpp"
#include "core/linalg.hpp"
#include "core/rng.hpp"

namespace anatcl {

// Encoded anatomy-level token pairs for one batch. Entry (i, j) is available
// when both the visual and the report token exist; both are unit rows of
// length D. Index layout is patient-major: slot(i, j) = i * M + j.
struct AnatomyBatch {
  std::size_t B = 0;
  std::size_t M = 0;
  std::size_t D = 0;
  std::vector<Vec> V;           // B*M entries, empty when absent
  std::vector<Vec> R;           // B*M entries, empty when absent
  std::vector<char> available;  // B*M flags

  AnatomyBatch() = default;
  AnatomyBatch(std::size_t b, std::size_t m, std::size_t d)
      : B(b), M(m), D(d), V(b * m), R(b * m), available(b * m, 0) {}

  std::size_t slot(std::size_t i, std::size_t j) const { return i * M + j; }
  bool is_available(std::size_t i, std::size_t j) const {
    return available[slot(i, j)] != 0;
  }
  void set_pair(std::size_t i, std::size_t j, Vec v, Vec r);

  // N_j: patients with both tokens present for anatomy j.
  std::size_t n_available(std::size_t j) const;
  // Available patient indices for anatomy j, ascending.
  std::vector<std::size_t> available_patients(std::size_t j) const;
};

// Per-anatomy permutations assigning each available patient to exactly one
// of the K synthetic groups.
struct RecombinationPlan {
  static constexpr std::size_t kAbsent = static_cast<std::size_t>(-1);
  std::size_t K = 0;
  // assignment[j][k] = patient index providing anatomy j to group k,
  // or kAbsent when group k has no anatomy j.
  std::vector<std::vector<std::size_t>> assignment;

  std::size_t group_size(std::size_t k) const;
};

struct LossBreakdown {
  std::vector<std::optional<double>> local;  // per anatomy; nullopt = skipped
  std::optional<double> global_loss;         // nullopt when branch disabled
  double total = 0.0;
  double tau = 0.0;
  double lambda = 0.0;
};

// Bidirectional InfoNCE over N (visual, report) pairs at temperature tau:
// the N x N cosine matrix over tau is log-softmaxed along rows and columns,
// the diagonal terms are summed, negated, and divided by N. Returns nullopt
// when anatomy j has no available pairs (the skip sentinel; skipped
// anatomies contribute nothing to the total).
std::optional<double> local_contrastive_loss(const AnatomyBatch& batch,
                                             std::size_t j, double tau);

// Deterministic plan core: for each anatomy j, available patient
// avail_order[j][n] fills slot slot_order[j][n]. Empty groups are dropped
// and the remaining groups compacted in ascending slot order.
RecombinationPlan plan_from_permutations(
    const AnatomyBatch& batch,
    const std::vector<std::vector<std::size_t>>& slot_order,
    const std::vector<std::vector<std::size_t>>& avail_order);

// Random plan: K starts at B; per anatomy, a uniform bijection from the
// available patients onto K slots (slot list and patient list each
// Fisher-Yates shuffled), then empty groups dropped.
RecombinationPlan build_recombination_plan(const AnatomyBatch& batch, Rng& rng);

// Group tokens: arithmetic mean of the member anatomy tokens, divided by
// the number of present anatomies. Not re-normalized; the downstream loss
// computes cosines, which are scale-invariant.
std::vector<std::pair<Vec, Vec>> synthesize_global_tokens(
    const AnatomyBatch& batch, const RecombinationPlan& plan);

double global_contrastive_loss(
    const std::vector<std::pair<Vec, Vec>>& globals, double tau);

// total = sum of defined local losses + lambda * global loss. The global
// branch is evaluated whenever lambda >= 0 is given with a valid plan; pass
// lambda = 0 for the pure-local ablation (global branch skipped entirely).
LossBreakdown total_loss(const AnatomyBatch& batch,
                         const RecombinationPlan& plan, double tau,
                         double lambda);

// Graph building block shared by the plain ops above and the trainer:
// bidirectional InfoNCE over the rows of two N x D stacks, with logits
// scaled by the 1x1 node inv_tau. Rows are re-normalized inside, so inputs
// of any scale produce true cosine logits.
Expr graph_bidirectional_infonce(Graph& g, Expr v_stack, Expr r_stack,
                                 Expr inv_tau);

// K x P selector matrix with 1/m_k at the stacked-row positions of group
// k's members, where the P rows are all available pairs in (anatomy-major,
// patient-ascending) order: matmul(selector, stack) yields the group means.
Matrix group_mean_selector(const AnatomyBatch& batch,
                           const RecombinationPlan& plan);

}  // namespace anatcl
