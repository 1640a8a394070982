#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "core/augment.hpp"
#include "core/cohort.hpp"
#include "core/diagnostics.hpp"
#include "core/model.hpp"
#include "core/objective.hpp"

namespace anatcl {

// PRNG stream kinds under the training seed. Each consumer derives its own
// stream, so parallel batch preparation cannot reorder draws.
constexpr std::uint64_t kStreamModelInit = 1;    // {1}
constexpr std::uint64_t kStreamEpochShuffle = 2; // {2, epoch}
constexpr std::uint64_t kStreamAugment = 3;      // {3, epoch, patient, anatomy}
constexpr std::uint64_t kStreamPlan = 4;         // {4, epoch, batch_index}

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  // learning_rate = 0 is allowed so a frozen-parameter run stays expressible.
  double learning_rate = 1e-3;
  double lambda = 0.1;
  AugmentConfig augment;
  bool enable_global_loss = true;
  bool enable_augment = false;
  Pooling pooling = Pooling::kPositional;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  double clip_norm = 5.0;
  std::size_t max_steps = 0;  // 0 = run every epoch to completion
};

void validate(const TrainConfig& cfg);

struct StepRecord {
  std::size_t step = 0;  // 1-based
  LossBreakdown loss;
  bool clipped = false;
};

// Collapse indices of the full cohort encoded with the current parameters.
// epoch 0 is the pre-training state; epoch e the state after epoch e.
struct EpochSnapshot {
  std::size_t epoch = 0;
  CollapseIndex text;
  CollapseIndex visual;
};

struct TrainTrace {
  std::vector<StepRecord> steps;
  std::vector<EpochSnapshot> snapshots;
};

struct AdamState {
  std::size_t step = 0;
  std::map<std::string, Matrix> m;
  std::map<std::string, Matrix> v;
};

// Standard Adam with bias correction, in place. Moments are created lazily
// per parameter name; shapes must stay consistent across calls.
void adam_step(std::map<std::string, Matrix>& params,
               const std::map<std::string, Matrix>& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps);

struct LossGraph {
  Expr total;
  std::vector<std::optional<Expr>> local;  // per anatomy; nullopt = skipped
  std::optional<Expr> global_loss;
};

// Assembles per-anatomy bidirectional InfoNCE losses plus (when plan is
// non-null and lambda > 0) the recombined global loss over the encoded
// rows. v_rows/r_rows are indexed [patient][anatomy] and consulted only
// where availability says so. inv_tau is a 1x1 node.
LossGraph assemble_loss(Graph& g,
                        const std::vector<std::vector<Expr>>& v_rows,
                        const std::vector<std::vector<Expr>>& r_rows,
                        const AnatomyBatch& availability,
                        const RecombinationPlan* plan, Expr inv_tau,
                        double lambda);

// Deterministic mini-batch loop: per epoch, patients are shuffled with the
// pinned PRNG and walked in batches (final short batch kept). Each step
// optionally augments every report, encodes both branches, builds the
// recombination plan, evaluates the total loss, clips the global gradient
// norm, and applies Adam. Throws NumericError with the step index and
// parameter norms when the loss goes non-finite.
std::pair<ModelParams, TrainTrace> train(const Cohort& cohort,
                                         const TrainConfig& cfg);

// JSON Lines: one object per step ({step, loss_total, loss_local, tau,
// lambda, clipped} plus loss_global when the global branch ran), then one
// per epoch snapshot.
std::string trace_to_jsonl(const TrainTrace& trace);
void write_trace(const TrainTrace& trace, const std::string& path);

struct GradcheckConfig {
  std::uint64_t seed = 1;
  std::size_t n_configs = 10;
  std::size_t max_b = 6;
  std::size_t max_m = 3;
  std::size_t max_d = 8;
  double step = 1e-5;
  double tolerance = 1e-4;
  double lambda = 0.1;
};

struct GradcheckCase {
  std::size_t b = 0, m = 0, d = 0, tokens = 0, sentences = 0;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  double max_rel_error = 0.0;
  bool pass = false;
};

// Random full-pipeline configurations with every encoder parameter and
// every input token as a differentiable leaf; compares reverse-mode
// gradients of the total loss against central finite differences.
GradcheckReport run_gradcheck(const GradcheckConfig& cfg);

}  // namespace anatcl
