#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "core/cohort.hpp"
#include "core/linalg.hpp"
#include "core/model.hpp"

namespace anatcl {

struct PromptEmbedding {
  std::size_t anatomy = 0;
  int polarity = 0;  // 0 normal, 1 abnormal
  std::size_t template_index = 0;
  Vec embedding;  // unit norm
};

// Encodes every (anatomy, polarity, template) sentence list from the
// cohort's template bank through the text encoder.
std::vector<PromptEmbedding> encode_prompts(const ModelParams& params,
                                            const Cohort& cohort,
                                            Pooling pooling);

struct EvalScore {
  std::size_t patient = 0;
  std::size_t anatomy = 0;
  double score = 0.0;  // cos(V, abnormal prompt) - cos(V, normal prompt)
  int label = 0;
};

// One score per (patient, anatomy): the visual token against the two
// prompt polarities of the given template. Throws when either prompt is
// missing for an anatomy.
std::vector<EvalScore> zero_shot_scores(const ModelParams& params,
                                        const Cohort& cohort,
                                        const std::vector<PromptEmbedding>& prompts,
                                        std::size_t template_index);

// Mann-Whitney AUC: (concordant + 0.5 * tied) / (n_pos * n_neg), computed
// through average ranks, which matches pairwise counting exactly. Throws
// when either class is empty.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct BinaryMetrics {
  ConfusionCounts counts;
  double acc = 0.0;   // balanced: (sens + spec) / 2
  double f1 = 0.0;    // support-weighted mean of per-class F1
  double prec = 0.0;
  double spec = 0.0;
  double sens = 0.0;
  bool undefined = false;  // some denominator was zero; that metric is 0.0
};

// Predict positive iff score > threshold.
BinaryMetrics confusion_metrics(const std::vector<double>& scores,
                                const std::vector<int>& labels,
                                double threshold);

struct MetricValues {
  double auc = 0.0, acc = 0.0, f1 = 0.0, prec = 0.0, spec = 0.0, sens = 0.0;
  bool undefined = false;
};

// mean and population std (divide by n) per metric. Requires >= 2 entries.
std::pair<MetricValues, MetricValues> prompt_robustness(
    const std::vector<MetricValues>& per_template);

struct MetricsReport {
  // values[class][template]
  std::vector<std::vector<MetricValues>> per_class_template;
  // Macro over classes at fixed template.
  std::vector<MetricValues> per_template_macro;
  // Aggregation order A: macro over classes first, then across templates.
  MetricValues aggregate_mean;
  MetricValues aggregate_std;
  // Aggregation order B: across templates per class, then macro.
  std::vector<MetricValues> per_class_mean;
  std::vector<MetricValues> per_class_std;
  MetricValues classwise_mean;  // macro of per_class_mean
  MetricValues classwise_std;   // macro of per_class_std
};

// Full zero-shot evaluation: one binary task per anatomy (class), scored
// against every template, thresholded at 0 for the confusion metrics.
MetricsReport evaluate_cohort(const ModelParams& params, const Cohort& cohort,
                              Pooling pooling);

// {per_class: [...], per_template_macro: [...], aggregate: {...}} as a JSON
// string; stable field order for bitwise-reproducible output files.
std::string metrics_report_to_json(const MetricsReport& report);

// Flat rows: class,template,metric,value. class/template "macro"/"mean"/
// "std" rows cover the aggregates.
std::string metrics_report_to_csv(const MetricsReport& report);

}  // namespace anatcl
