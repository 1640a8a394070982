#include "core/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "core/error.hpp"
#include "json.hpp"

namespace anatcl {

std::vector<PromptEmbedding> encode_prompts(const ModelParams& params,
                                            const Cohort& cohort,
                                            Pooling pooling) {
  std::vector<PromptEmbedding> out;
  for (std::size_t j = 0; j < cohort.templates.size(); ++j) {
    for (int polarity = 0; polarity < 2; ++polarity) {
      const auto& bank = cohort.templates[j][polarity];
      for (std::size_t t = 0; t < bank.size(); ++t) {
        PromptEmbedding p;
        p.anatomy = j;
        p.polarity = polarity;
        p.template_index = t;
        p.embedding = encode_report(params, bank[t], pooling);
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

std::vector<EvalScore> zero_shot_scores(const ModelParams& params,
                                        const Cohort& cohort,
                                        const std::vector<PromptEmbedding>& prompts,
                                        std::size_t template_index) {
  const std::size_t m = cohort.config.M;
  std::vector<const Vec*> normal(m, nullptr), abnormal(m, nullptr);
  for (const PromptEmbedding& p : prompts) {
    if (p.template_index != template_index || p.anatomy >= m) continue;
    (p.polarity == 0 ? normal : abnormal)[p.anatomy] = &p.embedding;
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (!normal[j] || !abnormal[j]) {
      throw InvalidArgument("missing prompt for anatomy " + std::to_string(j) +
                            ", template " + std::to_string(template_index));
    }
  }

  std::vector<EvalScore> scores;
  scores.reserve(cohort.patients.size() * m);
  for (std::size_t i = 0; i < cohort.patients.size(); ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const PatientAnatomy& pa = cohort.patients[i][j];
      const Vec v = aggregate_visual(params, j, pa.visual_tokens);
      EvalScore s;
      s.patient = i;
      s.anatomy = j;
      s.label = pa.label;
      s.score = cosine_similarity(v, *abnormal[j]) -
                cosine_similarity(v, *normal[j]);
      scores.push_back(s);
    }
  }
  return scores;
}

double roc_auc(const std::vector<double>& scores,
               const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw InvalidArgument("roc_auc: scores and labels must align");
  }
  std::size_t n_pos = 0, n_neg = 0;
  for (int y : labels) (y ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0) {
    throw InvalidArgument("roc_auc: need at least one of each class");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  // Average ranks over tie groups; rank sums of half-integers divide out to
  // the exact pairwise-counting value.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t k = i;
    while (k + 1 < order.size() &&
           scores[order[k + 1]] == scores[order[i]]) {
      ++k;
    }
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) +
                                   static_cast<double>(k + 1));
    for (std::size_t t = i; t <= k; ++t) {
      if (labels[order[t]]) rank_sum_pos += avg_rank;
    }
    i = k + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

namespace {

// ratio with the zero-denominator convention: 0.0 plus a flag.
double guarded_div(double num, double den, bool& undefined) {
  if (den == 0.0) {
    undefined = true;
    return 0.0;
  }
  return num / den;
}

}  // namespace

BinaryMetrics confusion_metrics(const std::vector<double>& scores,
                                const std::vector<int>& labels,
                                double threshold) {
  if (scores.size() != labels.size()) {
    throw InvalidArgument("confusion_metrics: scores and labels must align");
  }
  BinaryMetrics m;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] > threshold;
    const bool truth = labels[i] != 0;
    if (pred && truth) ++m.counts.tp;
    else if (pred && !truth) ++m.counts.fp;
    else if (!pred && truth) ++m.counts.fn;
    else ++m.counts.tn;
  }
  const auto tp = static_cast<double>(m.counts.tp);
  const auto fp = static_cast<double>(m.counts.fp);
  const auto tn = static_cast<double>(m.counts.tn);
  const auto fn = static_cast<double>(m.counts.fn);

  m.sens = guarded_div(tp, tp + fn, m.undefined);
  m.spec = guarded_div(tn, tn + fp, m.undefined);
  m.acc = 0.5 * (m.sens + m.spec);
  m.prec = guarded_div(tp, tp + fp, m.undefined);

  const double recall_neg = m.spec;
  const double prec_neg = guarded_div(tn, tn + fn, m.undefined);
  const double f1_pos =
      guarded_div(2.0 * m.prec * m.sens, m.prec + m.sens, m.undefined);
  const double f1_neg =
      guarded_div(2.0 * prec_neg * recall_neg, prec_neg + recall_neg,
                  m.undefined);
  const double support_pos = tp + fn;
  const double support_neg = tn + fp;
  m.f1 = guarded_div(support_pos * f1_pos + support_neg * f1_neg,
                     support_pos + support_neg, m.undefined);
  return m;
}

namespace {

constexpr std::size_t kMetricCount = 6;

double get_metric(const MetricValues& v, std::size_t idx) {
  const double all[kMetricCount] = {v.auc, v.acc, v.f1, v.prec, v.spec, v.sens};
  return all[idx];
}

void set_metric(MetricValues& v, std::size_t idx, double x) {
  double* all[kMetricCount] = {&v.auc, &v.acc, &v.f1, &v.prec, &v.spec, &v.sens};
  *all[idx] = x;
}

const char* metric_name(std::size_t idx) {
  static const char* names[kMetricCount] = {"auc", "acc", "f1",
                                            "prec", "spec", "sens"};
  return names[idx];
}

MetricValues macro(const std::vector<MetricValues>& vs) {
  MetricValues out;
  for (std::size_t k = 0; k < kMetricCount; ++k) {
    double s = 0.0;
    for (const MetricValues& v : vs) s += get_metric(v, k);
    set_metric(out, k, s / static_cast<double>(vs.size()));
  }
  for (const MetricValues& v : vs) out.undefined = out.undefined || v.undefined;
  return out;
}

}  // namespace

std::pair<MetricValues, MetricValues> prompt_robustness(
    const std::vector<MetricValues>& per_template) {
  if (per_template.size() < 2) {
    throw InvalidArgument("prompt_robustness: need >= 2 templates");
  }
  MetricValues mean = macro(per_template);
  MetricValues std_out;
  const auto n = static_cast<double>(per_template.size());
  for (std::size_t k = 0; k < kMetricCount; ++k) {
    double ss = 0.0;
    for (const MetricValues& v : per_template) {
      const double d = get_metric(v, k) - get_metric(mean, k);
      ss += d * d;
    }
    set_metric(std_out, k, std::sqrt(ss / n));
  }
  std_out.undefined = mean.undefined;
  return {mean, std_out};
}

MetricsReport evaluate_cohort(const ModelParams& params, const Cohort& cohort,
                              Pooling pooling) {
  const std::size_t m = cohort.config.M;
  const std::size_t n_templates = cohort.config.n_templates;
  const std::vector<PromptEmbedding> prompts =
      encode_prompts(params, cohort, pooling);

  MetricsReport report;
  report.per_class_template.assign(m, std::vector<MetricValues>(n_templates));
  for (std::size_t t = 0; t < n_templates; ++t) {
    const std::vector<EvalScore> scores =
        zero_shot_scores(params, cohort, prompts, t);
    for (std::size_t j = 0; j < m; ++j) {
      std::vector<double> s;
      std::vector<int> y;
      for (const EvalScore& e : scores) {
        if (e.anatomy != j) continue;
        s.push_back(e.score);
        y.push_back(e.label);
      }
      MetricValues v;
      const BinaryMetrics bm = confusion_metrics(s, y, 0.0);
      v.acc = bm.acc;
      v.f1 = bm.f1;
      v.prec = bm.prec;
      v.spec = bm.spec;
      v.sens = bm.sens;
      v.undefined = bm.undefined;
      bool single_class = true;
      for (int label : y) single_class = single_class && (label == y[0]);
      if (single_class) {
        v.auc = 0.0;
        v.undefined = true;
      } else {
        v.auc = roc_auc(s, y);
      }
      report.per_class_template[j][t] = v;
    }
  }

  report.per_template_macro.resize(n_templates);
  for (std::size_t t = 0; t < n_templates; ++t) {
    std::vector<MetricValues> column;
    for (std::size_t j = 0; j < m; ++j) {
      column.push_back(report.per_class_template[j][t]);
    }
    report.per_template_macro[t] = macro(column);
  }
  std::tie(report.aggregate_mean, report.aggregate_std) =
      prompt_robustness(report.per_template_macro);

  report.per_class_mean.resize(m);
  report.per_class_std.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    std::tie(report.per_class_mean[j], report.per_class_std[j]) =
        prompt_robustness(report.per_class_template[j]);
  }
  report.classwise_mean = macro(report.per_class_mean);
  report.classwise_std = macro(report.per_class_std);
  return report;
}

namespace {

nlohmann::json metric_values_to_json(const MetricValues& v) {
  nlohmann::json j;
  for (std::size_t k = 0; k < kMetricCount; ++k) {
    j[metric_name(k)] = get_metric(v, k);
  }
  j["undefined"] = v.undefined;
  return j;
}

}  // namespace

std::string metrics_report_to_json(const MetricsReport& report) {
  nlohmann::json j;
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < report.per_class_template.size(); ++c) {
    nlohmann::json entry;
    entry["class"] = c;
    nlohmann::json per_template = nlohmann::json::array();
    for (const MetricValues& v : report.per_class_template[c]) {
      per_template.push_back(metric_values_to_json(v));
    }
    entry["per_template"] = std::move(per_template);
    entry["mean"] = metric_values_to_json(report.per_class_mean[c]);
    entry["std"] = metric_values_to_json(report.per_class_std[c]);
    per_class.push_back(std::move(entry));
  }
  j["per_class"] = std::move(per_class);

  nlohmann::json per_template_macro = nlohmann::json::array();
  for (const MetricValues& v : report.per_template_macro) {
    per_template_macro.push_back(metric_values_to_json(v));
  }
  j["per_template_macro"] = std::move(per_template_macro);

  // Order A: macro over classes, then across templates.
  j["aggregate"]["mean"] = metric_values_to_json(report.aggregate_mean);
  j["aggregate"]["std"] = metric_values_to_json(report.aggregate_std);
  // Order B: across templates per class, then macro.
  j["aggregate_classwise"]["mean"] =
      metric_values_to_json(report.classwise_mean);
  j["aggregate_classwise"]["std"] = metric_values_to_json(report.classwise_std);
  return j.dump(2) + "\n";
}

std::string metrics_report_to_csv(const MetricsReport& report) {
  std::ostringstream out;
  out << "class,template,metric,value\n";
  const auto emit = [&](const std::string& cls, const std::string& tpl,
                        const MetricValues& v) {
    for (std::size_t k = 0; k < kMetricCount; ++k) {
      nlohmann::json num = get_metric(v, k);  // shortest round-trip decimal
      out << cls << "," << tpl << "," << metric_name(k) << "," << num.dump()
          << "\n";
    }
  };
  for (std::size_t c = 0; c < report.per_class_template.size(); ++c) {
    for (std::size_t t = 0; t < report.per_class_template[c].size(); ++t) {
      emit(std::to_string(c), std::to_string(t),
           report.per_class_template[c][t]);
    }
    emit(std::to_string(c), "mean", report.per_class_mean[c]);
    emit(std::to_string(c), "std", report.per_class_std[c]);
  }
  for (std::size_t t = 0; t < report.per_template_macro.size(); ++t) {
    emit("macro", std::to_string(t), report.per_template_macro[t]);
  }
  emit("macro", "mean", report.aggregate_mean);
  emit("macro", "std", report.aggregate_std);
  return out.str();
}

}  // namespace anatcl
