#include "anatcl.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>
#include <utility>
#include <vector>

#include "core/cohort.hpp"
#include "core/diagnostics.hpp"
#include "core/error.hpp"
#include "core/evalkit.hpp"
#include "core/model.hpp"
#include "core/trainer.hpp"
#include "json.hpp"

using nlohmann::json;

namespace {

thread_local std::string g_last_error;

anatcl_status fail(anatcl_status code, const std::string& message) {
  g_last_error = message;
  return code;
}

// Runs fn, translating library exceptions into status codes.
template <typename Fn>
anatcl_status guarded(Fn&& fn) {
  try {
    fn();
    return ANATCL_OK;
  } catch (const anatcl::InvalidArgument& e) {
    return fail(ANATCL_INVALID_ARGUMENT, e.what());
  } catch (const anatcl::IoError& e) {
    return fail(ANATCL_IO_ERROR, e.what());
  } catch (const anatcl::DegenerateInput& e) {
    return fail(ANATCL_NUMERIC_ERROR, e.what());
  } catch (const anatcl::NumericError& e) {
    return fail(ANATCL_NUMERIC_ERROR, e.what());
  } catch (const json::exception& e) {
    return fail(ANATCL_INVALID_ARGUMENT, std::string("config: ") + e.what());
  } catch (const std::bad_alloc&) {
    return fail(ANATCL_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(ANATCL_INTERNAL, e.what());
  }
}

char* copy_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json parse_config(const char* config_json) {
  const char* text =
      (config_json == nullptr || *config_json == '\0') ? "{}" : config_json;
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    throw anatcl::InvalidArgument("config: not valid JSON");
  }
  if (!j.is_object()) {
    throw anatcl::InvalidArgument("config: expected a JSON object");
  }
  return j;
}

// Reads a field if present, erasing it so leftovers can be reported.
template <typename T>
void take(json& j, const char* key, T& target) {
  auto it = j.find(key);
  if (it == j.end()) return;
  target = it->template get<T>();
  j.erase(it);
}

void reject_leftovers(const json& j, const char* what) {
  if (j.empty()) return;
  std::string keys;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!keys.empty()) keys += ", ";
    keys += it.key();
  }
  throw anatcl::InvalidArgument(std::string(what) +
                                ": unknown field(s): " + keys);
}

anatcl::CohortConfig cohort_config_from_partial(const char* config_json) {
  json j = parse_config(config_json);
  anatcl::CohortConfig c;
  take(j, "M", c.M);
  take(j, "D", c.D);
  take(j, "n_patients", c.n_patients);
  take(j, "tokens_per_anatomy", c.tokens_per_anatomy);
  take(j, "sentences_normal", c.sentences_normal);
  take(j, "sentences_abnormal", c.sentences_abnormal);
  take(j, "text_coverage", c.text_coverage);
  take(j, "abnormal_rate", c.abnormal_rate);
  take(j, "text_separation_deg", c.text_separation_deg);
  take(j, "vis_separation_deg", c.vis_separation_deg);
  take(j, "pathology_offset_scale", c.pathology_offset_scale);
  take(j, "noise_scale", c.noise_scale);
  take(j, "n_templates", c.n_templates);
  take(j, "template_noise_scale", c.template_noise_scale);
  take(j, "seed", c.seed);
  reject_leftovers(j, "cohort config");
  return c;
}

anatcl::TrainConfig train_config_from_partial(const char* config_json) {
  json j = parse_config(config_json);
  anatcl::TrainConfig c;
  take(j, "epochs", c.epochs);
  take(j, "batch_size", c.batch_size);
  take(j, "learning_rate", c.learning_rate);
  take(j, "lambda", c.lambda);
  take(j, "enable_global_loss", c.enable_global_loss);
  take(j, "enable_augment", c.enable_augment);
  take(j, "seed", c.seed);
  take(j, "beta1", c.beta1);
  take(j, "beta2", c.beta2);
  take(j, "eps_adam", c.eps_adam);
  take(j, "clip_norm", c.clip_norm);
  take(j, "max_steps", c.max_steps);
  if (auto it = j.find("pooling"); it != j.end()) {
    c.pooling = anatcl::pooling_from_string(it->get<std::string>());
    j.erase(it);
  }
  if (auto it = j.find("augment"); it != j.end()) {
    json a = *it;
    j.erase(it);
    if (!a.is_object()) {
      throw anatcl::InvalidArgument("train config: augment must be an object");
    }
    take(a, "keep_min_fraction", c.augment.keep_min_fraction);
    take(a, "shuffle_enabled", c.augment.shuffle_enabled);
    take(a, "subset_enabled", c.augment.subset_enabled);
    reject_leftovers(a, "train config augment");
  }
  reject_leftovers(j, "train config");
  return c;
}

anatcl::Pooling pooling_from_cstr(const char* pooling) {
  if (pooling == nullptr || *pooling == '\0') {
    return anatcl::Pooling::kPositional;
  }
  return anatcl::pooling_from_string(pooling);
}

json train_config_to_json(const anatcl::TrainConfig& c) {
  json a;
  a["keep_min_fraction"] = c.augment.keep_min_fraction;
  a["shuffle_enabled"] = c.augment.shuffle_enabled;
  a["subset_enabled"] = c.augment.subset_enabled;
  json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["lambda"] = c.lambda;
  j["enable_global_loss"] = c.enable_global_loss;
  j["enable_augment"] = c.enable_augment;
  j["pooling"] = anatcl::to_string(c.pooling);
  j["seed"] = c.seed;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["eps_adam"] = c.eps_adam;
  j["clip_norm"] = c.clip_norm;
  j["max_steps"] = c.max_steps;
  j["augment"] = a;
  return j;
}

json collapse_to_json(const anatcl::CollapseIndex& c) {
  json j;
  j["intra"] = c.intra;
  j["inter"] = c.inter;
  j["margin"] = c.margin;
  j["ratio"] = c.ratio;
  j["intra_defined"] = c.intra_defined;
  j["inter_frac_above_09"] = c.inter_frac_above_09;
  return j;
}

std::string histogram_to_csv(const anatcl::SimilarityHistogram& h) {
  std::string out = "bin_left,bin_right,count\n";
  for (std::size_t b = 0; b + 1 < h.edges.size(); ++b) {
    out += json(h.edges[b]).dump();
    out += ',';
    out += json(h.edges[b + 1]).dump();
    out += ',';
    out += std::to_string(h.counts[b]);
    out += '\n';
  }
  return out;
}

struct CohortEmbeddings {
  std::vector<anatcl::Vec> text, visual;
  std::vector<std::size_t> text_anatomy, visual_anatomy;
};

// Per (patient, anatomy): every visual aggregate, and the report encoding
// where the report mentions the anatomy.
CohortEmbeddings encode_cohort(const anatcl::ModelParams& params,
                               const anatcl::Cohort& cohort,
                               anatcl::Pooling pooling) {
  CohortEmbeddings out;
  const std::size_t m = cohort.config.M;
  for (std::size_t i = 0; i < cohort.patients.size(); ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const anatcl::PatientAnatomy& pa = cohort.patients[i][j];
      out.visual.push_back(
          anatcl::aggregate_visual(params, j, pa.visual_tokens));
      out.visual_anatomy.push_back(j);
      if (!pa.sentences.empty()) {
        out.text.push_back(
            anatcl::encode_report(params, pa.sentences, pooling));
        out.text_anatomy.push_back(j);
      }
    }
  }
  return out;
}

const anatcl::Cohort& unwrap(const anatcl_cohort* cohort) {
  if (cohort == nullptr) {
    throw anatcl::InvalidArgument("cohort handle is NULL");
  }
  return *reinterpret_cast<const anatcl::Cohort*>(cohort);
}

const anatcl::ModelParams& unwrap(const anatcl_model* model) {
  if (model == nullptr) {
    throw anatcl::InvalidArgument("model handle is NULL");
  }
  return *reinterpret_cast<const anatcl::ModelParams*>(model);
}

anatcl_cohort* wrap(anatcl::Cohort* cohort) {
  return reinterpret_cast<anatcl_cohort*>(cohort);
}

anatcl_model* wrap(anatcl::ModelParams* model) {
  return reinterpret_cast<anatcl_model*>(model);
}

void require_out(const void* ptr, const char* name) {
  if (ptr == nullptr) {
    throw anatcl::InvalidArgument(std::string(name) + " must not be NULL");
  }
}

}  // namespace

extern "C" {

const char* anatcl_version(void) { return "1.0.0"; }

const char* anatcl_last_error(void) { return g_last_error.c_str(); }

void anatcl_string_free(char* s) { delete[] s; }

anatcl_status anatcl_cohort_generate(const char* config_json,
                                     anatcl_cohort** out) {
  return guarded([&] {
    require_out(out, "out");
    anatcl::CohortConfig cfg = cohort_config_from_partial(config_json);
    auto* cohort = new anatcl::Cohort(anatcl::generate_cohort(cfg));
    *out = wrap(cohort);
  });
}

anatcl_status anatcl_cohort_write(const anatcl_cohort* cohort,
                                  const char* path) {
  return guarded([&] {
    require_out(path, "path");
    anatcl::write_cohort(unwrap(cohort), path);
  });
}

anatcl_status anatcl_cohort_read(const char* path, anatcl_cohort** out) {
  return guarded([&] {
    require_out(path, "path");
    require_out(out, "out");
    auto* cohort = new anatcl::Cohort(anatcl::read_cohort(path));
    *out = wrap(cohort);
  });
}

anatcl_status anatcl_cohort_config(const anatcl_cohort* cohort,
                                   char** json_out) {
  return guarded([&] {
    require_out(json_out, "json_out");
    *json_out = copy_string(anatcl::config_to_json(unwrap(cohort).config).dump());
  });
}

anatcl_status anatcl_cohort_dims(const anatcl_cohort* cohort, size_t* m_out,
                                 size_t* d_out, size_t* n_patients_out) {
  return guarded([&] {
    const anatcl::Cohort& c = unwrap(cohort);
    if (m_out != nullptr) *m_out = c.config.M;
    if (d_out != nullptr) *d_out = c.config.D;
    if (n_patients_out != nullptr) *n_patients_out = c.patients.size();
  });
}

void anatcl_cohort_free(anatcl_cohort* cohort) {
  delete reinterpret_cast<anatcl::Cohort*>(cohort);
}

anatcl_status anatcl_model_init(size_t m, size_t d, uint64_t seed,
                                anatcl_model** out) {
  return guarded([&] {
    require_out(out, "out");
    anatcl::Rng rng(seed, {anatcl::kStreamModelInit});
    auto* model =
        new anatcl::ModelParams(anatcl::ModelParams::init(m, d, rng));
    *out = wrap(model);
  });
}

anatcl_status anatcl_model_write(const anatcl_model* model, const char* path) {
  return guarded([&] {
    require_out(path, "path");
    anatcl::write_checkpoint(unwrap(model), path);
  });
}

anatcl_status anatcl_model_read(const char* path, anatcl_model** out) {
  return guarded([&] {
    require_out(path, "path");
    require_out(out, "out");
    auto* model = new anatcl::ModelParams(anatcl::read_checkpoint(path));
    *out = wrap(model);
  });
}

anatcl_status anatcl_model_dims(const anatcl_model* model, size_t* m_out,
                                size_t* d_out) {
  return guarded([&] {
    const anatcl::ModelParams& p = unwrap(model);
    if (m_out != nullptr) *m_out = p.M;
    if (d_out != nullptr) *d_out = p.D;
  });
}

void anatcl_model_free(anatcl_model* model) {
  delete reinterpret_cast<anatcl::ModelParams*>(model);
}

anatcl_status anatcl_train(const anatcl_cohort* cohort,
                           const char* train_config_json,
                           anatcl_model** model_out, char** trace_jsonl_out) {
  return guarded([&] {
    require_out(model_out, "model_out");
    anatcl::TrainConfig cfg = train_config_from_partial(train_config_json);
    auto [params, trace] = anatcl::train(unwrap(cohort), cfg);
    if (trace_jsonl_out != nullptr) {
      *trace_jsonl_out = copy_string(anatcl::trace_to_jsonl(trace));
    }
    *model_out = wrap(new anatcl::ModelParams(std::move(params)));
  });
}

anatcl_status anatcl_train_config_echo(const char* train_config_json,
                                       char** full_json_out) {
  return guarded([&] {
    require_out(full_json_out, "full_json_out");
    anatcl::TrainConfig cfg = train_config_from_partial(train_config_json);
    anatcl::validate(cfg);
    *full_json_out = copy_string(train_config_to_json(cfg).dump());
  });
}

anatcl_status anatcl_evaluate(const anatcl_model* model,
                              const anatcl_cohort* cohort, const char* pooling,
                              char** metrics_json_out,
                              char** metrics_csv_out) {
  return guarded([&] {
    anatcl::MetricsReport report = anatcl::evaluate_cohort(
        unwrap(model), unwrap(cohort), pooling_from_cstr(pooling));
    if (metrics_json_out != nullptr) {
      *metrics_json_out = copy_string(anatcl::metrics_report_to_json(report));
    }
    if (metrics_csv_out != nullptr) {
      *metrics_csv_out = copy_string(anatcl::metrics_report_to_csv(report));
    }
  });
}

anatcl_status anatcl_diagnose(const anatcl_model* model,
                              const anatcl_cohort* cohort, const char* pooling,
                              int bins, char** summary_json_out,
                              char** text_hist_csv_out,
                              char** visual_hist_csv_out,
                              char** projection_csv_out) {
  return guarded([&] {
    const anatcl::ModelParams& params = unwrap(model);
    const anatcl::Cohort& c = unwrap(cohort);
    const std::size_t n_bins = bins <= 0 ? 40 : static_cast<std::size_t>(bins);
    CohortEmbeddings emb = encode_cohort(params, c, pooling_from_cstr(pooling));

    if (summary_json_out != nullptr) {
      json summary;
      summary["text"] = collapse_to_json(
          anatcl::collapse_index(emb.text, emb.text_anatomy));
      summary["visual"] = collapse_to_json(
          anatcl::collapse_index(emb.visual, emb.visual_anatomy));
      summary["n_text"] = emb.text.size();
      summary["n_visual"] = emb.visual.size();
      *summary_json_out = copy_string(summary.dump());
    }
    if (text_hist_csv_out != nullptr) {
      *text_hist_csv_out = copy_string(
          histogram_to_csv(anatcl::similarity_histogram(emb.text, n_bins)));
    }
    if (visual_hist_csv_out != nullptr) {
      *visual_hist_csv_out = copy_string(
          histogram_to_csv(anatcl::similarity_histogram(emb.visual, n_bins)));
    }
    if (projection_csv_out != nullptr) {
      std::vector<anatcl::Vec> all = emb.text;
      all.insert(all.end(), emb.visual.begin(), emb.visual.end());
      anatcl::Projection2D proj = anatcl::pca_project(all);
      std::string csv = "x,y,modality,anatomy\n";
      for (std::size_t i = 0; i < all.size(); ++i) {
        const bool is_text = i < emb.text.size();
        const std::size_t anatomy = is_text
                                        ? emb.text_anatomy[i]
                                        : emb.visual_anatomy[i - emb.text.size()];
        csv += json(proj.coords[i][0]).dump();
        csv += ',';
        csv += json(proj.coords[i][1]).dump();
        csv += is_text ? ",text," : ",visual,";
        csv += std::to_string(anatomy);
        csv += '\n';
      }
      *projection_csv_out = copy_string(csv);
    }
  });
}

anatcl_status anatcl_gradcheck(const char* config_json, char** report_json_out,
                               int* pass_out) {
  return guarded([&] {
    json j = parse_config(config_json);
    anatcl::GradcheckConfig cfg;
    take(j, "seed", cfg.seed);
    take(j, "n_configs", cfg.n_configs);
    take(j, "max_b", cfg.max_b);
    take(j, "max_m", cfg.max_m);
    take(j, "max_d", cfg.max_d);
    take(j, "step", cfg.step);
    take(j, "tolerance", cfg.tolerance);
    take(j, "lambda", cfg.lambda);
    reject_leftovers(j, "gradcheck config");
    anatcl::GradcheckReport report = anatcl::run_gradcheck(cfg);
    if (pass_out != nullptr) *pass_out = report.pass ? 1 : 0;
    if (report_json_out != nullptr) {
      json cases = json::array();
      for (const anatcl::GradcheckCase& c : report.cases) {
        json o;
        o["b"] = c.b;
        o["m"] = c.m;
        o["d"] = c.d;
        o["tokens"] = c.tokens;
        o["sentences"] = c.sentences;
        o["max_rel_error"] = c.max_rel_error;
        o["worst_param"] = c.worst_param;
        o["worst_index"] = c.worst_index;
        cases.push_back(o);
      }
      json out;
      out["cases"] = cases;
      out["max_rel_error"] = report.max_rel_error;
      out["tolerance"] = cfg.tolerance;
      out["pass"] = report.pass;
      *report_json_out = copy_string(out.dump());
    }
  });
}

anatcl_status anatcl_ablation(const anatcl_cohort* cohort,
                              const char* train_config_json,
                              char** table_csv_out) {
  return guarded([&] {
    require_out(table_csv_out, "table_csv_out");
    const anatcl::Cohort& c = unwrap(cohort);
    anatcl::TrainConfig base = train_config_from_partial(train_config_json);

    struct Row {
      const char* name;
      bool augment;
      bool global_loss;
    };
    // Toggle order mirrors the cumulative reading: alignment alone, plus
    // the global objective, plus report augmentation, plus both.
    const Row rows[] = {
        {"local", false, false},
        {"local+global", false, true},
        {"local+augment", true, false},
        {"local+augment+global", true, true},
    };

    // The source table also varies how reports are parsed into sentences;
    // that concerns LLM parsing pipelines and is out of scope here, so no
    // such row exists. All four rows share the same seeds.
    std::string csv =
        "# Ablation over loss/augmentation toggles. Sentence-parsing "
        "variants are out of scope and have no row.\n";
    csv += "row,auc_mean,auc_std,acc_mean,acc_std,f1_mean,f1_std,prec_mean,"
           "prec_std,spec_mean,spec_std,sens_mean,sens_std\n";
    for (const Row& row : rows) {
      anatcl::TrainConfig cfg = base;
      cfg.enable_augment = row.augment;
      cfg.enable_global_loss = row.global_loss;
      auto [params, trace] = anatcl::train(c, cfg);
      (void)trace;
      anatcl::MetricsReport report =
          anatcl::evaluate_cohort(params, c, cfg.pooling);
      const anatcl::MetricValues& mean = report.aggregate_mean;
      const anatcl::MetricValues& std = report.aggregate_std;
      csv += row.name;
      const double cells[] = {mean.auc,  std.auc,  mean.acc,  std.acc,
                              mean.f1,   std.f1,   mean.prec, std.prec,
                              mean.spec, std.spec, mean.sens, std.sens};
      for (double v : cells) {
        csv += ',';
        csv += json(v).dump();
      }
      csv += '\n';
    }
    *table_csv_out = copy_string(csv);
  });
}

}  // extern "C"
