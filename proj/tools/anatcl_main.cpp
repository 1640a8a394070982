// Command-line front end over the C API. Every run echoes its effective
// configuration, writes its data files under --out, and finishes with an
// atomically renamed manifest so interrupted runs never leave a complete-
// looking directory behind.
//
// Exit codes: 0 success, 1 check failure, 2 usage/config error,
// 3 numerical abort.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "anatcl.h"
#include "json.hpp"

using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

int exit_code_for(anatcl_status status) {
  switch (status) {
    case ANATCL_OK:
      return kExitOk;
    case ANATCL_INVALID_ARGUMENT:
    case ANATCL_IO_ERROR:
      return kExitUsage;
    case ANATCL_NUMERIC_ERROR:
      return kExitNumeric;
    case ANATCL_CHECK_FAILED:
    case ANATCL_INTERNAL:
      return kExitCheckFailed;
  }
  return kExitCheckFailed;
}

// Nonzero-exit escape hatch; caught in main.
struct ExitWith {
  int code;
};

[[noreturn]] void fail_status(anatcl_status status, const std::string& where) {
  json payload;
  payload["error"] = where;
  payload["message"] = anatcl_last_error();
  payload["status"] = static_cast<int>(status);
  std::cerr << payload.dump() << "\n";
  throw ExitWith{exit_code_for(status)};
}

void check(anatcl_status status, const std::string& where) {
  if (status != ANATCL_OK) fail_status(status, where);
}

[[noreturn]] void fail_usage(const std::string& message) {
  json payload;
  payload["error"] = "config";
  payload["message"] = message;
  std::cerr << payload.dump() << "\n";
  throw ExitWith{kExitUsage};
}

// Owns a string returned by the C API.
struct ApiString {
  char* ptr = nullptr;
  ~ApiString() { anatcl_string_free(ptr); }
  std::string str() const { return ptr == nullptr ? std::string() : ptr; }
};

struct CohortHandle {
  anatcl_cohort* ptr = nullptr;
  ~CohortHandle() { anatcl_cohort_free(ptr); }
};

struct ModelHandle {
  anatcl_model* ptr = nullptr;
  ~ModelHandle() { anatcl_model_free(ptr); }
};

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_usage("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string checksum_hex(const std::string& bytes) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

// Shared state parsed from the global flags plus the config file.
struct RunContext {
  std::string command;
  json file_config = json::object();
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool dry_run = false;

  std::map<std::string, std::string> input_checksums;
  std::vector<std::string> output_names;
  std::chrono::steady_clock::time_point started =
      std::chrono::steady_clock::now();

  void load_config_file() {
    if (config_path.empty()) return;
    const std::string text = read_file(config_path);
    input_checksums[config_path] = checksum_hex(text);
    json parsed = json::parse(text, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object()) {
      fail_usage("config file '" + config_path + "' is not a JSON object");
    }
    for (auto it = parsed.begin(); it != parsed.end(); ++it) {
      static const char* known[] = {"cohort", "train",     "eval",
                                    "out",    "gradcheck", "seed"};
      bool ok = false;
      for (const char* k : known) ok = ok || it.key() == k;
      if (!ok) fail_usage("config file: unknown section '" + it.key() + "'");
    }
    file_config = std::move(parsed);
    if (out_dir.empty() && file_config.contains("out")) {
      out_dir = file_config["out"].get<std::string>();
    }
    if (!seed.has_value() && file_config.contains("seed")) {
      seed = file_config["seed"].get<std::uint64_t>();
    }
  }

  // Section of the config file, as a mutable copy.
  json section(const char* name) const {
    if (file_config.contains(name)) {
      const json& s = file_config[name];
      if (!s.is_object()) {
        fail_usage(std::string("config file: '") + name +
                   "' must be an object");
      }
      return s;
    }
    return json::object();
  }

  void note_input(const std::string& path) {
    input_checksums[path] = checksum_hex(read_file(path));
  }

  std::filesystem::path out_path(const std::string& name) const {
    return std::filesystem::path(out_dir) / name;
  }

  void require_out_dir() {
    if (out_dir.empty()) {
      fail_usage("--out DIR is required unless --dry-run is given");
    }
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) fail_usage("cannot create '" + out_dir + "': " + ec.message());
  }

  void write_output(const std::string& name, const std::string& content) {
    const std::filesystem::path path = out_path(name);
    std::ofstream out(path, std::ios::binary);
    if (!out) fail_usage("cannot write '" + path.string() + "'");
    out << content;
    if (!out) fail_usage("write failed for '" + path.string() + "'");
    output_names.push_back(name);
  }

  // The manifest is written last, to a temp name, then renamed into
  // place: its presence marks a completed run.
  void write_manifest(const json& effective_config) {
    json inputs = json::object();
    for (const auto& [path, sum] : input_checksums) inputs[path] = sum;
    json manifest;
    manifest["tool_version"] = anatcl_version();
    manifest["command"] = command;
    manifest["effective_config"] = effective_config;
    manifest["inputs"] = inputs;
    manifest["outputs"] = output_names;
    manifest["duration_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      started)
            .count();

    const std::filesystem::path final_path = out_path("manifest.json");
    const std::filesystem::path tmp_path = out_path("manifest.json.tmp");
    {
      std::ofstream out(tmp_path, std::ios::binary);
      if (!out) fail_usage("cannot write '" + tmp_path.string() + "'");
      out << manifest.dump(2) << "\n";
    }
    std::error_code ec;
    std::filesystem::rename(tmp_path, final_path, ec);
    if (ec) {
      fail_usage("cannot finalize '" + final_path.string() +
                 "': " + ec.message());
    }
  }

  // Echo of the effective configuration; doubles as the dry-run result.
  void echo(const json& effective_config) const {
    json echo_obj;
    echo_obj["command"] = command;
    echo_obj["effective_config"] = effective_config;
    std::cout << echo_obj.dump() << "\n";
  }
};

std::string cohort_effective_config(const anatcl_cohort* cohort) {
  ApiString cfg;
  check(anatcl_cohort_config(cohort, &cfg.ptr), "cohort config");
  return cfg.str();
}

CohortHandle load_cohort(RunContext& ctx, const std::string& path) {
  ctx.note_input(path);
  CohortHandle cohort;
  check(anatcl_cohort_read(path.c_str(), &cohort.ptr), "read cohort");
  return cohort;
}

ModelHandle load_model(RunContext& ctx, const std::string& path) {
  ctx.note_input(path);
  ModelHandle model;
  check(anatcl_model_read(path.c_str(), &model.ptr), "read checkpoint");
  return model;
}

// ---- synth ------------------------------------------------------------

int cmd_synth(RunContext& ctx) {
  json cfg = ctx.section("cohort");
  if (ctx.seed.has_value()) cfg["seed"] = *ctx.seed;

  CohortHandle cohort;
  check(anatcl_cohort_generate(cfg.dump().c_str(), &cohort.ptr),
        "generate cohort");
  const json effective = json::parse(cohort_effective_config(cohort.ptr));
  ctx.echo(effective);
  if (ctx.dry_run) return kExitOk;

  ctx.require_out_dir();
  check(anatcl_cohort_write(cohort.ptr, ctx.out_path("cohort.jsonl").c_str()),
        "write cohort");
  ctx.output_names.push_back("cohort.jsonl");
  ctx.write_manifest(effective);
  return kExitOk;
}

// ---- train --------------------------------------------------------------

int cmd_train(RunContext& ctx, const std::string& cohort_path,
              std::optional<std::size_t> epochs, bool no_global,
              bool no_augment, const std::string& pooling) {
  json cfg = ctx.section("train");
  if (ctx.seed.has_value()) cfg["seed"] = *ctx.seed;
  if (epochs.has_value()) cfg["epochs"] = *epochs;
  if (no_global) cfg["enable_global_loss"] = false;
  if (no_augment) cfg["enable_augment"] = false;
  if (!pooling.empty()) cfg["pooling"] = pooling;

  ApiString effective_str;
  check(anatcl_train_config_echo(cfg.dump().c_str(), &effective_str.ptr),
        "train config");
  const json effective = json::parse(effective_str.str());
  ctx.echo(effective);
  if (ctx.dry_run) return kExitOk;

  CohortHandle cohort = load_cohort(ctx, cohort_path);
  ctx.require_out_dir();
  ModelHandle model;
  ApiString trace;
  check(anatcl_train(cohort.ptr, cfg.dump().c_str(), &model.ptr, &trace.ptr),
        "train");
  check(anatcl_model_write(model.ptr, ctx.out_path("checkpoint.json").c_str()),
        "write checkpoint");
  ctx.output_names.push_back("checkpoint.json");
  ctx.write_output("trace.jsonl", trace.str());
  ctx.write_manifest(effective);
  return kExitOk;
}

// ---- eval ---------------------------------------------------------------

json eval_options(RunContext& ctx, const std::string& pooling_flag) {
  json cfg = ctx.section("eval");
  for (auto it = cfg.begin(); it != cfg.end(); ++it) {
    if (it.key() != "pooling" && it.key() != "bins") {
      fail_usage("config file: eval: unknown field '" + it.key() + "'");
    }
  }
  if (!cfg.contains("pooling")) cfg["pooling"] = "positional";
  if (!cfg.contains("bins")) cfg["bins"] = 40;
  if (!pooling_flag.empty()) cfg["pooling"] = pooling_flag;
  return cfg;
}

int cmd_eval(RunContext& ctx, const std::string& cohort_path,
             const std::string& checkpoint_path,
             const std::string& pooling_flag) {
  const json options = eval_options(ctx, pooling_flag);
  ctx.echo(options);
  if (ctx.dry_run) return kExitOk;

  CohortHandle cohort = load_cohort(ctx, cohort_path);
  ModelHandle model = load_model(ctx, checkpoint_path);
  ctx.require_out_dir();
  ApiString metrics_json, metrics_csv;
  check(anatcl_evaluate(model.ptr, cohort.ptr,
                        options["pooling"].get<std::string>().c_str(),
                        &metrics_json.ptr, &metrics_csv.ptr),
        "evaluate");
  ctx.write_output("metrics.json", metrics_json.str());
  ctx.write_output("metrics.csv", metrics_csv.str());
  ctx.write_manifest(options);
  return kExitOk;
}

// ---- diagnose -------------------------------------------------------------

int cmd_diagnose(RunContext& ctx, const std::string& cohort_path,
                 const std::string& checkpoint_path,
                 const std::string& pooling_flag) {
  const json options = eval_options(ctx, pooling_flag);
  ctx.echo(options);
  if (ctx.dry_run) return kExitOk;

  CohortHandle cohort = load_cohort(ctx, cohort_path);
  ModelHandle model = load_model(ctx, checkpoint_path);
  ctx.require_out_dir();
  ApiString summary, text_hist, visual_hist, projection;
  check(anatcl_diagnose(model.ptr, cohort.ptr,
                        options["pooling"].get<std::string>().c_str(),
                        options["bins"].get<int>(), &summary.ptr,
                        &text_hist.ptr, &visual_hist.ptr, &projection.ptr),
        "diagnose");
  ctx.write_output("collapse.json", summary.str());
  ctx.write_output("text_hist.csv", text_hist.str());
  ctx.write_output("visual_hist.csv", visual_hist.str());
  ctx.write_output("projection.csv", projection.str());
  ctx.write_manifest(options);
  return kExitOk;
}

// ---- gradcheck ------------------------------------------------------------

int cmd_gradcheck(RunContext& ctx) {
  json cfg = ctx.section("gradcheck");
  if (ctx.seed.has_value()) cfg["seed"] = *ctx.seed;
  ctx.echo(cfg);

  if (ctx.dry_run) return kExitOk;
  ApiString report;
  int pass = 0;
  check(anatcl_gradcheck(cfg.dump().c_str(), &report.ptr, &pass),
        "gradcheck");
  const json report_json = json::parse(report.str());
  if (!ctx.out_dir.empty()) {
    ctx.require_out_dir();
    ctx.write_output("gradcheck.json", report.str());
    ctx.write_manifest(cfg);
  }
  std::cout << report.str() << "\n";
  if (pass == 0) {
    json payload;
    payload["error"] = "gradcheck";
    payload["message"] = "max relative error above tolerance";
    payload["max_rel_error"] = report_json["max_rel_error"];
    payload["cases"] = report_json["cases"];
    std::cerr << payload.dump() << "\n";
    return kExitCheckFailed;
  }
  return kExitOk;
}

// ---- ablation ---------------------------------------------------------------

int cmd_ablation(RunContext& ctx, const std::string& cohort_path) {
  json cfg = ctx.section("train");
  if (ctx.seed.has_value()) cfg["seed"] = *ctx.seed;

  ApiString effective_str;
  check(anatcl_train_config_echo(cfg.dump().c_str(), &effective_str.ptr),
        "train config");
  const json effective = json::parse(effective_str.str());
  ctx.echo(effective);
  if (ctx.dry_run) return kExitOk;

  CohortHandle cohort = load_cohort(ctx, cohort_path);
  ctx.require_out_dir();
  ApiString table;
  check(anatcl_ablation(cohort.ptr, cfg.dump().c_str(), &table.ptr),
        "ablation");
  ctx.write_output("ablation.csv", table.str());
  ctx.write_manifest(effective);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "anatcl: anatomy-aware contrastive alignment on synthetic cohorts"};
  app.require_subcommand(1);

  RunContext ctx;
  app.add_option("--config", ctx.config_path,
                 "JSON config file (sections: cohort, train, eval, "
                 "gradcheck; plus out, seed)");
  app.add_option("--out", ctx.out_dir, "output directory");
  std::uint64_t seed_flag = 0;
  CLI::Option* seed_opt =
      app.add_option("--seed", seed_flag,
                     "seed override (cohort seed for synth, train seed for "
                     "train/ablation, gradcheck seed for gradcheck)");
  app.add_flag("--dry-run", ctx.dry_run,
               "validate configuration, echo it, write nothing");

  CLI::App* synth =
      app.add_subcommand("synth", "generate a synthetic cohort file");

  std::string cohort_path, checkpoint_path, pooling_flag;
  std::optional<std::size_t> epochs_flag;
  bool no_global = false, no_augment = false;

  CLI::App* train = app.add_subcommand("train", "train a model on a cohort");
  train->add_option("cohort", cohort_path, "cohort JSONL path")->required();
  train->add_option("--epochs", epochs_flag, "epoch count override");
  train->add_flag("--no-global", no_global, "disable the global loss term");
  train->add_flag("--no-augment", no_augment, "disable report augmentation");
  train->add_option("--pooling", pooling_flag, "sentence pooling: mean|positional");

  CLI::App* eval_cmd =
      app.add_subcommand("eval", "zero-shot metrics for a checkpoint");
  eval_cmd->add_option("cohort", cohort_path, "cohort JSONL path")->required();
  eval_cmd->add_option("checkpoint", checkpoint_path, "checkpoint path")
      ->required();
  eval_cmd->add_option("--pooling", pooling_flag,
                       "sentence pooling: mean|positional");

  CLI::App* diagnose =
      app.add_subcommand("diagnose", "embedding collapse diagnostics");
  diagnose->add_option("cohort", cohort_path, "cohort JSONL path")->required();
  diagnose->add_option("checkpoint", checkpoint_path, "checkpoint path")
      ->required();
  diagnose->add_option("--pooling", pooling_flag,
                       "sentence pooling: mean|positional");

  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference check of the loss gradients");

  CLI::App* ablation = app.add_subcommand(
      "ablation", "train and evaluate the four toggle configurations");
  ablation->add_option("cohort", cohort_path, "cohort JSONL path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (seed_opt->count() > 0) ctx.seed = seed_flag;
    ctx.load_config_file();
    if (synth->parsed()) {
      ctx.command = "synth";
      return cmd_synth(ctx);
    }
    if (train->parsed()) {
      ctx.command = "train";
      return cmd_train(ctx, cohort_path, epochs_flag, no_global, no_augment,
                       pooling_flag);
    }
    if (eval_cmd->parsed()) {
      ctx.command = "eval";
      return cmd_eval(ctx, cohort_path, checkpoint_path, pooling_flag);
    }
    if (diagnose->parsed()) {
      ctx.command = "diagnose";
      return cmd_diagnose(ctx, cohort_path, checkpoint_path, pooling_flag);
    }
    if (gradcheck->parsed()) {
      ctx.command = "gradcheck";
      return cmd_gradcheck(ctx);
    }
    if (ablation->parsed()) {
      ctx.command = "ablation";
      return cmd_ablation(ctx, cohort_path);
    }
    fail_usage("no subcommand given");
  } catch (const ExitWith& e) {
    return e.code;
  } catch (const std::exception& e) {
    json payload;
    payload["error"] = "internal";
    payload["message"] = e.what();
    std::cerr << payload.dump() << "\n";
    return kExitCheckFailed;
  }
}
