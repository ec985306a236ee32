// ensdistill command-line tool.
//
// Exit codes: 0 success, 1 other failure, 2 configuration error, 3 missing
// artifact, 4 training divergence, 5 corrupt artifact, 6 a reproduce check
// failed under --strict. Failures print one line to stderr:
//   error=<kind> message=<text>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ensdistill/config.hpp"
#include "ensdistill/experiments.hpp"
#include "ensdistill/persist.hpp"

namespace fs = std::filesystem;
using namespace ensdistill;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kMissing = 3, kDivergence = 4, kCorrupt = 5, kCheckFailed = 6 };

struct CommonOptions {
  std::string config_file;
  std::string preset;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::optional<std::size_t> bins;
  std::string out = "runs";
  bool force = false;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool with_preset = true) {
  cmd->add_option("--config", o.config_file, "config file (key = value lines)");
  if (with_preset) cmd->add_option("--preset", o.preset, "named preset applied before the config file");
  cmd->add_option("--set", o.sets, "override, key=value (repeatable)")->expected(1)->take_all();
  cmd->add_option("--seed", o.seed, "seed override for the command's primary stage");
  cmd->add_option("--jobs", o.jobs, "worker threads for members and replications")->check(CLI::PositiveNumber);
  cmd->add_option("--bins", o.bins, "entropy histogram bins (overrides eval.bins)")->check(CLI::PositiveNumber);
  cmd->add_option("--out", o.out, "output root directory");
  cmd->add_flag("--force", o.force, "overwrite existing artifacts");
}

std::optional<fs::path> config_path(const CommonOptions& o) {
  if (o.config_file.empty()) return std::nullopt;
  return fs::path(o.config_file);
}

std::vector<std::string> overrides(const CommonOptions& o, const std::string& seed_key) {
  std::vector<std::string> out = o.sets;
  if (o.seed) out.push_back(seed_key + "=" + std::to_string(*o.seed));
  if (o.bins) out.push_back("eval.bins=" + std::to_string(*o.bins));
  return out;
}

Config load_config(const CommonOptions& o, const std::string& seed_key) {
  return resolve_config(o.preset, config_path(o), overrides(o, seed_key));
}

std::string sanitize(const std::string& label) {
  std::string out;
  for (char c : label) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-' || c == '+' || c == '=';
    out += ok ? c : '_';
  }
  return out;
}

void print_rows(const std::vector<AggregateRow>& rows) { std::cout << aggregate_table(rows); }

int cmd_train_teacher(const CommonOptions& o) {
  const Config cfg = load_config(o, "teacher.seed");
  const PreparedData data = prepare_data(cfg);
  const std::string run_id = default_run_id(cfg);
  const fs::path dir = fs::path(o.out) / run_id;
  if (fs::exists(dir / "teacher" / "manifest.json") && !o.force) {
    throw ConfigError("teacher already exists in " + dir.string() + "; pass --force to overwrite");
  }
  const Ensemble teacher = train_teacher(cfg, data, o.jobs);
  save_ensemble(teacher, dir / "teacher", sha256_hex(config_section_text(cfg, {"dataset.", "teacher."})));

  RunManifest manifest = make_manifest(cfg, run_id);
  manifest.seeds = teacher.member_seeds();
  const ModelReports ens = evaluate_model(teacher, cfg, data);
  save_model_reports(ens, dir / "reports", "teacher");
  manifest.reports.push_back("reports/teacher_test.json");
  if (ens.ood) manifest.reports.push_back("reports/teacher_ood.json");
  std::vector<AggregateRow> rows{single_model_row("teacher", ens)};
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    const ModelReports member = evaluate_model(teacher.members()[i], cfg, data);
    const std::string stem = "member_" + std::to_string(i);
    save_report_with_table(member.test, dir / "reports", stem + "_test");
    manifest.reports.push_back("reports/" + stem + "_test.json");
    rows.push_back(single_model_row(stem, member));
  }
  save_aggregate(rows, dir / "reports" / "teacher_aggregate");
  save_run_manifest(manifest, dir / "manifest.json");
  std::cout << "run " << dir.string() << "\n";
  print_rows(rows);
  return kOk;
}

int cmd_distill(const CommonOptions& o, const std::string& teacher_dir) {
  const Config cfg = load_config(o, "student.seed");
  const std::string run_id = default_run_id(cfg);
  const fs::path dir = fs::path(o.out) / run_id;
  const fs::path tdir = teacher_dir.empty() ? dir / "teacher" : fs::path(teacher_dir);
  if (!fs::exists(tdir / "manifest.json")) {
    throw MissingArtifactError("no teacher in " + tdir.string() + " (run train-teacher first or pass --teacher)");
  }
  const Ensemble teacher = load_ensemble(tdir);
  const PreparedData data = prepare_data(cfg);
  if (teacher.arch().input_dim != data.parts.train.dim() || teacher.arch().num_classes != data.parts.train.num_classes) {
    throw ConfigError("teacher in " + tdir.string() + " does not match the configured dataset");
  }
  if (fs::exists(dir / "students") && !o.force) {
    throw ConfigError("students already exist in " + dir.string() + "; pass --force to overwrite");
  }

  RunManifest manifest = make_manifest(cfg, run_id);
  manifest.teacher_dir = fs::relative(fs::absolute(tdir), fs::absolute(dir)).generic_string();
  const ModelReports t = evaluate_model(teacher, cfg, data);
  std::vector<AggregateRow> rows{single_model_row("teacher", t)};
  for (const auto& row : distill_sweep_rows(cfg)) {
    const CellResult cell = distill_cell(teacher, row.cfg, data, row.label, o.jobs);
    const std::string sub = "students/" + sanitize(row.label);
    save_cell(cell, dir / sub, true);
    for (std::size_t r = 0; r < cell.runs.size(); ++r) {
      manifest.seeds.push_back(cell.runs[r].result.student.rng_seed);
      manifest.reports.push_back(sub + "/r" + std::to_string(r) + "/reports/student_test.json");
    }
    if (manifest.student_weights.empty()) manifest.student_weights = sub + "/r0/student.weights";
    rows.push_back(aggregate_row(cell));
  }
  save_aggregate(rows, dir / "reports" / "student_aggregate");
  manifest.reports.push_back("reports/student_aggregate.json");
  save_run_manifest(manifest, dir / "manifest.json");
  std::cout << "run " << dir.string() << "\n";
  print_rows(rows);
  return kOk;
}

int cmd_evaluate(const CommonOptions& o, const std::string& model_path, std::string part, const std::string& name) {
  const Config cfg = load_config(o, "student.seed");
  const PreparedData data = prepare_data(cfg);
  const Dataset* ds = nullptr;
  if (part == "train") {
    ds = &data.parts.train;
  } else if (part == "val") {
    ds = &data.parts.val;
  } else if (part == "test") {
    ds = &data.parts.test;
  } else if (part == "ood") {
    if (!data.ood) throw ConfigError("no OOD set configured (ood.kind = none)");
    ds = &*data.ood;
  } else {
    throw ConfigError("unknown split '" + part + "' (valid: train, val, test, ood)");
  }
  if (!fs::exists(model_path)) throw MissingArtifactError("no model at " + model_path);
  const std::size_t bins = cfg.get_size("eval.bins");
  const std::string id = dataset_id(cfg, data, part);
  EvalReport report;
  auto check_dims = [&](const ArchSpec& arch) {
    if (arch.input_dim != ds->dim()) throw ConfigError("model input dimension does not match the dataset");
  };
  if (fs::is_directory(model_path)) {
    const Ensemble e = load_ensemble(model_path);
    check_dims(e.arch());
    report = evaluate(e, *ds, id, bins);
  } else {
    const MlpModel m = load_model(model_path);
    check_dims(m.arch);
    report = evaluate(m, *ds, id, bins);
  }
  const std::string stem = name.empty() ? fs::path(model_path).filename().string() + "_" + part : name;
  save_report_with_table(report, o.out, stem);
  std::cout << dump_canonical(report_to_json(report));
  return kOk;
}

int cmd_reproduce(const CommonOptions& o, const std::string& id, bool strict) {
  const Config cfg = recipe_config(id, config_path(o), overrides(o, "student.seed"));
  const fs::path dir = fs::path(o.out) / id;
  if (fs::exists(dir / "summary.txt") && !o.force) {
    throw ConfigError("results already exist in " + dir.string() + "; pass --force to overwrite");
  }
  const RecipeOutput result = run_recipe(id, cfg, o.jobs);
  save_recipe_output(result, cfg, dir);
  std::cout << "results " << dir.string() << "\n";
  for (const auto& [name, rows] : result.tables) {
    std::cout << "# " << name << "\n";
    print_rows(rows);
  }
  for (const auto& c : result.checks) std::cout << check_line(c) << "\n";
  return strict && !result.passed() ? kCheckFailed : kOk;
}

int fail(std::string_view kind, std::string message, int code) {
  for (char& c : message) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::cerr << "error=" << kind << " message=" << message << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distil an ensemble teacher into a single student network"};
  app.set_version_flag("--version", ENSDISTILL_VERSION);
  app.require_subcommand(1);

  CommonOptions teacher_opts, distill_opts, eval_opts, ood_opts, repro_opts, show_opts;
  std::string teacher_dir, model_path, eval_split = "test", eval_name, ood_model, ood_name, figure;
  bool strict = false;

  auto* train = app.add_subcommand("train-teacher", "train the ensemble teacher and write its artifacts");
  add_common(train, teacher_opts);

  auto* dist = app.add_subcommand("distill", "distil students from a trained teacher");
  add_common(dist, distill_opts);
  dist->add_option("--teacher", teacher_dir, "ensemble directory (default: <out>/<run-id>/teacher)");

  auto* eval = app.add_subcommand("evaluate", "evaluate a model file or ensemble directory");
  add_common(eval, eval_opts);
  eval->add_option("--model", model_path, "student.weights file or ensemble directory")->required();
  eval->add_option("--split", eval_split, "train | val | test | ood");
  eval->add_option("--name", eval_name, "report file stem");
  eval_opts.out = "eval";

  auto* ood = app.add_subcommand("ood-eval", "entropy histogram of a model on the configured OOD set");
  add_common(ood, ood_opts);
  ood->add_option("--model", ood_model, "student.weights file or ensemble directory")->required();
  ood->add_option("--name", ood_name, "report file stem");
  ood_opts.out = "eval";

  auto* repro = app.add_subcommand("reproduce", "run a figure or table recipe (" + recipe_ids() + ")");
  add_common(repro, repro_opts, false);
  repro->add_option("figure", figure, "figure or table id")->required();
  repro->add_flag("--strict", strict, "exit with code 6 when a directional check fails");
  repro_opts.out = "reproduce";

  auto* show = app.add_subcommand("show-config", "print the resolved config, presets and recipes");
  add_common(show, show_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kConfig);
  }

  try {
    if (*train) return cmd_train_teacher(teacher_opts);
    if (*dist) return cmd_distill(distill_opts, teacher_dir);
    if (*eval) return cmd_evaluate(eval_opts, model_path, eval_split, eval_name);
    if (*ood) return cmd_evaluate(ood_opts, ood_model, "ood", ood_name);
    if (*repro) return cmd_reproduce(repro_opts, figure, strict);
    if (*show) {
      std::cout << load_config(show_opts, "student.seed").canonical_text();
      std::cout << "# presets:";
      for (const auto& p : kPresets) std::cout << " " << p.name;
      std::cout << "\n# recipes: " << recipe_ids() << "\n";
      return kOk;
    }
  } catch (const ConfigError& e) {
    return fail("config", e.what(), kConfig);
  } catch (const MissingArtifactError& e) {
    return fail("missing_artifact", e.what(), kMissing);
  } catch (const DivergenceError& e) {
    return fail("divergence", e.what(), kDivergence);
  } catch (const FormatError& e) {
    return fail("corrupt_artifact", e.what(), kCorrupt);
  } catch (const ShapeError& e) {
    return fail("config", e.what(), kConfig);
  } catch (const DomainError& e) {
    return fail("config", e.what(), kConfig);
  } catch (const std::exception& e) {
    return fail("other", e.what(), kOther);
  }
  return kOther;
}
