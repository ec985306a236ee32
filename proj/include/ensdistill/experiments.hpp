#pragma once

// Experiment pipeline shared by the CLI, the demos and the acceptance suite:
// data preparation from a Config, teacher training, replicated distillation,
// mean/std aggregation, run directories on disk and the `reproduce` recipes.
//
// Run directory layout (stable):
//
//   <out>/<run-id>/manifest.json
//   <out>/<run-id>/teacher/               ensemble directory
//   <out>/<run-id>/reports/               teacher and aggregate reports
//   <out>/<run-id>/students/<row>/r<k>/   student.weights, history.csv, reports/

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <initializer_list>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ensdistill/config.hpp"
#include "ensdistill/data.hpp"
#include "ensdistill/distill.hpp"
#include "ensdistill/ensemble.hpp"
#include "ensdistill/metrics.hpp"
#include "ensdistill/parallel.hpp"
#include "ensdistill/persist.hpp"
#include "ensdistill/targets.hpp"

namespace ensdistill {

// ---------------------------------------------------------------- statistics

/// Mean and sample standard deviation; the deviation is absent for one value.
struct Stat {
  std::size_t n = 0;
  double mean = 0.0;
  std::optional<double> std;

  bool operator==(const Stat&) const = default;
};

inline Stat summarize(std::span<const double> values) {
  Stat s;
  s.n = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

/// sqrt((s1^2 + s2^2) / 2); absent deviations count as zero.
inline double pooled_std(const Stat& a, const Stat& b) {
  const double sa = a.std.value_or(0.0), sb = b.std.value_or(0.0);
  return std::sqrt((sa * sa + sb * sb) / 2.0);
}

// ---------------------------------------------------------------- data

struct PreparedData {
  SplitDataset parts;
  std::optional<Dataset> ood;
  std::string dataset_tag;  // short digest of the dataset.* and ood.* keys
};

inline std::string config_section_text(const Config& cfg, std::initializer_list<std::string_view> prefixes) {
  std::string out;
  std::istringstream in(cfg.canonical_text());
  std::string line;
  while (std::getline(in, line)) {
    for (auto p : prefixes) {
      if (line.compare(0, p.size(), p) == 0) {
        out += line + "\n";
        break;
      }
    }
  }
  return out;
}

inline PreparedData prepare_data(const Config& cfg) {
  PreparedData d;
  d.parts = split_from_config(cfg, dataset_from_config(cfg));
  d.ood = ood_from_config(cfg, d.parts.train);
  d.dataset_tag = sha256_hex(config_section_text(cfg, {"dataset.", "ood."})).substr(0, 12);
  return d;
}

inline std::string dataset_id(const Config& cfg, const PreparedData& data, std::string_view part) {
  return cfg.get("dataset.kind") + "/" + std::string(part) + "/" + data.dataset_tag;
}

// ---------------------------------------------------------------- teacher

inline Ensemble train_teacher(const Config& cfg, const PreparedData& data, std::size_t jobs = 1) {
  const auto& train = data.parts.train;
  return train_ensemble(train, data.parts.val, teacher_arch_from_config(cfg, train.dim(), train.num_classes),
                        cfg.get_size("teacher.m"), teacher_training_from_config(cfg), cfg.get_u64("teacher.seed"),
                        jobs);
}

/// The first m members (by seed). Members depend only on their own seed, so
/// this equals an ensemble trained with m members from the same base seed.
inline Ensemble ensemble_prefix(const Ensemble& full, std::size_t m) {
  if (m < 1 || m > full.size()) throw DomainError("ensemble_prefix: m out of range");
  std::vector<MlpModel> members(full.members().begin(), full.members().begin() + static_cast<std::ptrdiff_t>(m));
  std::vector<double> nll;
  if (!full.member_val_nll().empty()) {
    nll.assign(full.member_val_nll().begin(), full.member_val_nll().begin() + static_cast<std::ptrdiff_t>(m));
  }
  return Ensemble(std::move(members), std::move(nll));
}

struct ModelReports {
  EvalReport test;
  std::optional<EvalReport> ood;
};

template <class Model>
ModelReports evaluate_model(const Model& model, const Config& cfg, const PreparedData& data) {
  const std::size_t bins = cfg.get_size("eval.bins");
  ModelReports r{evaluate(model, data.parts.test, dataset_id(cfg, data, "test"), bins), std::nullopt};
  if (data.ood) r.ood = evaluate(model, *data.ood, dataset_id(cfg, data, "ood"), bins);
  return r;
}

// ---------------------------------------------------------------- students

struct StudentRun {
  DistillResult result;
  ModelReports reports;
};

struct CellResult {
  std::string label;
  std::vector<StudentRun> runs;
  Stat nll, error, brier;
  std::optional<Stat> ood_entropy;
};

struct AggregateRow {
  std::string label;
  Stat nll, error, brier;
  std::optional<Stat> ood_entropy;

  bool operator==(const AggregateRow&) const = default;
};

inline AggregateRow aggregate_row(const CellResult& cell) {
  return {cell.label, cell.nll, cell.error, cell.brier, cell.ood_entropy};
}

/// Aggregate row for a single model (std absent).
inline AggregateRow single_model_row(std::string label, const ModelReports& r) {
  auto one = [](double v) { return summarize(std::span<const double>(&v, 1)); };
  AggregateRow row{std::move(label), one(r.test.nll.value_or(0.0)), one(r.test.error.value_or(0.0)),
                   one(r.test.brier.value_or(0.0)), std::nullopt};
  if (r.ood) row.ood_entropy = one(r.ood->mean_entropy);
  return row;
}

/// run.replications students with seeds student.seed + r, trained concurrently
/// up to `jobs`. The result does not depend on `jobs`.
inline CellResult distill_cell(const Ensemble& teacher, const Config& cfg, const PreparedData& data, std::string label,
                               std::size_t jobs = 1) {
  const auto& train = data.parts.train;
  const DistillConfig base = distill_from_config(cfg, train.dim(), train.num_classes, train.image_side);
  const std::size_t reps = cfg.get_size("run.replications");
  if (reps < 1) throw ConfigError("run.replications must be >= 1");
  CellResult cell;
  cell.label = std::move(label);
  cell.runs.resize(reps);
  parallel_for(reps, jobs, [&](std::size_t r) {
    DistillConfig dc = base;
    dc.seed = base.seed + r;
    cell.runs[r].result = distill(teacher, train, data.parts.val, dc);
    cell.runs[r].reports = evaluate_model(cell.runs[r].result.student, cfg, data);
  });
  std::vector<double> nll, err, brier, ood;
  for (const auto& run : cell.runs) {
    nll.push_back(*run.reports.test.nll);
    err.push_back(*run.reports.test.error);
    brier.push_back(*run.reports.test.brier);
    if (run.reports.ood) ood.push_back(run.reports.ood->mean_entropy);
  }
  cell.nll = summarize(nll);
  cell.error = summarize(err);
  cell.brier = summarize(brier);
  if (!ood.empty()) cell.ood_entropy = summarize(ood);
  return cell;
}

// ---------------------------------------------------------------- tables

inline std::string format_stat_field(const std::optional<double>& v) {
  return v ? detail::format_double(*v) : std::string("NA");
}

/// label,n,nll_mean,nll_std,error_mean,error_std,brier_mean,brier_std,ood_entropy_mean,ood_entropy_std
inline std::string aggregate_table(const std::vector<AggregateRow>& rows) {
  std::string out = "label,n,nll_mean,nll_std,error_mean,error_std,brier_mean,brier_std,ood_entropy_mean,ood_entropy_std\n";
  for (const auto& r : rows) {
    out += r.label + "," + std::to_string(r.nll.n);
    for (const Stat* s : {&r.nll, &r.error, &r.brier}) {
      out += "," + detail::format_double(s->mean) + "," + format_stat_field(s->std);
    }
    if (r.ood_entropy) {
      out += "," + detail::format_double(r.ood_entropy->mean) + "," + format_stat_field(r.ood_entropy->std);
    } else {
      out += ",NA,NA";
    }
    out += "\n";
  }
  return out;
}

inline Json stat_to_json(const Stat& s) { return {{"n", s.n}, {"mean", s.mean}, {"std", optional_to_json(s.std)}}; }

inline Json aggregate_to_json(const std::vector<AggregateRow>& rows) {
  Json arr = Json::array();
  for (const auto& r : rows) {
    arr.push_back({{"label", r.label},
                   {"nll", stat_to_json(r.nll)},
                   {"error", stat_to_json(r.error)},
                   {"brier", stat_to_json(r.brier)},
                   {"ood_entropy", r.ood_entropy ? stat_to_json(*r.ood_entropy) : Json(nullptr)}});
  }
  return {{"format", "ensdistill.aggregate"}, {"version", kReportFormatVersion}, {"rows", arr}};
}

inline void save_aggregate(const std::vector<AggregateRow>& rows, const std::filesystem::path& stem) {
  auto json_path = stem;
  json_path += ".json";
  auto csv_path = stem;
  csv_path += ".csv";
  write_file_atomic(json_path, dump_canonical(aggregate_to_json(rows)));
  write_file_atomic(csv_path, aggregate_table(rows));
}

/// Writes <stem>.json and <stem>_hist.csv.
inline void save_report_with_table(const EvalReport& report, const std::filesystem::path& dir, const std::string& stem) {
  save_report(report, dir / (stem + ".json"));
  save_histogram_table(report.histogram, dir / (stem + "_hist.csv"));
}

inline void save_model_reports(const ModelReports& r, const std::filesystem::path& dir, const std::string& stem) {
  save_report_with_table(r.test, dir, stem + "_test");
  if (r.ood) save_report_with_table(*r.ood, dir, stem + "_ood");
}

inline void save_cell(const CellResult& cell, const std::filesystem::path& dir, bool with_weights) {
  for (std::size_t r = 0; r < cell.runs.size(); ++r) {
    const auto rdir = dir / ("r" + std::to_string(r));
    const auto& run = cell.runs[r];
    if (with_weights) save_model(run.result.student, rdir / "student.weights");
    write_file_atomic(rdir / "history.csv", history_table(run.result.history));
    save_model_reports(run.reports, rdir / "reports", "student");
  }
}

// ---------------------------------------------------------------- run directories

/// Default run id: derived from the dataset and teacher settings only, so a
/// later `distill` with different student settings finds the same teacher.
inline std::string default_run_id(const Config& cfg) {
  if (!cfg.get("run.id").empty()) return cfg.get("run.id");
  return "run-" + sha256_hex(config_section_text(cfg, {"dataset.", "teacher."})).substr(0, 12);
}

inline RunManifest make_manifest(const Config& cfg, std::string run_id) {
  RunManifest m;
  m.run_id = std::move(run_id);
  m.config_text = cfg.canonical_text();
  m.config_digest = sha256_hex(m.config_text);
  m.teacher_dir = "teacher";
  m.created_utc = utc_timestamp();
  return m;
}

// ---------------------------------------------------------------- sweeps

/// `sweep.proper_alpha_rule` entry: lower_bound | interpolated:<t> | one.
inline ProperAlphaRule parse_rule_entry(const std::string& entry) {
  const auto colon = entry.find(':');
  const std::string name = trim(entry.substr(0, colon));
  const double t = colon == std::string::npos ? 0.0 : Config::parse_number<double>("sweep.proper_alpha_rule",
                                                                                   entry.substr(colon + 1));
  if (name == "interpolated" && colon == std::string::npos) {
    throw ConfigError("sweep.proper_alpha_rule: interpolated needs a parameter, e.g. interpolated:0.1");
  }
  try {
    return proper_alpha_rule_from_string(name, t);
  } catch (const DomainError& e) {
    throw ConfigError(std::string("sweep.proper_alpha_rule: ") + e.what());
  }
}

/// Row label in the style of the table header: abar+, 0.9abar+0.1, 1.
inline std::string rule_label(const ProperAlphaRule& rule) {
  switch (rule.kind) {
    case ProperAlphaRule::Kind::lower_bound: return "abar+";
    case ProperAlphaRule::Kind::one: return "1";
    case ProperAlphaRule::Kind::interpolated:
      return detail::format_double(1.0 - rule.t) + "abar+" + detail::format_double(rule.t);
  }
  return "?";
}

/// One configuration per row of a `distill` sweep. Without sweep keys there is
/// a single row labelled by the policy kind.
struct SweepRow {
  std::string label;
  Config cfg;
  std::optional<ProperAlphaRule> rule;
};

inline std::vector<SweepRow> distill_sweep_rows(const Config& cfg) {
  std::vector<SweepRow> rows;
  const auto alphas = split_list(cfg.get("sweep.alpha"), ';');
  const auto rules = split_list(cfg.get("sweep.proper_alpha_rule"), ';');
  if (!alphas.empty() && !rules.empty()) {
    throw ConfigError("sweep.alpha and sweep.proper_alpha_rule cannot be combined");
  }
  for (const auto& a : alphas) {
    Config c = cfg;
    if (c.get("policy.kind") == "vanilla") c.set("policy.kind", "sharpened");
    c.set("policy.alpha", a);
    rows.push_back({"alpha=" + a, c, std::nullopt});
  }
  for (const auto& r : rules) {
    const ProperAlphaRule rule = parse_rule_entry(r);
    Config c = cfg;
    if (c.get("policy.kind") != "sharpened_plus_proper") c.set("policy.kind", "proper_posterior");
    c.set("policy.proper_alpha_rule", rule.name());
    c.set("policy.t", detail::format_double(rule.t));
    rows.push_back({rule_label(rule), c, rule});
  }
  if (rows.empty()) rows.push_back({cfg.get("policy.kind"), cfg, std::nullopt});
  return rows;
}

inline std::string arch_label(const std::vector<std::size_t>& widths) {
  if (widths.empty()) return "none";
  std::string out;
  for (auto w : widths) out += (out.empty() ? "" : "x") + std::to_string(w);
  return out;
}

// ---------------------------------------------------------------- recipes

struct RecipeCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct RecipeOutput {
  std::string id;
  std::vector<RecipeCheck> checks;
  std::map<std::string, std::vector<AggregateRow>> tables;  // name -> rows
  std::map<std::string, EvalReport> reports;                // name -> report

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const RecipeCheck& c) { return c.passed; });
  }
};

struct RecipeInfo {
  std::string_view id;
  std::string_view preset;
  std::string_view description;
  std::string_view defaults;  // recipe-specific settings applied on top of the preset
};

// clang-format off
inline constexpr RecipeInfo kRecipes[] = {
  {"fig1", "two-moons", "vanilla distillation: teacher vs student in distribution and on a remote ring", ""},
  {"fig2a", "blobs-k4", "teacher NLL as a function of the ensemble size", "sweep.m = 1;2;5;10;15\n"},
  {"fig2b", "blobs-k4", "student capacity sweep with a fixed teacher", "sweep.student_hidden = 8;32;128\n"},
  {"fig2c", "blobs-k4", "teacher capacity sweep with a fixed student, against the student sweep",
   "sweep.student_hidden = 8;32;128\nsweep.teacher_hidden = 8,8;32,32;128,128\n"},
  {"fig3", "blobs-k4-d8", "student vs student trained on teacher labels of augmented inputs, OOD entropy", ""},
  {"tab1", "blobs-k4", "sharpening weight grid for two student sizes",
   "sweep.alpha = 0;0.1;0.2;0.3\nsweep.student_hidden = 8;32\n"},
  {"tab2", "blobs-k4-hard", "misclassification-correction rule grid on a hard task",
   "sweep.proper_alpha_rule = lower_bound;interpolated:0.1;interpolated:0.2;one\n"},
};
// clang-format on

inline std::string recipe_ids() {
  std::string out;
  for (const auto& r : kRecipes) out += (out.empty() ? "" : ", ") + std::string(r.id);
  return out;
}

inline const RecipeInfo& find_recipe(std::string_view id) {
  for (const auto& r : kRecipes) {
    if (r.id == id) return r;
  }
  throw ConfigError("unknown figure id '" + std::string(id) + "' (valid: " + recipe_ids() + ")");
}

/// Config for a recipe: defaults, preset, recipe settings, then overrides.
inline Config recipe_config(std::string_view id, const std::optional<std::filesystem::path>& file,
                            const std::vector<std::string>& overrides) {
  const RecipeInfo& info = find_recipe(id);
  Config cfg;
  cfg.merge_text(find_preset(info.preset).text, "preset " + std::string(info.preset));
  cfg.merge_text(info.defaults, "recipe " + std::string(id));
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot read config file " + file->string());
    std::stringstream text;
    text << in.rdbuf();
    cfg.merge_text(text.str(), file->string());
  }
  for (const auto& o : overrides) cfg.apply_override(o);
  return cfg;
}

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline std::string fmt_stat(const Stat& s) { return fmt(s.mean) + " +- " + (s.std ? fmt(*s.std) : "NA"); }

inline std::vector<std::vector<std::size_t>> arch_list(const Config& cfg, const std::string& key) {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& entry : split_list(cfg.get(key), ';')) out.push_back(Config::parse_widths(key, entry));
  if (out.empty()) throw ConfigError(key + " must list at least one architecture");
  return out;
}

inline std::string widths_value(const std::vector<std::size_t>& widths) {
  if (widths.empty()) return "none";
  std::string out;
  for (auto w : widths) out += (out.empty() ? "" : ",") + std::to_string(w);
  return out;
}

/// Student-width sweep under one teacher; rows labelled student=<arch>.
inline std::vector<CellResult> student_width_sweep(const Ensemble& teacher, const Config& cfg, const PreparedData& data,
                                                   std::size_t jobs) {
  std::vector<CellResult> cells;
  for (const auto& widths : arch_list(cfg, "sweep.student_hidden")) {
    Config c = cfg;
    c.set("student.hidden", widths_value(widths));
    cells.push_back(distill_cell(teacher, c, data, "student=" + arch_label(widths), jobs));
  }
  return cells;
}

inline double spread(const std::vector<CellResult>& cells) {
  double lo = cells.front().nll.mean, hi = lo;
  for (const auto& c : cells) {
    lo = std::min(lo, c.nll.mean);
    hi = std::max(hi, c.nll.mean);
  }
  return hi - lo;
}

inline std::vector<AggregateRow> rows_of(const std::vector<CellResult>& cells) {
  std::vector<AggregateRow> rows;
  for (const auto& c : cells) rows.push_back(aggregate_row(c));
  return rows;
}

inline RecipeCheck capacity_check(const std::vector<CellResult>& cells) {
  bool monotone = true;
  for (std::size_t i = 1; i < cells.size(); ++i) monotone = monotone && cells[i].nll.mean <= cells[i - 1].nll.mean;
  const double margin = cells.front().nll.mean - cells.back().nll.mean;
  const double pooled = pooled_std(cells.front().nll, cells.back().nll);
  std::string d;
  for (const auto& c : cells) d += c.label + " nll " + fmt_stat(c.nll) + "; ";
  d += "margin " + fmt(margin) + " vs pooled std " + fmt(pooled);
  return {"student NLL non-increasing in width, widest beats narrowest by more than the pooled std",
          monotone && margin > pooled, d};
}

}  // namespace detail

inline RecipeOutput run_fig1(const Config& cfg, std::size_t jobs) {
  RecipeOutput out{"fig1", {}, {}, {}};
  const PreparedData data = prepare_data(cfg);
  const Ensemble teacher = train_teacher(cfg, data, jobs);
  const ModelReports t = evaluate_model(teacher, cfg, data);
  const CellResult students = distill_cell(teacher, cfg, data, "student", jobs);
  out.tables["aggregate"] = {single_model_row("teacher", t), aggregate_row(students)};
  out.reports["teacher_test"] = t.test;
  out.reports["student_test"] = students.runs.front().reports.test;
  if (t.ood) {
    out.reports["teacher_ood"] = *t.ood;
    out.reports["student_ood"] = *students.runs.front().reports.ood;
  }
  const double gap = std::abs(students.nll.mean - *t.test.nll);
  out.checks.push_back({"student test NLL within 0.05 of the teacher", gap <= 0.05,
                        "teacher " + detail::fmt(*t.test.nll) + ", student " + detail::fmt_stat(students.nll) +
                            ", gap " + detail::fmt(gap)});
  return out;
}

inline RecipeOutput run_fig2a(const Config& cfg, std::size_t jobs) {
  RecipeOutput out{"fig2a", {}, {}, {}};
  std::vector<std::size_t> ms;
  for (const auto& f : split_list(cfg.get("sweep.m"), ';')) ms.push_back(Config::parse_number<std::size_t>("sweep.m", f));
  if (ms.empty()) throw ConfigError("sweep.m must list at least one ensemble size");
  const PreparedData data = prepare_data(cfg);
  Config big = cfg;
  big.set("teacher.m", std::to_string(*std::max_element(ms.begin(), ms.end())));
  const Ensemble full = train_teacher(big, data, jobs);
  std::vector<AggregateRow> rows;
  for (auto m : ms) {
    const ModelReports r = evaluate_model(ensemble_prefix(full, m), cfg, data);
    rows.push_back(single_model_row("m=" + std::to_string(m), r));
    out.reports["teacher_m" + std::to_string(m) + "_test"] = r.test;
  }
  out.tables["aggregate"] = rows;
  const auto largest = std::max_element(ms.begin(), ms.end()) - ms.begin();
  const auto smallest = std::min_element(ms.begin(), ms.end()) - ms.begin();
  out.checks.push_back({"largest ensemble has test NLL no worse than the smallest",
                        rows[largest].nll.mean <= rows[smallest].nll.mean,
                        rows[smallest].label + " " + detail::fmt(rows[smallest].nll.mean) + ", " + rows[largest].label +
                            " " + detail::fmt(rows[largest].nll.mean)});
  return out;
}

inline RecipeOutput run_fig2b(const Config& cfg, std::size_t jobs) {
  RecipeOutput out{"fig2b", {}, {}, {}};
  const PreparedData data = prepare_data(cfg);
  const Ensemble teacher = train_teacher(cfg, data, jobs);
  const auto cells = detail::student_width_sweep(teacher, cfg, data, jobs);
  out.tables["aggregate"] = detail::rows_of(cells);
  out.tables["aggregate"].insert(out.tables["aggregate"].begin(), single_model_row("teacher", evaluate_model(teacher, cfg, data)));
  out.checks.push_back(detail::capacity_check(cells));
  return out;
}

inline RecipeOutput run_fig2c(const Config& cfg, std::size_t jobs) {
  RecipeOutput out{"fig2c", {}, {}, {}};
  const PreparedData data = prepare_data(cfg);
  const Ensemble teacher = train_teacher(cfg, data, jobs);
  const auto student_cells = detail::student_width_sweep(teacher, cfg, data, jobs);
  std::vector<CellResult> teacher_cells;
  for (const auto& widths : detail::arch_list(cfg, "sweep.teacher_hidden")) {
    Config c = cfg;
    c.set("teacher.hidden", detail::widths_value(widths));
    const Ensemble t = train_teacher(c, data, jobs);
    teacher_cells.push_back(distill_cell(t, c, data, "teacher=" + arch_label(widths), jobs));
  }
  out.tables["student_sweep"] = detail::rows_of(student_cells);
  out.tables["teacher_sweep"] = detail::rows_of(teacher_cells);
  const double s_student = detail::spread(student_cells), s_teacher = detail::spread(teacher_cells);
  out.checks.push_back({"student NLL spread across teacher widths below the spread across student widths",
                        s_teacher < s_student,
                        "teacher-width spread " + detail::fmt(s_teacher) + ", student-width spread " +
                            detail::fmt(s_student)});
  return out;
}

inline RecipeOutput run_fig3(const Config& cfg, std::size_t jobs) {
  RecipeOutput out{"fig3", {}, {}, {}};
  if (cfg.get("augment.kind") == "none") throw ConfigError("fig3 needs an augmentation (augment.kind)");
  if (cfg.get("ood.kind") == "none") throw ConfigError("fig3 needs an OOD set (ood.kind)");
  const PreparedData data = prepare_data(cfg);
  const Ensemble teacher = train_teacher(cfg, data, jobs);
  const ModelReports t = evaluate_model(teacher, cfg, data);
  Config plain = cfg;
  plain.set("augment.kind", "none");
  Config aug = cfg;
  aug.set("policy.augment_labeling", "augmented_image_label");
  const CellResult vanilla = distill_cell(teacher, plain, data, "student", jobs);
  const CellResult augmented = distill_cell(teacher, aug, data, "student-aug", jobs);
  out.tables["aggregate"] = {single_model_row("teacher", t), aggregate_row(vanilla), aggregate_row(augmented)};
  out.reports["teacher_ood"] = *t.ood;
  out.reports["student_ood"] = *vanilla.runs.front().reports.ood;
  out.reports["student-aug_ood"] = *augmented.runs.front().reports.ood;
  const double margin = augmented.ood_entropy->mean - vanilla.ood_entropy->mean;
  const double pooled = pooled_std(*augmented.ood_entropy, *vanilla.ood_entropy);
  out.checks.push_back({"augmented-label student has higher OOD entropy by more than the pooled std", margin > pooled,
                        "student " + detail::fmt_stat(*vanilla.ood_entropy) + ", student-aug " +
                            detail::fmt_stat(*augmented.ood_entropy) + ", margin " + detail::fmt(margin) +
                            " vs pooled std " + detail::fmt(pooled)});
  const double degradation = augmented.nll.mean - vanilla.nll.mean;
  out.checks.push_back({"in-distribution NLL degrades by at most 0.05", degradation <= 0.05,
                        "student " + detail::fmt_stat(vanilla.nll) + ", student-aug " + detail::fmt_stat(augmented.nll) +
                            ", change " + detail::fmt(degradation)});
  return out;
}

inline RecipeOutput run_tab1(const Config& cfg, std::size_t jobs) {
  RecipeOutput out{"tab1", {}, {}, {}};
  const PreparedData data = prepare_data(cfg);
  const Ensemble teacher = train_teacher(cfg, data, jobs);
  std::vector<AggregateRow> rows{single_model_row("teacher", evaluate_model(teacher, cfg, data))};
  for (const auto& widths : detail::arch_list(cfg, "sweep.student_hidden")) {
    Config c = cfg;
    c.set("student.hidden", detail::widths_value(widths));
    for (const auto& row : distill_sweep_rows(c)) {
      rows.push_back(aggregate_row(distill_cell(teacher, row.cfg, data, "student=" + arch_label(widths) + " " + row.label,
                                                jobs)));
    }
  }
  out.tables["aggregate"] = rows;
  out.checks.push_back({"alpha grid emitted for every student size", rows.size() > 1,
                        std::to_string(rows.size() - 1) + " rows (no directional criterion)"});
  return out;
}

inline RecipeOutput run_tab2(const Config& cfg, std::size_t jobs) {
  RecipeOutput out{"tab2", {}, {}, {}};
  const PreparedData data = prepare_data(cfg);
  const Ensemble teacher = train_teacher(cfg, data, jobs);
  const ModelReports t = evaluate_model(teacher, cfg, data);
  Config ref = cfg;
  ref.set("policy.kind", "vanilla");
  ref.set("sweep.proper_alpha_rule", "");
  std::vector<CellResult> cells{distill_cell(teacher, ref, data, "Ref", jobs)};
  std::optional<std::size_t> lower, one;
  for (const auto& row : distill_sweep_rows(cfg)) {
    if (row.rule && row.rule->kind == ProperAlphaRule::Kind::lower_bound) lower = cells.size();
    if (row.rule && row.rule->kind == ProperAlphaRule::Kind::one) one = cells.size();
    cells.push_back(distill_cell(teacher, row.cfg, data, row.label, jobs));
  }
  out.tables["aggregate"] = detail::rows_of(cells);
  out.tables["aggregate"].insert(out.tables["aggregate"].begin(), single_model_row("teacher", t));
  const double teacher_error = *t.test.error;
  out.checks.push_back({"teacher test error at least 15%", teacher_error >= 0.15,
                        "teacher error " + detail::fmt(teacher_error)});
  if (lower && one) {
    const auto& a = cells[*lower].nll;
    const auto& b = cells[*one].nll;
    const double pooled = pooled_std(a, b);
    out.checks.push_back({"abar+ row NLL no worse than the alpha=1 row by more than the pooled std",
                          a.mean <= b.mean + pooled,
                          "abar+ " + detail::fmt_stat(a) + ", alpha=1 " + detail::fmt_stat(b) + ", pooled std " +
                              detail::fmt(pooled)});
  } else {
    out.checks.push_back({"abar+ and alpha=1 rows present", false, "rule grid lacks lower_bound or one"});
  }
  return out;
}

inline RecipeOutput run_recipe(std::string_view id, const Config& cfg, std::size_t jobs = 1) {
  find_recipe(id);
  if (id == "fig1") return run_fig1(cfg, jobs);
  if (id == "fig2a") return run_fig2a(cfg, jobs);
  if (id == "fig2b") return run_fig2b(cfg, jobs);
  if (id == "fig2c") return run_fig2c(cfg, jobs);
  if (id == "fig3") return run_fig3(cfg, jobs);
  if (id == "tab1") return run_tab1(cfg, jobs);
  return run_tab2(cfg, jobs);
}

inline std::string check_line(const RecipeCheck& c) {
  return std::string(c.passed ? "PASS" : "FAIL") + "  " + c.name + "  [" + c.detail + "]";
}

/// Writes config.txt, summary.txt, <table>.{json,csv} and
/// histograms/<report>{.json,_hist.csv} under `dir`. No timestamps, so
/// reruns with the same config produce identical bytes.
inline void save_recipe_output(const RecipeOutput& out, const Config& cfg, const std::filesystem::path& dir) {
  write_file_atomic(dir / "config.txt", cfg.canonical_text());
  std::string summary = out.id + "\n";
  for (const auto& c : out.checks) summary += check_line(c) + "\n";
  write_file_atomic(dir / "summary.txt", summary);
  for (const auto& [name, rows] : out.tables) save_aggregate(rows, dir / name);
  for (const auto& [name, report] : out.reports) save_report_with_table(report, dir / "histograms", name);
}

}  // namespace ensdistill
