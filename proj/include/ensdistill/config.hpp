#pragma once

// Run configuration.
//
// A config document is plain text, one `key = value` per line. `#` starts a
// comment, blank lines are ignored, keys are dotted (`teacher.hidden`). Lists
// are comma-separated; a hidden-layer list of `none` (or empty) means no
// hidden layers. Sweep keys hold `;`-separated lists of such values.
//
// Resolution order: built-in defaults, then the named preset, then the config
// file, then `--set key=value` overrides. Unknown keys are rejected.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ensdistill/augment.hpp"
#include "ensdistill/data.hpp"
#include "ensdistill/distill.hpp"
#include "ensdistill/ensemble.hpp"
#include "ensdistill/error.hpp"
#include "ensdistill/mnist.hpp"
#include "ensdistill/nn.hpp"
#include "ensdistill/optim.hpp"
#include "ensdistill/targets.hpp"

namespace ensdistill {

struct ConfigKey {
  std::string_view key;
  std::string_view default_value;
  std::string_view help;
};

// clang-format off
inline constexpr ConfigKey kConfigSchema[] = {
  {"dataset.kind", "blobs", "two_moons | blobs | mnist | file"},
  {"dataset.n", "2000", "number of generated samples"},
  {"dataset.noise", "0.5", "two_moons noise sigma / blob sigma"},
  {"dataset.classes", "4", "blobs: number of classes K"},
  {"dataset.centers", "12", "blobs: centres on a circle (multiple of K; centre c has label c mod K)"},
  {"dataset.radius", "3", "blobs: circle radius"},
  {"dataset.dim", "2", "blobs: input dimension (centres padded with zeros)"},
  {"dataset.seed", "1", "generator seed"},
  {"dataset.split", "0.7,0.15,0.15", "train,val,test fractions"},
  {"dataset.split_seed", "2", "split seed"},
  {"dataset.path", "", "file: delimited text dataset"},
  {"dataset.mnist_images", "", "mnist: IDX image file"},
  {"dataset.mnist_labels", "", "mnist: IDX label file"},
  {"dataset.limit", "0", "mnist/file: keep the first n samples (0 = all)"},
  {"teacher.hidden", "32,32", "member hidden widths"},
  {"teacher.m", "10", "ensemble size"},
  {"teacher.optimizer", "adam", "adam | sgd_momentum"},
  {"teacher.lr", "0.01", "learning rate"},
  {"teacher.momentum", "0.9", "sgd_momentum coefficient"},
  {"teacher.batch_size", "64", "minibatch size"},
  {"teacher.max_epochs", "300", "epoch cap"},
  {"teacher.patience", "20", "early-stopping patience (epochs)"},
  {"teacher.seed", "100", "member j is seeded with seed + j"},
  {"student.hidden", "32", "student hidden widths"},
  {"student.epochs", "400", "distillation epochs"},
  {"student.lr_drops", "default", "drop epochs, or `default` for 3/4, 85% and 95% of the epochs"},
  {"student.lr_drop_factor", "0.1", "multiplier applied at every drop"},
  {"student.batch_size", "64", "minibatch size"},
  {"student.optimizer", "adam", "adam | sgd_momentum"},
  {"student.lr", "0.002", "learning rate"},
  {"student.momentum", "0.9", "sgd_momentum coefficient"},
  {"student.eval_every", "1", "epochs between validation evaluations"},
  {"student.seed", "1000", "replication r is seeded with seed + r"},
  {"policy.kind", "vanilla", "vanilla | sharpened | proper_posterior | sharpened_plus_proper"},
  {"policy.alpha", "0", "sharpening weight"},
  {"policy.proper_alpha_rule", "lower_bound", "lower_bound | interpolated | one"},
  {"policy.t", "0", "interpolated rule parameter"},
  {"policy.augment_labeling", "augmented_image_label", "original_image_label | augmented_image_label"},
  {"augment.kind", "none", "none | identity | gaussian_noise | input_jitter | mirror | crop_pad"},
  {"augment.sigma", "0", "gaussian_noise sigma"},
  {"augment.max_shift", "0", "input_jitter bound per coordinate"},
  {"augment.axis", "horizontal", "mirror axis: horizontal | vertical"},
  {"augment.flip_probability", "0.5", "mirror probability"},
  {"augment.pad", "0", "crop_pad padding"},
  {"augment.strength", "standard", "standard | aggressive (3x every strength)"},
  {"ood.kind", "none", "none | shifted_blobs | uniform_box | remote_ring"},
  {"ood.n", "1000", "OOD sample count"},
  {"ood.shift", "", "shifted_blobs translation (defaults to zero)"},
  {"ood.sigma", "0.5", "shifted_blobs sigma"},
  {"ood.low", "0", "uniform_box lower bound"},
  {"ood.high", "1", "uniform_box upper bound"},
  {"ood.radius", "100", "remote_ring radius"},
  {"ood.ring_width", "0", "remote_ring radial jitter"},
  {"ood.min_separation", "0", "required distance to the training inputs, in training radii"},
  {"ood.seed", "9", "OOD generator seed"},
  {"eval.bins", "30", "entropy histogram bins"},
  {"run.replications", "5", "students per configuration"},
  {"run.id", "", "run directory name (default: derived from the config digest)"},
  {"sweep.alpha", "", "tab1 sharpening weights"},
  {"sweep.proper_alpha_rule", "", "tab2 rules: lower_bound, interpolated:<t>, one"},
  {"sweep.student_hidden", "", "fig2b student architectures"},
  {"sweep.teacher_hidden", "", "fig2c teacher architectures"},
  {"sweep.m", "", "fig2a ensemble sizes"},
};
// clang-format on

inline bool is_known_key(std::string_view key) {
  return std::any_of(std::begin(kConfigSchema), std::end(kConfigSchema),
                     [&](const ConfigKey& k) { return k.key == key; });
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_list(std::string_view s, char delim) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(delim, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Flat key/value document with typed accessors. Every stored key is known.
class Config {
 public:
  Config() {
    for (const auto& k : kConfigSchema) values_[std::string(k.key)] = std::string(k.default_value);
  }

  void set(const std::string& key, const std::string& value) {
    if (!is_known_key(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = trim(value);
  }

  /// Applies a `key=value` override.
  void apply_override(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' lacks '='");
    set(trim(assignment.substr(0, eq)), std::string(assignment.substr(eq + 1)));
  }

  /// Merges a config document. A `preset = name` line is rejected here; the
  /// preset is chosen before documents are merged.
  void merge_text(std::string_view text, const std::string& source = "config") {
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      if (trim(line).empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
      }
      const std::string key = trim(std::string_view(line).substr(0, eq));
      if (!is_known_key(key)) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": unknown config key '" + key + "'");
      }
      values_[key] = trim(std::string_view(line).substr(eq + 1));
    }
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }
  std::uint64_t get_u64(const std::string& key) const { return parse_number<std::uint64_t>(key, get(key)); }
  std::size_t get_size(const std::string& key) const { return parse_number<std::size_t>(key, get(key)); }

  std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& f : split_list(get(key), ',')) out.push_back(parse_number<double>(key, f));
    return out;
  }

  std::vector<std::size_t> get_widths(const std::string& key) const { return parse_widths(key, get(key)); }

  static std::vector<std::size_t> parse_widths(const std::string& key, std::string_view text) {
    std::vector<std::size_t> out;
    if (trim(text) == "none") return out;
    for (const auto& f : split_list(text, ',')) out.push_back(parse_number<std::size_t>(key, f));
    return out;
  }

  /// Sorted `key = value` lines; the basis of the config digest.
  std::string canonical_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  bool operator==(const Config&) const = default;

  template <class T>
  static T parse_number(const std::string& key, std::string_view text) {
    const std::string s = trim(text);
    T value{};
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, value);
    if (s.empty() || ec != std::errc() || ptr != end) {
      throw ConfigError("config key '" + key + "': cannot parse '" + s + "' as a number");
    }
    return value;
  }

 private:
  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------- presets

struct Preset {
  std::string_view name;
  std::string_view description;
  std::string_view text;
};

// clang-format off
inline constexpr Preset kPresets[] = {
  {"two-moons", "two interleaving half circles, 2 classes",
   "dataset.kind = two_moons\n"
   "dataset.n = 2000\n"
   "dataset.noise = 0.2\n"
   "dataset.split = 0.7,0.15,0.15\n"
   "teacher.hidden = 16,16\n"
   "teacher.m = 10\n"
   "student.hidden = 16,16\n"
   "ood.kind = remote_ring\n"
   "ood.radius = 10\n"
   "ood.ring_width = 1\n"
   "ood.min_separation = 2\n"},
  {"blobs-k4", "4 classes over 12 overlapping Gaussian blobs on a circle",
   "dataset.kind = blobs\n"
   "dataset.classes = 4\n"
   "dataset.centers = 12\n"
   "dataset.radius = 3\n"
   "dataset.noise = 0.5\n"
   "teacher.hidden = 32,32\n"
   "student.hidden = 32\n"
   "ood.kind = shifted_blobs\n"
   "ood.shift = 6,0\n"},
  {"blobs-k4-hard", "blobs-k4 with wider blobs (teacher error above 15%)",
   "dataset.kind = blobs\n"
   "dataset.classes = 4\n"
   "dataset.centers = 12\n"
   "dataset.radius = 3\n"
   "dataset.noise = 0.7\n"
   "teacher.hidden = 32,32\n"
   "student.hidden = 32\n"},
  {"blobs-k4-d8", "blobs-k4 embedded in 8 dimensions, OOD blobs shifted off the data plane",
   "dataset.kind = blobs\n"
   "dataset.classes = 4\n"
   "dataset.centers = 12\n"
   "dataset.radius = 3\n"
   "dataset.noise = 0.5\n"
   "dataset.dim = 8\n"
   "teacher.hidden = 32,32\n"
   "student.hidden = 32\n"
   "augment.kind = gaussian_noise\n"
   "augment.sigma = 1\n"
   "ood.kind = shifted_blobs\n"
   "ood.shift = 0,0,4,0,0,0,0,0\n"},
  {"mnist-small", "MNIST IDX files, 3x200 MLP teacher, uniform-noise OOD images",
   "dataset.kind = mnist\n"
   "dataset.limit = 10000\n"
   "dataset.split = 0.8,0.1,0.1\n"
   "teacher.hidden = 200,200,200\n"
   "teacher.m = 5\n"
   "teacher.lr = 0.001\n"
   "teacher.batch_size = 100\n"
   "teacher.max_epochs = 50\n"
   "teacher.patience = 5\n"
   "student.hidden = 200,200,200\n"
   "student.epochs = 100\n"
   "student.lr = 0.001\n"
   "student.batch_size = 100\n"
   "augment.kind = crop_pad\n"
   "augment.pad = 2\n"
   "ood.kind = uniform_box\n"
   "ood.low = 0\n"
   "ood.high = 1\n"},
};
// clang-format on

inline std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& p : kPresets) out.emplace_back(p.name);
  return out;
}

inline const Preset& find_preset(std::string_view name) {
  for (const auto& p : kPresets) {
    if (p.name == name) return p;
  }
  std::string valid;
  for (const auto& p : kPresets) valid += (valid.empty() ? "" : ", ") + std::string(p.name);
  throw ConfigError("unknown preset '" + std::string(name) + "' (valid: " + valid + ")");
}

/// defaults <- preset <- file <- overrides.
inline Config resolve_config(const std::string& preset, const std::optional<std::filesystem::path>& file,
                             const std::vector<std::string>& overrides) {
  Config cfg;
  if (!preset.empty()) cfg.merge_text(find_preset(preset).text, "preset " + preset);
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

// ---------------------------------------------------------------- typed views

inline OptimizerConfig optimizer_from_config(const Config& cfg, const std::string& prefix) {
  const std::string kind = cfg.get(prefix + ".optimizer");
  OptimizerConfig out;
  if (kind == "adam") {
    out = OptimizerConfig::adam(cfg.get_double(prefix + ".lr"));
  } else if (kind == "sgd_momentum") {
    out = OptimizerConfig::sgd(cfg.get_double(prefix + ".lr"), cfg.get_double(prefix + ".momentum"));
  } else {
    throw ConfigError("config key '" + prefix + ".optimizer': unknown optimizer '" + kind + "'");
  }
  try {
    out.validate();
  } catch (const DomainError& e) {
    throw ConfigError(prefix + " optimizer: " + e.what());
  }
  return out;
}

inline TrainingConfig teacher_training_from_config(const Config& cfg) {
  TrainingConfig tc;
  tc.optimizer = optimizer_from_config(cfg, "teacher");
  tc.batch_size = cfg.get_size("teacher.batch_size");
  tc.max_epochs = cfg.get_size("teacher.max_epochs");
  tc.patience = cfg.get_size("teacher.patience");
  try {
    tc.validate();
  } catch (const DomainError& e) {
    throw ConfigError(std::string("teacher training: ") + e.what());
  }
  return tc;
}

inline TargetPolicy policy_from_config(const Config& cfg) {
  try {
    TargetPolicy p;
    p.kind = target_kind_from_string(cfg.get("policy.kind"));
    p.alpha = cfg.get_double("policy.alpha");
    p.proper_alpha_rule =
        proper_alpha_rule_from_string(cfg.get("policy.proper_alpha_rule"), cfg.get_double("policy.t"));
    p.augment_labeling = augment_labeling_from_string(cfg.get("policy.augment_labeling"));
    p.validate();
    return p;
  } catch (const DomainError& e) {
    throw ConfigError(std::string("policy: ") + e.what());
  }
}

/// Augmentation for the student, or nullopt for `augment.kind = none`.
inline std::optional<AugmentSpec> augment_from_config(const Config& cfg, std::size_t image_side) {
  const std::string kind = cfg.get("augment.kind");
  if (kind == "none") return std::nullopt;
  AugmentSpec spec;
  try {
    spec.kind = augment_kind_from_string(kind);
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  spec.sigma = cfg.get_double("augment.sigma");
  spec.max_shift = cfg.get_double("augment.max_shift");
  const std::string axis = cfg.get("augment.axis");
  if (axis == "horizontal") {
    spec.axis = MirrorAxis::horizontal;
  } else if (axis == "vertical") {
    spec.axis = MirrorAxis::vertical;
  } else {
    throw ConfigError("config key 'augment.axis': unknown axis '" + axis + "'");
  }
  spec.flip_probability = cfg.get_double("augment.flip_probability");
  spec.pad = cfg.get_size("augment.pad");
  spec.image_side = image_side;
  const std::string strength = cfg.get("augment.strength");
  if (strength == "aggressive") {
    spec = spec.scaled(3.0);
  } else if (strength != "standard") {
    throw ConfigError("config key 'augment.strength': expected standard or aggressive");
  }
  return spec;
}

inline std::vector<LrDrop> lr_drops_from_config(const Config& cfg, std::size_t epochs) {
  const std::string text = cfg.get("student.lr_drops");
  const double factor = cfg.get_double("student.lr_drop_factor");
  if (text == "default") {
    auto drops = default_lr_schedule(epochs);
    for (auto& d : drops) d.multiplier = factor;
    // Very short schedules collapse drop epochs; keep them strictly increasing.
    std::vector<LrDrop> out;
    for (const auto& d : drops) {
      if (d.epoch >= 1 && d.epoch < epochs && (out.empty() || d.epoch > out.back().epoch)) out.push_back(d);
    }
    return out;
  }
  std::vector<LrDrop> out;
  if (text == "none") return out;
  for (const auto& f : split_list(text, ',')) out.push_back({Config::parse_number<std::size_t>("student.lr_drops", f), factor});
  return out;
}

/// Distillation settings for replication 0; replication r adds r to the seed.
inline DistillConfig distill_from_config(const Config& cfg, std::size_t input_dim, std::size_t num_classes,
                                         std::size_t image_side) {
  DistillConfig dc;
  dc.student_arch = {input_dim, cfg.get_widths("student.hidden"), num_classes, Activation::relu};
  dc.epochs = cfg.get_size("student.epochs");
  dc.lr_schedule = lr_drops_from_config(cfg, dc.epochs);
  dc.batch_size = cfg.get_size("student.batch_size");
  dc.policy = policy_from_config(cfg);
  dc.seed = cfg.get_u64("student.seed");
  dc.eval_every = cfg.get_size("student.eval_every");
  dc.optimizer = optimizer_from_config(cfg, "student");
  dc.augment = augment_from_config(cfg, image_side);
  try {
    dc.validate();
  } catch (const DomainError& e) {
    throw ConfigError(std::string("student: ") + e.what());
  }
  return dc;
}

inline SplitFractions split_from_config(const Config& cfg) {
  const auto f = cfg.get_doubles("dataset.split");
  if (f.size() != 3) throw ConfigError("config key 'dataset.split': expected three fractions");
  return {f[0], f[1], f[2]};
}

inline std::vector<std::vector<double>> blob_centers_from_config(const Config& cfg) {
  const std::size_t dim = cfg.get_size("dataset.dim");
  if (dim < 2) throw ConfigError("config key 'dataset.dim': blobs need at least 2 dimensions");
  auto centers = circle_centers(cfg.get_size("dataset.centers"), cfg.get_double("dataset.radius"));
  for (auto& c : centers) c.resize(dim, 0.0);
  return centers;
}

/// The full labelled dataset described by `dataset.*`, before splitting.
inline Dataset dataset_from_config(const Config& cfg) {
  const std::string kind = cfg.get("dataset.kind");
  const std::size_t limit = cfg.get_size("dataset.limit");
  auto truncate = [&](Dataset ds) {
    if (limit == 0 || limit >= ds.size()) return ds;
    std::vector<std::size_t> keep(limit);
    for (std::size_t i = 0; i < limit; ++i) keep[i] = i;
    auto out = ds.subset(keep, ds.split_tag);
    return out;
  };
  try {
    if (kind == "two_moons") {
      return make_two_moons(cfg.get_size("dataset.n"), cfg.get_double("dataset.noise"), cfg.get_u64("dataset.seed"));
    }
    if (kind == "blobs") {
      return make_gaussian_blobs(cfg.get_size("dataset.n"), cfg.get_size("dataset.classes"),
                                 blob_centers_from_config(cfg), cfg.get_double("dataset.noise"),
                                 cfg.get_u64("dataset.seed"));
    }
    if (kind == "mnist") {
      if (cfg.get("dataset.mnist_images").empty() || cfg.get("dataset.mnist_labels").empty()) {
        throw ConfigError("dataset.kind = mnist needs dataset.mnist_images and dataset.mnist_labels");
      }
      return truncate(load_mnist_idx(cfg.get("dataset.mnist_images"), cfg.get("dataset.mnist_labels")));
    }
    if (kind == "file") {
      if (cfg.get("dataset.path").empty()) throw ConfigError("dataset.kind = file needs dataset.path");
      return truncate(load_dataset_text(cfg.get("dataset.path")));
    }
  } catch (const DomainError& e) {
    throw ConfigError(std::string("dataset: ") + e.what());
  }
  throw ConfigError("config key 'dataset.kind': unknown kind '" + kind + "'");
}

inline SplitDataset split_from_config(const Config& cfg, const Dataset& full) {
  try {
    return split(full, split_from_config(cfg), cfg.get_u64("dataset.split_seed"));
  } catch (const DomainError& e) {
    throw ConfigError(std::string("dataset.split: ") + e.what());
  }
}

inline ArchSpec teacher_arch_from_config(const Config& cfg, std::size_t input_dim, std::size_t num_classes) {
  ArchSpec arch{input_dim, cfg.get_widths("teacher.hidden"), num_classes, Activation::relu};
  try {
    arch.validate();
  } catch (const DomainError& e) {
    throw ConfigError(std::string("teacher.hidden: ") + e.what());
  }
  return arch;
}

/// OOD evaluation set, or nullopt for `ood.kind = none`. `train` is the
/// separation reference when ood.min_separation > 0.
inline std::optional<Dataset> ood_from_config(const Config& cfg, const Dataset& train) {
  const std::string kind = cfg.get("ood.kind");
  if (kind == "none") return std::nullopt;
  OodParams p;
  OodKind k;
  if (kind == "shifted_blobs") {
    if (cfg.get("dataset.kind") != "blobs") throw ConfigError("ood.kind = shifted_blobs needs dataset.kind = blobs");
    k = OodKind::shifted_blobs;
    p.centers = blob_centers_from_config(cfg);
    p.shift = cfg.get_doubles("ood.shift");
    if (p.shift.empty()) p.shift.assign(train.dim(), 0.0);
    p.sigma = cfg.get_double("ood.sigma");
  } else if (kind == "uniform_box") {
    k = OodKind::uniform_box;
    p.dim = train.dim();
    p.low = cfg.get_double("ood.low");
    p.high = cfg.get_double("ood.high");
  } else if (kind == "remote_ring") {
    k = OodKind::remote_ring;
    p.dim = train.dim();
    p.radius = cfg.get_double("ood.radius");
    p.ring_width = cfg.get_double("ood.ring_width");
  } else {
    throw ConfigError("config key 'ood.kind': unknown kind '" + kind + "'");
  }
  p.min_separation = cfg.get_double("ood.min_separation");
  if (p.min_separation > 0.0) p.reference = &train.inputs;
  try {
    Dataset ood = make_ood_set(k, cfg.get_size("ood.n"), p, cfg.get_u64("ood.seed"));
    ood.image_side = train.image_side;
    ood.num_classes = train.num_classes;
    return ood;
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("ood: ") + e.what());
  } catch (const DomainError& e) {
    throw ConfigError(std::string("ood: ") + e.what());
  }
}

}  // namespace ensdistill
