#pragma once

// On-disk formats.
//
// Model weight file (little-endian throughout):
//
//   offset  size  field
//   0       4     magic "EDMW"
//   4       4     u32 format version (kModelFormatVersion)
//   8       8     u64 payload length P
//   16      P     payload
//   16+P    4     u32 CRC-32 (zlib polynomial) of bytes [0, 16+P)
//
// Payload:
//   u32 input_dim, u32 num_classes, u32 activation (0 = relu),
//   u32 hidden layer count H, H x u32 widths, u64 rng_seed,
//   then for every layer in order: fan_in*fan_out f64 weights (row-major,
//   [fan_in x fan_out]) followed by fan_out f64 biases.
//
// Ensemble directory: manifest.json plus member_<index>.weights per member.
// Reports: canonical JSON (sorted keys, shortest round-trip doubles).

#include <array>
#include <bit>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>
#include <zlib.h>

#include <nlohmann/json.hpp>

#include "ensdistill/data.hpp"
#include "ensdistill/distill.hpp"
#include "ensdistill/ensemble.hpp"
#include "ensdistill/error.hpp"
#include "ensdistill/metrics.hpp"
#include "ensdistill/nn.hpp"

#ifndef ENSDISTILL_VERSION
#define ENSDISTILL_VERSION "0.1.0"
#endif

namespace ensdistill {

static_assert(std::endian::native == std::endian::little, "weight files assume a little-endian host");

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr std::array<char, 4> kModelMagic = {'E', 'D', 'M', 'W'};
inline constexpr int kReportFormatVersion = 1;
inline constexpr int kManifestFormatVersion = 1;

using Json = nlohmann::json;

// ---------------------------------------------------------------- utilities

/// Writes `bytes` to a temporary sibling and renames it over `path`, so
/// readers only ever observe complete files.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

inline std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return hex.str();
}

namespace detail {

class ByteWriter {
 public:
  template <class T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    bytes_.append(raw, sizeof(T));
  }
  void put_bytes(std::string_view s) { bytes_.append(s); }
  std::string& bytes() noexcept { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw TruncatedError("model payload ends early");
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// ---------------------------------------------------------------- models

inline std::string serialize_model(const MlpModel& model) {
  detail::ByteWriter payload;
  payload.put(static_cast<std::uint32_t>(model.arch.input_dim));
  payload.put(static_cast<std::uint32_t>(model.arch.num_classes));
  payload.put(static_cast<std::uint32_t>(model.arch.activation));
  payload.put(static_cast<std::uint32_t>(model.arch.hidden_layers.size()));
  for (auto w : model.arch.hidden_layers) payload.put(static_cast<std::uint32_t>(w));
  payload.put(static_cast<std::uint64_t>(model.rng_seed));
  for (const auto& layer : model.layers) {
    for (double w : layer.weights.values()) payload.put(w);
    for (double b : layer.bias) payload.put(b);
  }
  detail::ByteWriter file;
  file.put_bytes(std::string_view(kModelMagic.data(), kModelMagic.size()));
  file.put(kModelFormatVersion);
  file.put(static_cast<std::uint64_t>(payload.bytes().size()));
  file.put_bytes(payload.bytes());
  file.put(crc32_of(file.bytes()));
  return std::move(file.bytes());
}

inline MlpModel deserialize_model(std::string_view bytes) {
  constexpr std::size_t kHeader = 16;
  if (bytes.size() < 8) throw TruncatedError("model file shorter than its header");
  if (std::memcmp(bytes.data(), kModelMagic.data(), kModelMagic.size()) != 0) {
    throw BadMagicError("not a model weight file (bad magic)");
  }
  detail::ByteReader header(bytes.substr(4, 4));
  const auto version = header.get<std::uint32_t>();
  if (version != kModelFormatVersion) {
    throw VersionError("unsupported model format version " + std::to_string(version) + " (this build reads " +
                       std::to_string(kModelFormatVersion) + ")");
  }
  if (bytes.size() < kHeader) throw TruncatedError("model file shorter than its header");
  detail::ByteReader len_reader(bytes.substr(8, 8));
  const auto payload_len = len_reader.get<std::uint64_t>();
  if (bytes.size() < kHeader + payload_len + 4) throw TruncatedError("model file is truncated");
  if (bytes.size() > kHeader + payload_len + 4) throw FormatError("trailing bytes after model checksum");
  detail::ByteReader crc_reader(bytes.substr(kHeader + payload_len, 4));
  const auto stored_crc = crc_reader.get<std::uint32_t>();
  if (stored_crc != crc32_of(bytes.substr(0, kHeader + payload_len))) throw ChecksumError("model checksum mismatch");

  detail::ByteReader in(bytes.substr(kHeader, payload_len));
  MlpModel model;
  model.arch.input_dim = in.get<std::uint32_t>();
  model.arch.num_classes = in.get<std::uint32_t>();
  const auto activation = in.get<std::uint32_t>();
  if (activation != static_cast<std::uint32_t>(Activation::relu)) throw FormatError("unknown activation code");
  const auto depth = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < depth; ++i) model.arch.hidden_layers.push_back(in.get<std::uint32_t>());
  model.rng_seed = in.get<std::uint64_t>();
  try {
    model.arch.validate();
  } catch (const DomainError& e) {
    throw FormatError(std::string("invalid architecture in model file: ") + e.what());
  }
  model.layers = zero_layers(model.arch);
  for (auto& layer : model.layers) {
    for (double& w : layer.weights.values()) w = in.get<double>();
    for (double& b : layer.bias) b = in.get<double>();
  }
  if (!in.done()) throw FormatError("model payload longer than its architecture");
  return model;
}

inline void save_model(const MlpModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_model(model));
}

inline MlpModel load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

// ---------------------------------------------------------------- JSON helpers

inline std::string dump_canonical(const Json& doc) { return doc.dump(2) + "\n"; }

inline Json arch_to_json(const ArchSpec& arch) {
  return {{"input_dim", arch.input_dim},
          {"hidden_layers", arch.hidden_layers},
          {"num_classes", arch.num_classes},
          {"activation", "relu"}};
}

namespace detail {

inline const Json& field(const Json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw ParseError(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(path + "." + key, "missing field");
  return *it;
}

template <class T>
T get_as(const Json& obj, const std::string& key, const std::string& path) {
  const Json& v = field(obj, key, path);
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + "." + key, e.what());
  }
}

inline std::optional<double> get_optional_double(const Json& obj, const std::string& key, const std::string& path) {
  const Json& v = field(obj, key, path);
  if (v.is_null()) return std::nullopt;
  if (!v.is_number()) throw ParseError(path + "." + key, "expected a number or null");
  return v.get<double>();
}

}  // namespace detail

inline ArchSpec arch_from_json(const Json& j, const std::string& path = "arch") {
  ArchSpec arch{detail::get_as<std::size_t>(j, "input_dim", path),
                detail::get_as<std::vector<std::size_t>>(j, "hidden_layers", path),
                detail::get_as<std::size_t>(j, "num_classes", path), Activation::relu};
  if (detail::get_as<std::string>(j, "activation", path) != "relu") throw ParseError(path + ".activation", "unknown");
  return arch;
}

// ---------------------------------------------------------------- ensembles

inline std::string member_file_name(std::size_t index) { return "member_" + std::to_string(index) + ".weights"; }

inline void save_ensemble(const Ensemble& ensemble, const std::filesystem::path& dir,
                          const std::string& training_config_digest) {
  std::filesystem::create_directories(dir);
  Json members = Json::array();
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    save_model(ensemble.members()[i], dir / member_file_name(i));
    Json entry = {{"file", member_file_name(i)}, {"seed", ensemble.members()[i].rng_seed}};
    entry["val_nll"] = ensemble.member_val_nll().empty() ? Json(nullptr) : Json(ensemble.member_val_nll()[i]);
    members.push_back(entry);
  }
  Json manifest = {{"format", "ensdistill.ensemble"},
                   {"version", kManifestFormatVersion},
                   {"member_count", ensemble.size()},
                   {"arch", arch_to_json(ensemble.arch())},
                   {"training_config_digest", training_config_digest},
                   {"members", members}};
  write_file_atomic(dir / "manifest.json", dump_canonical(manifest));
}

inline Ensemble load_ensemble(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) throw MissingArtifactError("no ensemble manifest in " + dir.string());
  Json manifest;
  try {
    manifest = Json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("manifest", e.what());
  }
  if (detail::get_as<int>(manifest, "version", "manifest") != kManifestFormatVersion) {
    throw VersionError("unsupported ensemble manifest version");
  }
  const ArchSpec arch = arch_from_json(detail::field(manifest, "arch", "manifest"), "manifest.arch");
  const auto& entries = detail::field(manifest, "members", "manifest");
  if (entries.size() != detail::get_as<std::size_t>(manifest, "member_count", "manifest")) {
    throw ParseError("manifest.members", "member_count disagrees with member list");
  }
  std::vector<MlpModel> members;
  std::vector<double> val_nll;
  bool have_nll = true;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string path = "manifest.members[" + std::to_string(i) + "]";
    MlpModel m = load_model(dir / detail::get_as<std::string>(entries[i], "file", path));
    if (!(m.arch == arch)) throw FormatError(path + ": member architecture differs from manifest");
    if (m.rng_seed != detail::get_as<std::uint64_t>(entries[i], "seed", path)) {
      throw FormatError(path + ": member seed differs from manifest");
    }
    auto nll_value = detail::get_optional_double(entries[i], "val_nll", path);
    have_nll = have_nll && nll_value.has_value();
    val_nll.push_back(nll_value.value_or(0.0));
    members.push_back(std::move(m));
  }
  if (!have_nll) val_nll.clear();
  return Ensemble(std::move(members), std::move(val_nll));
}

// ---------------------------------------------------------------- reports

inline Json optional_to_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json report_to_json(const EvalReport& report) {
  return {{"format", "ensdistill.report"},
          {"version", kReportFormatVersion},
          {"dataset_id", report.dataset_id},
          {"n_samples", report.n_samples},
          {"error", optional_to_json(report.error)},
          {"nll", optional_to_json(report.nll)},
          {"brier", optional_to_json(report.brier)},
          {"mean_entropy", report.mean_entropy},
          {"histogram",
           {{"bin_edges", report.histogram.bin_edges},
            {"counts", report.histogram.counts},
            {"fractions", report.histogram.fractions()},
            {"normalized", report.histogram.normalized}}}};
}

inline EvalReport report_from_json(const Json& doc) {
  using detail::get_as;
  const std::string root = "report";
  if (get_as<std::string>(doc, "format", root) != "ensdistill.report") throw ParseError(root + ".format", "wrong format");
  if (get_as<int>(doc, "version", root) != kReportFormatVersion) throw VersionError("unsupported report version");
  EvalReport report;
  report.dataset_id = get_as<std::string>(doc, "dataset_id", root);
  report.n_samples = get_as<std::size_t>(doc, "n_samples", root);
  report.error = detail::get_optional_double(doc, "error", root);
  report.nll = detail::get_optional_double(doc, "nll", root);
  report.brier = detail::get_optional_double(doc, "brier", root);
  report.mean_entropy = get_as<double>(doc, "mean_entropy", root);
  const Json& hist = detail::field(doc, "histogram", root);
  report.histogram.bin_edges = get_as<std::vector<double>>(hist, "bin_edges", root + ".histogram");
  report.histogram.counts = get_as<std::vector<std::size_t>>(hist, "counts", root + ".histogram");
  report.histogram.normalized = get_as<bool>(hist, "normalized", root + ".histogram");
  if (report.histogram.bin_edges.size() != report.histogram.counts.size() + 1) {
    throw ParseError(root + ".histogram.bin_edges", "expected one more edge than counts");
  }
  return report;
}

inline void save_report(const EvalReport& report, const std::filesystem::path& path) {
  write_file_atomic(path, dump_canonical(report_to_json(report)));
}

inline EvalReport load_report(const std::filesystem::path& path) {
  Json doc;
  try {
    doc = Json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("report", e.what());
  }
  return report_from_json(doc);
}

/// "bin_left,bin_right,count" table for external plotting.
inline std::string histogram_table(const EntropyHistogram& hist) {
  std::string out = "bin_left,bin_right,count\n";
  for (std::size_t b = 0; b < hist.counts.size(); ++b) {
    out += detail::format_double(hist.bin_edges[b]) + "," + detail::format_double(hist.bin_edges[b + 1]) + "," +
           std::to_string(hist.counts[b]) + "\n";
  }
  return out;
}

inline void save_histogram_table(const EntropyHistogram& hist, const std::filesystem::path& path) {
  write_file_atomic(path, histogram_table(hist));
}

/// "epoch,train_kl,val_nll,val_error,lr" table.
inline std::string history_table(const std::vector<HistoryEntry>& history) {
  std::string out = "epoch,train_kl,val_nll,val_error,lr\n";
  for (const auto& h : history) {
    out += std::to_string(h.epoch) + "," + detail::format_double(h.train_kl) + "," + detail::format_double(h.val_nll) +
           "," + detail::format_double(h.val_error) + "," + detail::format_double(h.lr) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------- run manifests

struct RunManifest {
  std::string run_id;
  std::string config_text;    // canonical resolved config
  std::string config_digest;  // sha256 of config_text
  std::vector<std::uint64_t> seeds;
  std::string teacher_dir;
  std::string student_weights;  // empty for teacher-only runs
  std::vector<std::string> reports;
  std::string tool_version = ENSDISTILL_VERSION;
  std::string created_utc;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

inline void save_run_manifest(const RunManifest& m, const std::filesystem::path& path) {
  Json doc = {{"format", "ensdistill.run"},
              {"version", kManifestFormatVersion},
              {"run_id", m.run_id},
              {"config", m.config_text},
              {"config_digest", m.config_digest},
              {"seeds", m.seeds},
              {"teacher_dir", m.teacher_dir},
              {"student_weights", m.student_weights},
              {"reports", m.reports},
              {"tool_version", m.tool_version},
              {"created_utc", m.created_utc}};
  write_file_atomic(path, dump_canonical(doc));
}

/// Loads a run manifest and verifies that the stored digest matches the
/// stored config text.
inline RunManifest load_run_manifest(const std::filesystem::path& path) {
  Json doc;
  try {
    doc = Json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("run", e.what());
  }
  using detail::get_as;
  if (get_as<int>(doc, "version", "run") != kManifestFormatVersion) throw VersionError("unsupported run manifest");
  RunManifest m;
  m.run_id = get_as<std::string>(doc, "run_id", "run");
  m.config_text = get_as<std::string>(doc, "config", "run");
  m.config_digest = get_as<std::string>(doc, "config_digest", "run");
  m.seeds = get_as<std::vector<std::uint64_t>>(doc, "seeds", "run");
  m.teacher_dir = get_as<std::string>(doc, "teacher_dir", "run");
  m.student_weights = get_as<std::string>(doc, "student_weights", "run");
  m.reports = get_as<std::vector<std::string>>(doc, "reports", "run");
  m.tool_version = get_as<std::string>(doc, "tool_version", "run");
  m.created_utc = get_as<std::string>(doc, "created_utc", "run");
  if (sha256_hex(m.config_text) != m.config_digest) throw ChecksumError("run manifest config digest mismatch");
  return m;
}

}  // namespace ensdistill
