#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ensdistill/error.hpp"
#include "ensdistill/rng.hpp"

namespace ensdistill {

enum class AugmentKind { identity, gaussian_noise, input_jitter, mirror, crop_pad };

inline std::string to_string(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::identity: return "identity";
    case AugmentKind::gaussian_noise: return "gaussian_noise";
    case AugmentKind::input_jitter: return "input_jitter";
    case AugmentKind::mirror: return "mirror";
    case AugmentKind::crop_pad: return "crop_pad";
  }
  return "?";
}

inline AugmentKind augment_kind_from_string(const std::string& s) {
  for (auto k : {AugmentKind::identity, AugmentKind::gaussian_noise, AugmentKind::input_jitter, AugmentKind::mirror,
                 AugmentKind::crop_pad}) {
    if (to_string(k) == s) return k;
  }
  throw DomainError("unknown augmentation kind '" + s + "'");
}

enum class MirrorAxis { horizontal, vertical };

struct AugmentSpec {
  AugmentKind kind = AugmentKind::identity;
  double sigma = 0.0;       // gaussian_noise
  double max_shift = 0.0;   // input_jitter, per coordinate
  MirrorAxis axis = MirrorAxis::horizontal;
  double flip_probability = 1.0;  // mirror
  std::size_t pad = 0;      // crop_pad
  std::size_t image_side = 0;

  void validate(std::size_t input_dim) const {
    if (sigma < 0.0 || max_shift < 0.0) throw DomainError("augmentation strengths must be >= 0");
    if (flip_probability < 0.0 || flip_probability > 1.0) throw DomainError("flip probability must lie in [0, 1]");
    if (kind == AugmentKind::mirror || kind == AugmentKind::crop_pad) {
      if (image_side == 0 || image_side * image_side != input_dim) {
        throw ShapeError(to_string(kind) + " needs square images; input length " + std::to_string(input_dim) +
                         " does not match side " + std::to_string(image_side));
      }
    }
  }

  /// Same kind with every strength multiplied by `factor` ("aggressive" presets use 3).
  AugmentSpec scaled(double factor) const {
    AugmentSpec out = *this;
    out.sigma *= factor;
    out.max_shift *= factor;
    out.pad = static_cast<std::size_t>(std::lround(static_cast<double>(pad) * factor));
    return out;
  }

  bool operator==(const AugmentSpec&) const = default;
};

/// Applies one freshly drawn transformation to `x`. Deterministic in the
/// state of `rng`; never changes the input length.
inline std::vector<double> augment(const AugmentSpec& spec, std::span<const double> x, Rng& rng) {
  spec.validate(x.size());
  std::vector<double> out(x.begin(), x.end());
  switch (spec.kind) {
    case AugmentKind::identity:
      break;
    case AugmentKind::gaussian_noise: {
      if (spec.sigma == 0.0) break;
      std::normal_distribution<double> noise(0.0, spec.sigma);
      for (double& v : out) v += noise(rng);
      break;
    }
    case AugmentKind::input_jitter: {
      if (spec.max_shift == 0.0) break;
      std::uniform_real_distribution<double> shift(-spec.max_shift, spec.max_shift);
      for (double& v : out) v += shift(rng);
      break;
    }
    case AugmentKind::mirror: {
      if (spec.flip_probability < 1.0) {
        std::bernoulli_distribution flip(spec.flip_probability);
        if (!flip(rng)) break;
      }
      const std::size_t side = spec.image_side;
      for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) {
          const std::size_t src = spec.axis == MirrorAxis::horizontal ? r * side + (side - 1 - c)
                                                                      : (side - 1 - r) * side + c;
          out[r * side + c] = x[src];
        }
      }
      break;
    }
    case AugmentKind::crop_pad: {
      if (spec.pad == 0) break;
      // zero-pad by `pad` on every side, then crop a side x side window
      const auto side = static_cast<long>(spec.image_side);
      const auto pad = static_cast<long>(spec.pad);
      std::uniform_int_distribution<long> offset(0, 2 * pad);
      const long dr = offset(rng) - pad;
      const long dc = offset(rng) - pad;
      for (long r = 0; r < side; ++r) {
        for (long c = 0; c < side; ++c) {
          const long sr = r + dr;
          const long sc = c + dc;
          const bool inside = sr >= 0 && sr < side && sc >= 0 && sc < side;
          out[static_cast<std::size_t>(r * side + c)] = inside ? x[static_cast<std::size_t>(sr * side + sc)] : 0.0;
        }
      }
      break;
    }
  }
  return out;
}

/// An augmentation spec bound to a splittable random stream: the draw for
/// (epoch, sample) depends only on the root seed and that pair, never on the
/// order in which samples are processed.
class Augmenter {
 public:
  Augmenter(AugmentSpec spec, std::uint64_t stream_seed) : spec_(spec), stream_seed_(stream_seed) {}

  const AugmentSpec& spec() const noexcept { return spec_; }
  std::uint64_t stream_seed() const noexcept { return stream_seed_; }

  std::vector<double> apply(std::span<const double> x, std::uint64_t epoch, std::uint64_t sample_index) const {
    Rng rng = make_rng(stream_seed_, {epoch, sample_index});
    return augment(spec_, x, rng);
  }

 private:
  AugmentSpec spec_;
  std::uint64_t stream_seed_;
};

}  // namespace ensdistill
