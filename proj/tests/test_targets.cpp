#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "ensdistill/targets.hpp"
#include "oracles.hpp"

using namespace ensdistill;

namespace {

Categorical random_categorical(std::size_t k, std::mt19937_64& rng, double concentration = 1.0) {
  return Categorical(oracle::random_simplex(k, rng, concentration));
}

/// Random p whose argmax (unique) differs from a random y.
std::pair<Categorical, std::size_t> random_misclassified(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> ks(2, 10);
  while (true) {
    const std::size_t k = ks(rng);
    auto p = random_categorical(k, rng, 0.7);
    std::uniform_int_distribution<std::size_t> pick(0, k - 1);
    const std::size_t y = pick(rng);
    if (p.argmax() != y && p[p.argmax()] > p[y]) return {p, y};
  }
}

Matrix rows(std::initializer_list<std::initializer_list<double>> r) { return Matrix(r); }

}  // namespace

TEST(OneHot, Examples) {
  EXPECT_EQ(one_hot(2, 4), Categorical({0, 0, 1, 0}));
  EXPECT_THROW(one_hot(4, 4), DomainError);
  const auto a = one_hot(0, 2), b = one_hot(1, 2);
  EXPECT_EQ(Categorical({0.5 * a[0] + 0.5 * b[0], 0.5 * a[1] + 0.5 * b[1]}), Categorical({0.5, 0.5}));
}

TEST(Sharpen, AlphaZeroIsIdentity) {
  const Categorical p{0.7, 0.2, 0.1};
  EXPECT_EQ(sharpen_target(p, 0.0, one_hot(0, 3)), p);
}

TEST(Sharpen, HalfwayTowardOneHot) {
  const auto q = sharpen_target({0.7, 0.3}, 0.5, one_hot(0, 2));
  EXPECT_NEAR(q[0], 0.85, 1e-15);
  EXPECT_NEAR(q[1], 0.15, 1e-15);
}

TEST(Sharpen, PreconditionsEnforced) {
  EXPECT_THROW(sharpen_target({0.7, 0.3}, 0.5, {0.4, 0.6}), SharpeningError);
  EXPECT_THROW(sharpen_target({0.7, 0.3}, 0.5, {0.6, 0.4}), SharpeningError);  // H(r) > H(p)
  EXPECT_THROW(sharpen_target({0.7, 0.3}, 1.5, one_hot(0, 2)), DomainError);
  EXPECT_THROW(sharpen_target({0.7, 0.3}, 0.5, one_hot(0, 3)), ShapeError);
}

TEST(LowerBound, Examples) {
  EXPECT_NEAR(proper_alpha_lower_bound({0.6, 0.4}, 1), 0.2 / 1.2, 1e-15);
  EXPECT_NEAR(proper_alpha_lower_bound({0.6, 0.4}, 1), 1.0 / 6.0, 1e-15);
  EXPECT_EQ(proper_alpha_lower_bound({1.0, 0.0}, 1), 0.5);
  for (double eps : {1e-2, 1e-4, 1e-8}) {
    EXPECT_LT(proper_alpha_lower_bound({0.5 + eps, 0.5 - eps}, 1), 2.0 * eps + 1e-15);
  }
  EXPECT_THROW(proper_alpha_lower_bound({0.6, 0.4}, 0), NotMisclassifiedError);
}

TEST(LowerBound, MatchesHandFormulaOnRandomInputs) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 10000; ++i) {
    auto [p, y] = random_misclassified(rng);
    double top = 0.0;
    for (double v : p.probs()) top = std::max(top, v);
    const double d = top - p[y];
    EXPECT_NEAR(proper_alpha_lower_bound(p, y), d / (d + 1.0), 1e-12);
  }
}

TEST(ProperTarget, TieAtBoundIsRejected) {
  const Categorical p{0.6, 0.4};
  const double bound = 1.0 / 6.0;
  EXPECT_NEAR((1 - bound) * 0.6, (1 - bound) * 0.4 + bound, 1e-12);
  EXPECT_THROW(proper_target(p, 1, proper_alpha_lower_bound(p, 1)), BoundViolationError);
  EXPECT_THROW(proper_target(p, 1, 0.1), BoundViolationError);
  EXPECT_THROW(proper_target(p, 1, 1.01), BoundViolationError);
  EXPECT_THROW(proper_target(p, 0, 0.5), NotMisclassifiedError);
}

TEST(ProperTarget, Examples) {
  const auto q = proper_target({0.6, 0.4}, 1, 0.3);
  EXPECT_NEAR(q[0], 0.42, 1e-15);
  EXPECT_NEAR(q[1], 0.58, 1e-15);
  EXPECT_EQ(q.argmax(), 1u);
  EXPECT_EQ(proper_target({0.2, 0.5, 0.3}, 2, 1.0), one_hot(2, 3));
}

TEST(ProperTarget, LeadingMassesTieAtExactBound) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 10000; ++i) {
    auto [p, y] = random_misclassified(rng);
    const double a = proper_alpha_lower_bound(p, y);
    const std::size_t top = p.argmax();
    const double q_top = (1 - a) * p[top];
    const double q_true = (1 - a) * p[y] + a;
    EXPECT_NEAR(q_top, q_true, 1e-12);
  }
}

TEST(TargetProperties, SharpeningClosureAndArgmaxPreservation) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> ks(2, 10);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int checked = 0;
  while (checked < 10000) {
    const std::size_t k = ks(rng);
    const auto p = random_categorical(k, rng, 0.8);
    const std::size_t top = p.argmax();
    if (p.entropy() == 0.0) continue;
    const double alpha = unit(rng);
    // Either a one-hot r or a random lower-entropy r sharing the argmax.
    Categorical r = one_hot(top, k);
    if (checked % 2 == 1) {
      std::vector<double> mix(k);
      const double w = 0.5 + 0.5 * unit(rng);
      for (std::size_t j = 0; j < k; ++j) mix[j] = (1 - w) * p[j] + (j == top ? w : 0.0);
      r = Categorical(mix);
      if (!(r.entropy() < p.entropy()) || r.argmax() != top) continue;
    }
    const auto q = sharpen_target(p, alpha, r);
    ASSERT_TRUE(is_on_simplex(q.probs(), 1e-9));
    ASSERT_EQ(q.argmax(), top);
    ++checked;
  }
}

TEST(TargetProperties, CorrectionClosureArgmaxAndDarkKnowledgeMass) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    auto [p, y] = random_misclassified(rng);
    const double lo = proper_alpha_lower_bound(p, y) + kLowerBoundOffset;
    if (lo > 1.0) continue;
    double a1 = lo + (1.0 - lo) * unit(rng);
    double a2 = lo + (1.0 - lo) * unit(rng);
    if (a1 > a2) std::swap(a1, a2);
    const auto q1 = proper_target(p, y, a1);
    const auto q2 = proper_target(p, y, a2);
    ASSERT_TRUE(is_on_simplex(q1.probs(), 1e-9));
    ASSERT_EQ(q1.argmax(), y);
    ASSERT_EQ(q2.argmax(), y);
    ASSERT_EQ(proper_target(p, y, lo).argmax(), y);
    ASSERT_EQ(proper_target(p, y, 1.0), one_hot(y, p.size()));
    auto off_mass = [&](const Categorical& q) {
      double s = 0.0;
      for (std::size_t k = 0; k < q.size(); ++k) s += k == y ? 0.0 : q[k];
      return s;
    };
    EXPECT_NEAR(off_mass(q1), (1 - a1) * (1 - p[y]), 1e-12);
    if (a2 - a1 > 1e-9) {
      EXPECT_GT(off_mass(q1), off_mass(q2));
    }
  }
}

TEST(TargetProperties, SharpeningNeverRaisesEntropy) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t k = 2; k <= 10; ++k) {
    for (int i = 0; i < 10000; ++i) {
      const auto p = random_categorical(k, rng);
      if (p.entropy() == 0.0) continue;
      const double alpha = unit(rng);
      const auto q = sharpen_target(p, alpha, one_hot(p.argmax(), k));
      ASSERT_LE(q.entropy(), p.entropy() + 1e-12) << "K=" << k << " alpha=" << alpha;
    }
  }
}

TEST(ApplyPolicy, VanillaIsBitwisePassThrough) {
  const Matrix p = rows({{0.8, 0.2}, {0.3, 0.7}});
  EXPECT_EQ(apply_target_policy(p, std::vector<std::size_t>{0, 0}, TargetPolicy::vanilla()), p);
}

TEST(ApplyPolicy, SharpensOnlyCorrectRows) {
  const Matrix p = rows({{0.8, 0.2}, {0.3, 0.7}});
  const Matrix q = apply_target_policy(p, std::vector<std::size_t>{0, 0}, TargetPolicy::sharpened(0.1));
  EXPECT_NEAR(q(0, 0), 0.82, 1e-15);
  EXPECT_NEAR(q(0, 1), 0.18, 1e-15);
  EXPECT_EQ(q(1, 0), 0.3);
  EXPECT_EQ(q(1, 1), 0.7);
}

TEST(ApplyPolicy, LowerBoundRuleBarelyFlipsArgmax) {
  const Matrix p = rows({{0.6, 0.4}, {0.9, 0.1}});
  const Matrix q = apply_target_policy(p, std::vector<std::size_t>{1, 0},
                                       TargetPolicy::proper(ProperAlphaRule::lower_bound()));
  EXPECT_GT(q(0, 1) - q(0, 0), 0.0);
  EXPECT_LE(q(0, 1) - q(0, 0), 2e-6);
  EXPECT_EQ(q(1, 0), 0.9);
  EXPECT_EQ(q(1, 1), 0.1);
}

TEST(ApplyPolicy, RuleResolution) {
  const double b = 0.25;
  EXPECT_EQ(ProperAlphaRule::lower_bound().resolve(b), b + 1e-6);
  EXPECT_NEAR(ProperAlphaRule::interpolated(0.1).resolve(b), 0.9 * b + 0.1, 1e-15);
  EXPECT_NEAR(ProperAlphaRule::interpolated(0.2).resolve(b), 0.8 * b + 0.2, 1e-15);
  EXPECT_EQ(ProperAlphaRule::one().resolve(b), 1.0);
}

TEST(ApplyPolicy, CombinedPolicyTouchesBothPartitions) {
  const Matrix p = rows({{0.8, 0.2}, {0.6, 0.4}});
  TargetPolicy policy{TargetKind::sharpened_plus_proper, 0.5, ProperAlphaRule::one(),
                      AugmentLabeling::augmented_image_label};
  const Matrix q = apply_target_policy(p, std::vector<std::size_t>{0, 1}, policy);
  EXPECT_NEAR(q(0, 0), 0.9, 1e-15);
  EXPECT_EQ(q(1, 0), 0.0);
  EXPECT_EQ(q(1, 1), 1.0);
}

TEST(ApplyPolicy, BatchedEqualsPerSample) {
  std::mt19937_64 rng(8);
  const std::size_t n = 200, k = 5;
  Matrix p(n, k);
  std::vector<std::size_t> y(n);
  std::uniform_int_distribution<std::size_t> pick(0, k - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = oracle::random_simplex(k, rng, 0.5);
    std::copy(c.begin(), c.end(), p.row(i).begin());
    y[i] = pick(rng);
  }
  for (const auto& policy :
       {TargetPolicy::vanilla(), TargetPolicy::sharpened(0.3), TargetPolicy::proper(ProperAlphaRule::interpolated(0.1)),
        TargetPolicy{TargetKind::sharpened_plus_proper, 0.2, ProperAlphaRule::lower_bound(),
                     AugmentLabeling::augmented_image_label}}) {
    const Matrix batched = apply_target_policy(p, y, policy);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t idx[] = {i};
      const Matrix single = apply_target_policy(p.gather_rows(idx), std::vector<std::size_t>{y[i]}, policy);
      for (std::size_t c = 0; c < k; ++c) ASSERT_EQ(single(0, c), batched(i, c));
    }
  }
}

TEST(BuildTargets, VanillaEqualsEnsemblePredict) {
  const Ensemble teacher({init_model({3, {4}, 3}, 1), init_model({3, {4}, 3}, 2)});
  const Matrix x{{0.1, 0.2, 0.3}, {-1.0, 2.0, 0.5}};
  EXPECT_EQ(build_targets(teacher, x, std::vector<std::size_t>{0, 1}, TargetPolicy::vanilla()),
            ensemble_predict(teacher, x));
}

namespace {

Ensemble linear_teacher() {
  // Two depth-0 members that both score class 1 as w * x[0].
  const ArchSpec arch{2, {}, 2};
  MlpModel a{arch, zero_layers(arch), 1};
  MlpModel b{arch, zero_layers(arch), 2};
  a.layers[0].weights(0, 1) = 1.0;
  b.layers[0].weights(0, 1) = 2.0;
  b.layers[0].weights(1, 0) = 0.5;
  return Ensemble({a, b});
}

}  // namespace

TEST(LabelAugmented, IdentityAugmentationMakesRulesAgree) {
  const auto teacher = linear_teacher();
  const std::vector<double> x{0.3, -0.4};
  EXPECT_EQ(label_augmented(teacher, x, x, AugmentLabeling::original_image_label),
            label_augmented(teacher, x, x, AugmentLabeling::augmented_image_label));
}

TEST(LabelAugmented, OriginalRuleIgnoresAugmentedInput) {
  const auto teacher = linear_teacher();
  const std::vector<double> x{0.3, -0.4};
  const auto ref = label_augmented(teacher, x, x, AugmentLabeling::original_image_label);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 5.0);
  for (int i = 0; i < 20; ++i) {
    const std::vector<double> xa{g(rng), g(rng)};
    EXPECT_EQ(label_augmented(teacher, x, xa, AugmentLabeling::original_image_label), ref);
  }
}

TEST(LabelAugmented, LineSearchFindsFlipThatSeparatesRules) {
  const auto teacher = linear_teacher();
  const std::vector<double> x{-2.0, 0.0};
  const auto clean = label_augmented(teacher, x, x, AugmentLabeling::augmented_image_label);
  ASSERT_EQ(clean.argmax(), 0u);
  // Walk along +x[0] until the teacher's argmax changes.
  std::vector<double> xa = x;
  bool flipped = false;
  for (int step = 0; step < 1000 && !flipped; ++step) {
    xa[0] += 0.01;
    flipped = label_augmented(teacher, x, xa, AugmentLabeling::augmented_image_label).argmax() != clean.argmax();
  }
  ASSERT_TRUE(flipped);
  EXPECT_NE(label_augmented(teacher, x, xa, AugmentLabeling::augmented_image_label).argmax(),
            label_augmented(teacher, x, xa, AugmentLabeling::original_image_label).argmax());
}

TEST(Policy, ParsingAndValidation) {
  EXPECT_EQ(target_kind_from_string("proper_posterior"), TargetKind::proper_posterior);
  EXPECT_THROW(target_kind_from_string("bogus"), DomainError);
  EXPECT_EQ(augment_labeling_from_string("original_image_label"), AugmentLabeling::original_image_label);
  EXPECT_EQ(proper_alpha_rule_from_string("interpolated", 0.2), ProperAlphaRule::interpolated(0.2));
  EXPECT_THROW(TargetPolicy::sharpened(1.5).validate(), DomainError);
}
