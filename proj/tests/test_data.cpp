#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "ensdistill/augment.hpp"
#include "ensdistill/data.hpp"
#include "ensdistill/ensemble.hpp"
#include "ensdistill/metrics.hpp"
#include "ensdistill/mnist.hpp"

using namespace ensdistill;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ensdistill_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TrainingConfig quick_training(std::size_t epochs = 100) {
  TrainingConfig tc;
  tc.optimizer = OptimizerConfig::adam(0.01);
  tc.max_epochs = epochs;
  tc.patience = 15;
  return tc;
}

}  // namespace

TEST(TwoMoons, NoiselessPointsLieOnArcs) {
  const auto ds = make_two_moons(500, 0.0, 1);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double x = ds.inputs(i, 0), y = ds.inputs(i, 1);
    if ((*ds.labels)[i] == 0) {
      EXPECT_NEAR(std::hypot(x, y), 1.0, 1e-12);
      EXPECT_GE(y, -1e-12);
    } else {
      EXPECT_NEAR(std::hypot(x - 1.0, y - 0.5), 1.0, 1e-12);
      EXPECT_LE(y, 0.5 + 1e-12);
    }
  }
}

TEST(TwoMoons, DeterministicAndBalanced) {
  EXPECT_EQ(make_two_moons(100, 0.1, 3), make_two_moons(100, 0.1, 3));
  EXPECT_NE(make_two_moons(100, 0.1, 3), make_two_moons(100, 0.1, 4));
  const auto ds = make_two_moons(101, 0.1, 3);
  EXPECT_EQ(std::count(ds.labels->begin(), ds.labels->end(), 0u), 51);
}

TEST(TwoMoons, SmallNoiseIsLearnable) {
  const auto parts = split(make_two_moons(1000, 0.1, 5), {0.7, 0.15, 0.15}, 6);
  const auto model = train_classifier(parts.train, parts.val, {2, {16, 16}, 2}, quick_training(150), 7);
  EXPECT_LE(classification_error(predict_proba(model, parts.val.inputs), parts.val.require_labels()), 0.03);
}

TEST(Blobs, NearZeroNoiseIsSeparable) {
  const auto ds = make_gaussian_blobs(400, 4, circle_centers(4, 3.0), 1e-3, 1);
  const auto parts = split(ds, {0.6, 0.2, 0.2}, 2);
  const auto model = train_classifier(parts.train, parts.val, {2, {8}, 4}, quick_training(), 3);
  EXPECT_LT(classification_error(predict_proba(model, parts.test.inputs), parts.test.require_labels()), 0.005);
}

TEST(Blobs, BoundaryEntropyExceedsCentreEntropy) {
  // Two blobs a distance 1 apart with sigma 1.5 overlap heavily.
  const std::vector<std::vector<double>> centers{{-0.5, 0.0}, {0.5, 0.0}};
  const auto parts = split(make_gaussian_blobs(2000, 2, centers, 1.5, 4), {0.7, 0.15, 0.15}, 5);
  const auto ens = train_ensemble(parts.train, parts.val, {2, {16}, 2}, 3, quick_training(), 6);
  Matrix boundary(50, 2), centres(50, 2);
  for (std::size_t i = 0; i < 50; ++i) {
    const double t = -2.0 + 4.0 * static_cast<double>(i) / 49.0;
    boundary(i, 0) = 0.0;
    boundary(i, 1) = t;
    centres(i, 0) = i % 2 == 0 ? -3.0 : 3.0;
    centres(i, 1) = 0.1 * t;
  }
  const auto on_boundary = evaluate_predictions(ensemble_predict(ens, boundary),
                                                Dataset{boundary, std::nullopt, 2, SplitTag::ood, 0}, "b");
  const auto at_centres = evaluate_predictions(ensemble_predict(ens, centres),
                                               Dataset{centres, std::nullopt, 2, SplitTag::ood, 0}, "c");
  EXPECT_GT(on_boundary.mean_entropy, at_centres.mean_entropy);
}

TEST(Blobs, SymmetricPairLearnsBisector) {
  const std::vector<std::vector<double>> centers{{-1.0, 1.0}, {1.0, -1.0}};
  const auto parts = split(make_gaussian_blobs(2000, 2, centers, 1.0, 7), {0.7, 0.15, 0.15}, 8);
  const auto model = train_classifier(parts.train, parts.val, {2, {}, 2}, quick_training(), 9);
  const Matrix p = predict_proba(model, parts.test.inputs);
  std::size_t disagree = 0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    // Bayes rule: class 1 iff x > y (perpendicular bisector of the centres).
    const std::size_t bayes = parts.test.inputs(i, 0) > parts.test.inputs(i, 1) ? 1 : 0;
    if (argmax(p.row(i)) != bayes) ++disagree;
  }
  EXPECT_LE(static_cast<double>(disagree) / static_cast<double>(p.rows()), 0.02);
}

TEST(Blobs, MultiCentreLabelsCycle) {
  const auto ds = make_gaussian_blobs(24, 4, circle_centers(12, 3.0), 0.0, 1);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ((*ds.labels)[i], (i % 12) % 4);
  EXPECT_THROW(make_gaussian_blobs(10, 4, circle_centers(6, 1.0), 0.1, 1), ShapeError);
}

TEST(Ood, RemoteRingIsFarFromTrainingData) {
  const auto train = make_two_moons(500, 0.1, 1);
  const double scale = training_radius(train.inputs);
  OodParams params;
  params.radius = 100.0 * scale;
  params.reference = &train.inputs;
  params.min_separation = 10.0;
  const auto ring = make_ood_set(OodKind::remote_ring, 300, params, 2);
  EXPECT_FALSE(ring.labeled());
  EXPECT_EQ(ring.split_tag, SplitTag::ood);
  // Independent brute-force check against twice the radius (a diameter bound).
  for (std::size_t i = 0; i < ring.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < train.size(); ++j) {
      best = std::min(best, std::hypot(ring.inputs(i, 0) - train.inputs(j, 0), ring.inputs(i, 1) - train.inputs(j, 1)));
    }
    EXPECT_GT(best, 10.0 * 2.0 * scale);
  }
  params.radius = 0.5;
  EXPECT_THROW(make_ood_set(OodKind::remote_ring, 50, params, 2), DomainError);
}

TEST(Ood, ZeroShiftMatchesInDistributionDraw) {
  const auto centers = circle_centers(4, 3.0);
  OodParams params;
  params.centers = centers;
  params.shift = {0.0, 0.0};
  params.sigma = 0.5;
  const auto ood = make_ood_set(OodKind::shifted_blobs, 200, params, 9);
  const auto in = make_gaussian_blobs(200, 4, centers, 0.5, 9);
  EXPECT_EQ(ood.inputs, in.inputs);
  params.shift = {0.0};
  EXPECT_THROW(make_ood_set(OodKind::shifted_blobs, 10, params, 9), ShapeError);
}

TEST(Ood, UniformBoxBounds) {
  OodParams params;
  params.dim = 5;
  params.low = -1.0;
  params.high = 2.0;
  const auto box = make_ood_set(OodKind::uniform_box, 100, params, 3);
  for (double v : box.inputs.values()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 2.0);
  }
  EXPECT_EQ(box.dim(), 5u);
}

TEST(Mnist, RoundTripIsPixelExact) {
  const auto dir = temp_dir("mnist_ok");
  const std::vector<unsigned char> pixels{0, 255, 17, 128, 1, 2, 3, 4};
  write_idx_images(dir / "img", 2, 2, pixels);
  write_idx_labels(dir / "lbl", {3, 9});
  const auto ds = load_mnist_idx(dir / "img", dir / "lbl");
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.dim(), 4u);
  EXPECT_EQ(ds.image_side, 2u);
  EXPECT_EQ(ds.num_classes, 10u);
  EXPECT_EQ(*ds.labels, (std::vector<std::size_t>{3, 9}));
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    EXPECT_EQ(static_cast<unsigned char>(std::lround(ds.inputs.values()[i] * 255.0)), pixels[i]);
  }
}

TEST(Mnist, CorruptFilesGiveDistinctErrors) {
  const auto dir = temp_dir("mnist_bad");
  write_idx_images(dir / "img", 2, 2, std::vector<unsigned char>(8, 0));
  write_idx_labels(dir / "lbl3", {1, 2, 3});
  EXPECT_THROW(load_mnist_idx(dir / "img", dir / "lbl3"), CountMismatchError);
  // Labels passed as images: wrong magic.
  write_idx_labels(dir / "lbl2", {1, 2});
  EXPECT_THROW(load_mnist_idx(dir / "lbl2", dir / "lbl2"), BadMagicError);
  // Header declares more pixels than present.
  {
    std::ifstream in(dir / "img", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(dir / "short", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
  }
  EXPECT_THROW(load_mnist_idx(dir / "short", dir / "lbl2"), TruncatedError);
  EXPECT_THROW(load_mnist_idx(dir / "missing", dir / "lbl2"), MissingArtifactError);
}

TEST(Split, StratifiedProportions) {
  const auto ds = make_two_moons(1000, 0.1, 1);
  const auto parts = split(ds, {0.8, 0.1, 0.1}, 2);
  EXPECT_EQ(parts.train.size(), 800u);
  EXPECT_EQ(parts.val.size(), 100u);
  EXPECT_EQ(parts.test.size(), 100u);
  for (const auto* part : {&parts.train, &parts.val, &parts.test}) {
    const auto ones = std::count(part->labels->begin(), part->labels->end(), 1u);
    const auto expected = static_cast<long>(part->size()) / 2;
    EXPECT_LE(std::abs(ones - expected), 1);
  }
}

TEST(Split, DeterministicDisjointAndCovering) {
  const auto ds = make_gaussian_blobs(301, 3, circle_centers(3, 2.0), 0.5, 3);
  const auto a = split(ds, {0.6, 0.2, 0.2}, 4);
  const auto b = split(ds, {0.6, 0.2, 0.2}, 4);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  std::set<std::pair<double, double>> seen;
  for (const auto* part : {&a.train, &a.val, &a.test}) {
    for (std::size_t i = 0; i < part->size(); ++i) seen.insert({part->inputs(i, 0), part->inputs(i, 1)});
  }
  EXPECT_EQ(seen.size(), ds.size());
  EXPECT_EQ(a.train.size() + a.val.size() + a.test.size(), ds.size());
  EXPECT_EQ(a.val.split_tag, SplitTag::val);
}

TEST(Split, EmptyPartIsAnError) {
  const auto ds = make_two_moons(4, 0.1, 1);
  EXPECT_THROW(split(ds, {0.9, 0.05, 0.05}, 1), DomainError);
  EXPECT_THROW(split(ds, {0.5, 0.5, 0.5}, 1), DomainError);
}

TEST(Augment, IdentityAndZeroStrengthLeaveInputUnchanged) {
  const std::vector<double> x{0.1, -2.0, 3.5, 0.0};
  Rng rng(1);
  EXPECT_EQ(augment(AugmentSpec{}, x, rng), x);
  AugmentSpec noise;
  noise.kind = AugmentKind::gaussian_noise;
  EXPECT_EQ(augment(noise, x, rng), x);
  AugmentSpec jitter;
  jitter.kind = AugmentKind::input_jitter;
  EXPECT_EQ(augment(jitter, x, rng), x);
}

TEST(Augment, MirrorIsAnInvolution) {
  std::vector<double> img(9);
  for (std::size_t i = 0; i < 9; ++i) img[i] = static_cast<double>(i);
  for (auto axis : {MirrorAxis::horizontal, MirrorAxis::vertical}) {
    AugmentSpec spec;
    spec.kind = AugmentKind::mirror;
    spec.axis = axis;
    spec.image_side = 3;
    Rng rng(2);
    const auto once = augment(spec, img, rng);
    EXPECT_NE(once, img);
    EXPECT_EQ(augment(spec, once, rng), img);
  }
  AugmentSpec h;
  h.kind = AugmentKind::mirror;
  h.image_side = 3;
  Rng rng(3);
  EXPECT_EQ(augment(h, img, rng), (std::vector<double>{2, 1, 0, 5, 4, 3, 8, 7, 6}));
}

TEST(Augment, ImageOpsRejectNonSquareInput) {
  AugmentSpec spec;
  spec.kind = AugmentKind::crop_pad;
  spec.pad = 1;
  spec.image_side = 3;
  Rng rng(1);
  EXPECT_THROW(augment(spec, std::vector<double>(8, 0.0), rng), ShapeError);
  spec.kind = AugmentKind::mirror;
  spec.image_side = 0;
  EXPECT_THROW(augment(spec, std::vector<double>(9, 0.0), rng), ShapeError);
}

TEST(Augment, KeepsDimensionAndIsDeterministic) {
  std::vector<double> img(16);
  for (std::size_t i = 0; i < 16; ++i) img[i] = 1.0 + static_cast<double>(i);
  for (auto kind : {AugmentKind::gaussian_noise, AugmentKind::input_jitter, AugmentKind::mirror, AugmentKind::crop_pad}) {
    AugmentSpec spec;
    spec.kind = kind;
    spec.sigma = 0.5;
    spec.max_shift = 0.3;
    spec.pad = 2;
    spec.flip_probability = 0.5;
    spec.image_side = 4;
    const Augmenter aug(spec, 42);
    for (std::uint64_t s = 0; s < 20; ++s) {
      const auto a = aug.apply(img, 3, s);
      EXPECT_EQ(a.size(), img.size());
      EXPECT_EQ(a, aug.apply(img, 3, s));
    }
  }
}

TEST(Augment, CropPadShiftsContentAndZeroFills) {
  std::vector<double> img(16, 1.0);
  AugmentSpec spec;
  spec.kind = AugmentKind::crop_pad;
  spec.pad = 1;
  spec.image_side = 4;
  const Augmenter aug(spec, 7);
  bool saw_shift = false;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto a = aug.apply(img, 0, s);
    const auto zeros = std::count(a.begin(), a.end(), 0.0);
    // A shift of (dr, dc) within [-1, 1]^2 blanks 0, 4, or 7 pixels.
    EXPECT_TRUE(zeros == 0 || zeros == 4 || zeros == 7) << zeros;
    saw_shift = saw_shift || zeros > 0;
  }
  EXPECT_TRUE(saw_shift);
}

TEST(Augment, AggressivePresetTriplesStrength) {
  AugmentSpec spec;
  spec.sigma = 0.5;
  spec.max_shift = 0.1;
  spec.pad = 2;
  const auto a = spec.scaled(3.0);
  EXPECT_EQ(a.sigma, 1.5);
  EXPECT_NEAR(a.max_shift, 0.3, 1e-15);
  EXPECT_EQ(a.pad, 6u);
}

TEST(DatasetText, RoundTripIsExact) {
  const auto dir = temp_dir("text");
  auto ds = make_gaussian_blobs(50, 3, circle_centers(3, 2.0), 0.7, 5);
  save_dataset_text(ds, dir / "blobs.csv");
  EXPECT_EQ(load_dataset_text(dir / "blobs.csv"), ds);
  const auto ood = ds.without_labels();
  save_dataset_text(ood, dir / "ood.csv");
  EXPECT_EQ(load_dataset_text(dir / "ood.csv"), ood);
  std::ifstream in(dir / "blobs.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "50,2,3,train,0");
}

TEST(DatasetText, MalformedFilesAreRejected) {
  const auto dir = temp_dir("text_bad");
  {
    std::ofstream(dir / "short.csv") << "3,2,2,train\n0,1,0\n";
  }
  EXPECT_THROW(load_dataset_text(dir / "short.csv"), TruncatedError);
  {
    std::ofstream(dir / "fields.csv") << "1,2,2,train\n0,1,2,0\n";
  }
  EXPECT_THROW(load_dataset_text(dir / "fields.csv"), FormatError);
  EXPECT_THROW(load_dataset_text(dir / "nope.csv"), MissingArtifactError);
}
