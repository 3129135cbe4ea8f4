#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace mmda;

namespace {

TextSpace random_text(Rng& rng, int per_class, int dim) {
  TextSpace t;
  t.embeddings = gaussian_matrix(rng, 2 * per_class, dim, 1.0);
  for (int i = 0; i < 2 * per_class; ++i) {
    t.embeddings.row(i).normalize();
    t.class_of.push_back(i < per_class ? kLive : kSpoof);
  }
  return t;
}

double brute_min_distance(const RowVector& v, const TextSpace& t, int own_class, bool own_only) {
  double best = 3.0;
  for (Eigen::Index j = 0; j < t.size(); ++j) {
    if (own_only && t.class_of[static_cast<std::size_t>(j)] != own_class) continue;
    best = std::min(best, oracle::cosine_distance(oracle::row(v, 0), oracle::row(t.embeddings, j)));
  }
  return best;
}

}  // namespace

TEST(CosineDistance, IdenticalAndOrthogonalRows) {
  TextSpace t;
  t.embeddings = Matrix{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}};
  t.class_of = {kLive, kSpoof};
  EXPECT_NEAR(min_cosine_distance(RowVector{{2.0, 0.0, 0.0}}, t), 0.0, 1e-15);
  EXPECT_NEAR(min_cosine_distance(RowVector{{0.0, 0.0, 3.0}}, t), 1.0, 1e-15);
  EXPECT_NEAR(min_cosine_distance(RowVector{{0.0, 1.0, 0.0}}, t, DistanceMode::kNearestOwnClass, kLive), 1.0, 1e-15);
  EXPECT_THROW(min_cosine_distance(RowVector::Zero(3), t), NumericError);
}

TEST(CosineDistance, MatchesBruteForceMinimum) {
  Rng rng(1);
  const auto t = random_text(rng, 5, 6);
  for (int trial = 0; trial < 100; ++trial) {
    const RowVector v = gaussian_matrix(rng, 1, 6, 1.0);
    const int cls = trial % 2;
    EXPECT_NEAR(min_cosine_distance(v, t), brute_min_distance(v, t, cls, false), 1e-12);
    EXPECT_NEAR(min_cosine_distance(v, t, DistanceMode::kNearestOwnClass, cls), brute_min_distance(v, t, cls, true),
                1e-12);
  }
}

TEST(CosineDistance, ScaleInvariantWithStableArgmin) {
  Rng rng(2);
  const auto t = random_text(rng, 4, 5);
  for (int trial = 0; trial < 50; ++trial) {
    const RowVector v = gaussian_matrix(rng, 1, 5, 1.0);
    const double c = 0.01 + 100.0 * rng.uniform();
    EXPECT_NEAR(min_cosine_distance(c * v, t), min_cosine_distance(v, t), 1e-12);
    EXPECT_EQ(nearest_text_index(c * v, t, DistanceMode::kNearestAny, kLive),
              nearest_text_index(v, t, DistanceMode::kNearestAny, kLive));
  }
}

TEST(AlignmentLoss, AnalyticPoints) {
  Tape tape;
  const Vector live = Vector::Ones(1);
  auto at = [&](double d, const Vector& y) {
    return alignment_loss_from_distances(tape.constant(Matrix::Constant(1, 1, d)), y, 0.0, Reduction::kMean, 1e-6)
        .scalar();
  };
  EXPECT_EQ(at(0.0, live), 0.0);
  EXPECT_NEAR(at(0.5, live), std::log(2.0), 1e-12);
  EXPECT_NEAR(at(0.5, Vector::Zero(1)), std::log(2.0), 1e-12);
  EXPECT_TRUE(std::isfinite(at(1.0, live)));
}

TEST(AlignmentLoss, MonotoneInDistanceForLiveTarget) {
  Tape tape;
  double prev = -1.0;
  for (double d = 0.0; d < 0.999; d += 0.05) {
    const double l = alignment_loss_from_distances(tape.constant(Matrix::Constant(1, 1, d)), Vector::Ones(1), 0.1,
                                                   Reduction::kMean, 1e-6)
                         .scalar();
    if (d > 0.2) {
      EXPECT_GT(l, prev);
    }
    prev = l;
  }
}

TEST(AlignmentLoss, SmoothedTargetsMatchLoopOracle) {
  Rng rng(3);
  const auto t = random_text(rng, 3, 4);
  const Matrix v = gaussian_matrix(rng, 3, 4, 1.0);
  const std::vector<int> labels = {kLive, kSpoof, kLive};
  for (auto mode : {DistanceMode::kNearestAny, DistanceMode::kNearestOwnClass}) {
    RS2Config cfg;
    cfg.distance_mode = mode;
    cfg.label_smoothing = 0.1;
    Tape tape;
    const double got = alignment_loss(tape.constant(v), labels, t, cfg).scalar();
    double ref = 0.0;
    for (int i = 0; i < 3; ++i) {
      const bool own = mode == DistanceMode::kNearestOwnClass;
      const double d = brute_min_distance(v.row(i), t, labels[static_cast<std::size_t>(i)], own);
      const double y = own ? 1.0 : labels[static_cast<std::size_t>(i)];
      ref += oracle::bce(1.0 - d, oracle::smooth(y, 0.1));
    }
    EXPECT_NEAR(got, ref / 3.0, 1e-12);
  }
}

TEST(ClassificationLoss, MatchesLoopOracle) {
  Rng rng(4);
  const auto t = random_text(rng, 2, 5);
  const Matrix v = gaussian_matrix(rng, 4, 5, 1.0);
  const Matrix w = gaussian_matrix(rng, 5, 1, 1.0);
  const Matrix b = Matrix::Constant(1, 1, 0.3);
  const std::vector<int> labels = {kLive, kSpoof, kSpoof, kLive};
  RS2Config cfg;
  cfg.label_smoothing = 0.05;
  Tape tape;
  const double got = classification_loss(tape.constant(v), labels, t, tape.constant(w), tape.constant(b), cfg).scalar();
  double ref = 0.0;
  auto term = [&](const RowVector& e, int y) {
    double logit = b(0, 0);
    for (Eigen::Index c = 0; c < 5; ++c) logit += e(c) * w(c, 0);
    const double p_spoof = 1.0 / (1.0 + std::exp(-logit));
    return oracle::bce(1.0 - p_spoof, oracle::smooth(y, 0.05));
  };
  for (int i = 0; i < 4; ++i) ref += term(v.row(i), labels[static_cast<std::size_t>(i)]);
  for (int j = 0; j < 4; ++j) ref += term(t.embeddings.row(j), t.class_of[static_cast<std::size_t>(j)]);
  EXPECT_NEAR(got, ref / 8.0, 1e-12);
}

TEST(Rs2Loss, TotalIsSumOfTerms) {
  Rng rng(5);
  const auto t = random_text(rng, 3, 4);
  auto emb = fixture::random_embeddings(rng, {"A", "B", "A", "B"}, 2, 4);
  TextConstrainedClassifier clf{Parameter(gaussian_matrix(rng, 4, 1, 1.0)), Parameter(Matrix::Constant(1, 1, -0.2))};
  for (auto variant : {AlignmentVariant::kVanilla, AlignmentVariant::kSmooth, AlignmentVariant::kRs2}) {
    RS2Config cfg;
    cfg.variant = variant;
    const auto v = rs2_loss(emb, t, clf, cfg);
    EXPECT_EQ(v.total, v.l_cls + v.l_align);
    if (variant != AlignmentVariant::kRs2) {
      EXPECT_EQ(v.l_cls, 0.0);
    } else {
      EXPECT_GT(v.l_cls, 0.0);
    }
  }
}

TEST(Rs2Loss, VanillaUsesHardTargets) {
  RS2Config cfg;
  cfg.variant = AlignmentVariant::kVanilla;
  cfg.label_smoothing = 0.2;
  EXPECT_EQ(cfg.effective_smoothing(), 0.0);
  cfg.variant = AlignmentVariant::kSmooth;
  EXPECT_EQ(cfg.effective_smoothing(), 0.2);
  cfg.label_smoothing = 0.5;
  EXPECT_THROW(validate(cfg), ConfigError);
}

TEST(Rs2Gradient, EmbeddingsAndClassifier) {
  Rng rng(6);
  const auto t = random_text(rng, 3, 4);
  const std::vector<int> labels = {kLive, kSpoof, kSpoof};
  std::vector<Parameter> p;
  p.emplace_back(gaussian_matrix(rng, 3, 4, 1.0));
  p.emplace_back(gaussian_matrix(rng, 4, 1, 0.5));
  p.emplace_back(Matrix::Constant(1, 1, 0.1));
  RS2Config cfg;
  const double err = fixture::gradcheck(p, [&](Tape&, const std::vector<Var>& v) {
    return rs2_loss(v[0], labels, t, v[1], v[2], cfg).total;
  });
  EXPECT_LT(err, 1e-6);
}

TEST(TextSpaceScore, OrdersByCaptionSimilarity) {
  TextSpace t;
  t.embeddings = Matrix{{1.0, 0.0}, {0.0, 1.0}};
  t.class_of = {kLive, kSpoof};
  EXPECT_LT(text_space_spoof_score(RowVector{{1.0, 0.1}}, t), 0.5);
  EXPECT_GT(text_space_spoof_score(RowVector{{0.1, 1.0}}, t), 0.5);
}
