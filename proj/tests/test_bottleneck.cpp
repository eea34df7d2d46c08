#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>

#include "msgt/bottleneck.hpp"
#include "msgt/gradcheck.hpp"
#include "msgt/ops.hpp"
#include "msgt/rng.hpp"

using namespace msgt;
using namespace msgt::bottleneck;

namespace {

Tensor unit_rows(Tensor t) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double n = 0.0;
    for (double x : t.row_span(r)) n += x * x;
    for (auto& x : t.row_span(r)) x /= std::sqrt(n);
  }
  return t;
}

Tensor random_unit(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::matrix(r, c);
  for (auto& x : t.data()) x = rng.normal();
  return unit_rows(t);
}

struct Head {
  ParameterStore store;
  Params params;
  Head(std::size_t k, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    params = make_params(store, random_unit(k, d, seed + 1), rng);
  }
};

double scalar_of(Var v) { return v.value().item(); }

}  // namespace

TEST(FuseViews, SingleViewPassThrough) {
  for (double s : {0.01, 0.2, 0.5, 0.77, 0.999}) EXPECT_NEAR(fuse_views(std::vector<double>{s}, 0.5, 0.5, 0.0), s, 1e-14);
}

TEST(FuseViews, EqualScoresCollapse) {
  // mean == max == c, so any weights act on the same feature.
  const double c = 0.3;
  const double expect = sigmoid(0.8 * std::log(c / (1 - c)) + 0.4 * std::log(c / (1 - c)) - 0.1);
  EXPECT_NEAR(fuse_views(std::vector<double>{c, c, c}, 0.8, 0.4, -0.1), expect, 1e-15);
}

TEST(FuseViews, HandEvaluation) {
  // features: mean 0.5 (logit 0), max 0.8 (logit ln 4)
  EXPECT_NEAR(fuse_views(std::vector<double>{0.2, 0.8}, 0.5, 0.5, 0.0), 2.0 / 3.0, 1e-15);
  const double expect = 1.0 / (1.0 + std::exp(-(-std::log(4.0) + 0.3)));
  EXPECT_NEAR(fuse_views(std::vector<double>{0.2, 0.8}, 1.0, -1.0, 0.3), expect, 1e-15);
}

TEST(FuseViews, PermutationInvariant) {
  const std::vector<double> a{0.1, 0.7, 0.4}, b{0.4, 0.1, 0.7};
  EXPECT_EQ(fuse_views(a, 0.3, 0.9, 0.2), fuse_views(b, 0.3, 0.9, 0.2));
}

TEST(FuseViews, EmptyThrows) {
  EXPECT_THROW(fuse_views(std::vector<double>{}, 0.5, 0.5, 0.0), std::invalid_argument);
}

TEST(PredictConcepts, SingleViewEqualsPerViewScore) {
  Head s(3, 4, 1);
  Tensor v = random_unit(1, 4, 9);
  Tape tape;
  Var p = predict_concepts(tape, v, s.params);
  Tensor raw = sigmoid(add(matmul(tape.constant(v), tape.param(*s.params.head_weight)),
                           tape.param(*s.params.head_bias)))
                   .value();
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(p.value()[k], raw[k], 1e-14);
}

TEST(PredictConcepts, ZeroHeadGivesHalf) {
  Head s(3, 4, 1);
  s.params.head_weight->value.fill(0.0);
  Tape tape;
  Var p = predict_concepts(tape, random_unit(2, 4, 3), s.params);
  for (double x : p.value().data()) EXPECT_NEAR(x, 0.5, 1e-15);
}

TEST(PredictConcepts, GoldenSnapshotSeedZero) {
  // Frozen from the deterministic build: seed 0 params, K = 4, d = 6, two views.
  Head s(4, 6, 0);
  Tape tape;
  Var p = predict_concepts(tape, random_unit(2, 6, 100), s.params);
  const std::vector<double> golden = {0.52638046084583556, 0.48808510835199237, 0.46700716464391229, 0.53241319393193187};
  ASSERT_EQ(p.value().numel(), golden.size());
  for (std::size_t k = 0; k < golden.size(); ++k) EXPECT_NEAR(p.value()[k], golden[k], 1e-12);
}

TEST(PredictConcepts, NoViewsThrows) {
  Head s(2, 3, 1);
  Tape tape;
  EXPECT_THROW(predict_concepts(tape, Tensor::matrix(0, 3), s.params), std::invalid_argument);
}

TEST(Priors, OrthogonalAlignedOpposite) {
  Tensor t = Tensor::from_rows({{1, 0, 0}, {0, 1, 0}});
  Tensor pri = view_priors(Tensor::from_rows({{0, 0, 1}, {1, 0, 0}, {-1, 0, 0}}), t);
  EXPECT_EQ(pri(0, 0), 0.5);
  EXPECT_NEAR(pri(1, 0), 0.7310585786300049, 1e-15);
  EXPECT_NEAR(pri(2, 0), 0.2689414213699951, 1e-15);
  EXPECT_THROW(view_priors(Tensor::from_rows({{1, 0}}), t), std::invalid_argument);
}

TEST(Priors, FusedWithSameFusion) {
  Head s(3, 4, 2);
  Tensor v = random_unit(2, 4, 5);
  Tensor per = view_priors(v, s.params.concept_embeddings);
  Tensor f = prior_scores(v, s.params);
  for (std::size_t k = 0; k < 3; ++k)
    EXPECT_EQ(f[k], fuse_views(std::vector<double>{per(0, k), per(1, k)}, 0.5, 0.5, 0.0));
}

TEST(Interventions, NoneIsIdentity) {
  Tensor f = Tensor::row({0.2, 0.6, 0.9});
  auto out = apply_interventions(f, std::nullopt, std::nullopt, Tensor::identity(3), 0.6);
  EXPECT_EQ(out.priors, f);
  EXPECT_TRUE(out.z_clamps.empty());
  EXPECT_TRUE(out.audit.empty());
}

TEST(Interventions, AnnotationOverridesPrior) {
  Tensor f = Tensor::row({0.2, 0.6, 0.9, 0.1, 0.4});
  std::vector<io::Annotation> a(5, io::Annotation::Unknown);
  a[3] = io::Annotation::Present;
  a[2] = io::Annotation::Absent;
  auto out = apply_interventions(f, a, std::nullopt, Tensor::identity(5), 0.6);
  EXPECT_EQ(out.priors[3], 1.0);
  EXPECT_EQ(out.priors[2], 0.0);
  EXPECT_EQ(out.priors[0], 0.2);
  EXPECT_EQ(out.audit.size(), 2u);
}

TEST(Interventions, HintClampsMatchingConcept) {
  Tensor t = Tensor::identity(6);
  std::vector<double> hint(6, 0.0);
  hint[5] = 1.0;
  auto out = apply_interventions(Tensor::row({0.5, 0.5, 0.5, 0.5, 0.5, 0.5}), std::nullopt, hint, t, 0.6);
  ASSERT_EQ(out.z_clamps.size(), 1u);
  EXPECT_EQ(out.z_clamps.at(5), 1.0);
  EXPECT_EQ(out.audit[0].source, ClampSource::Hint);
}

TEST(Losses, Alignment) {
  Tape tape;
  auto c = [&](Tensor x) { return tape.constant(std::move(x)); };
  EXPECT_EQ(scalar_of(alignment_loss(c(Tensor::row({0.3, 0.7})), c(Tensor::row({0.3, 0.7})))), 0.0);
  EXPECT_EQ(scalar_of(alignment_loss(c(Tensor::row({1, 0})), c(Tensor::row({0, 1})))), 1.0);
  EXPECT_EQ(scalar_of(alignment_loss(c(Tensor::row({0.5})), c(Tensor::row({0.0})))), 0.25);
  EXPECT_THROW(alignment_loss(c(Tensor::row({1, 0})), c(Tensor::row({1}))), std::invalid_argument);
}

TEST(Losses, AlignmentSymmetricNonNegative) {
  Rng rng(4);
  Tape tape;
  for (int i = 0; i < 50; ++i) {
    Tensor a = Tensor::matrix(1, 5), b = Tensor::matrix(1, 5);
    for (auto& x : a.data()) x = rng.uniform();
    for (auto& x : b.data()) x = rng.uniform();
    const double ab = scalar_of(alignment_loss(tape.constant(a), tape.constant(b)));
    const double ba = scalar_of(alignment_loss(tape.constant(b), tape.constant(a)));
    EXPECT_EQ(ab, ba);
    EXPECT_GT(ab, 0.0);
  }
}

TEST(Losses, ElasticNet) {
  Tape tape;
  EXPECT_EQ(scalar_of(elastic_net(tape.constant(Tensor::matrix(2, 3)), 0.5)), 0.0);
  EXPECT_EQ(scalar_of(elastic_net(tape.constant(Tensor::from_rows({{1, -1}})), 1.0)), 2.0);
  EXPECT_EQ(scalar_of(elastic_net(tape.constant(Tensor::from_rows({{2}})), 0.0)), 2.0);
  EXPECT_THROW(elastic_net(tape.constant(Tensor::from_rows({{2}})), 1.5), std::invalid_argument);
  EXPECT_THROW(elastic_net(tape.constant(Tensor::from_rows({{2}})), -0.1), std::invalid_argument);
}

TEST(Losses, Cbl) {
  Tape tape;
  auto s = [&](double x) { return tape.constant(Tensor::scalar(x)); };
  EXPECT_EQ(scalar_of(cbl_loss(s(0.37), s(5.0), 0.0)), 0.37);
  EXPECT_NEAR(scalar_of(cbl_loss(s(0.1), s(2.0), 0.05)), 0.2, 1e-16);
  EXPECT_EQ(scalar_of(cbl_loss(s(0.0), s(0.0), 0.3)), 0.0);
}

TEST(Losses, GradientsPassFiniteDifference) {
  Rng rng(8);
  Tensor f = Tensor::matrix(1, 4), w = Tensor::matrix(3, 4);
  for (auto& x : f.data()) x = rng.uniform();
  for (auto& x : w.data()) x = rng.uniform(-1, 1);
  EXPECT_LT(finite_diff_check([&](Tape& t, Var p) { return alignment_loss(p, t.constant(f)); }, f, 1e-5), 1e-4);
  EXPECT_LT(finite_diff_check([](Tape&, Var x) { return elastic_net(x, 0.3); }, w, 1e-5), 1e-4);
  EXPECT_LT(finite_diff_check(
                [&](Tape& t, Var x) {
                  return cbl_loss(alignment_loss(sigmoid(slice_cols(gather_rows(x, {0}), 0, 4)), t.constant(f)),
                                  elastic_net(x, 0.5), 0.05);
                },
                w, 1e-5),
            1e-4);
}

TEST(HeadFusion, GradientPassesFiniteDifference) {
  Head s(3, 4, 6);
  // move fusion away from its symmetric init so both weights matter
  s.params.fusion_weight->value = Tensor::from_rows({{0.7, 0.2, 0.4}, {0.1, 0.6, 0.5}});
  s.params.fusion_bias->value = Tensor::row({0.1, -0.2, 0.05});
  Tensor v = random_unit(3, 4, 12);
  Tensor target = Tensor::row({0.9, 0.2, 0.6});
  const double err = finite_diff_check(
      [&](Tape& t) { return alignment_loss(predict_concepts(t, v, s.params), t.constant(target)); }, s.store, 1e-5);
  EXPECT_LT(err, 1e-4);
}

TEST(AssembleZ, NoClampsIsIdentity) {
  Tape tape;
  Var p = tape.input(Tensor::row({0.1, 0.5, 0.9}));
  EXPECT_EQ(assemble_z(p, {}).value(), p.value());
}

TEST(AssembleZ, ClampsOverwriteExactly) {
  Tape tape;
  Var p = tape.input(Tensor::row({0.1, 0.5, 0.9}));
  Var z1 = assemble_z(p, {{0, 1.0}});
  EXPECT_EQ(z1.value()[0], 1.0);
  Var z2 = assemble_z(p, {{0, 1.0}, {2, 0.0}});
  EXPECT_EQ(z2.value(), Tensor::row({1.0, 0.5, 0.0}));
  EXPECT_THROW(assemble_z(p, {{3, 1.0}}), std::out_of_range);
}

TEST(AssembleZ, ClampedCoordinatesCarryNoGradient) {
  Head s(4, 5, 3);
  Tape tape;
  Var p = predict_concepts(tape, random_unit(2, 5, 4), s.params);
  Var z = assemble_z(p, {{1, 1.0}, {3, 0.0}});
  tape.backward(sum(mul(z, tape.constant(Tensor::row({0.3, -2.0, 1.1, 4.0})))));
  Tensor gp = tape.grad(p);
  EXPECT_EQ(gp[1], 0.0);
  EXPECT_EQ(gp[3], 0.0);
  EXPECT_NE(gp[0], 0.0);
  const Tensor& gw = s.params.head_weight->grad;
  for (std::size_t r = 0; r < gw.rows(); ++r) {
    EXPECT_EQ(gw(r, 1), 0.0);
    EXPECT_EQ(gw(r, 3), 0.0);
  }
}
