#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace mmda;

namespace {

std::vector<Parameter> params(std::initializer_list<std::pair<int, int>> shapes, std::uint64_t seed = 1) {
  Rng rng(seed);
  std::vector<Parameter> out;
  for (auto [r, c] : shapes) out.emplace_back(gaussian_matrix(rng, r, c, 1.0));
  return out;
}

}  // namespace

TEST(Autodiff, MatmulFamily) {
  auto p = params({{3, 4}, {4, 2}});
  EXPECT_LT(fixture::gradcheck(p, [](Tape&, const std::vector<Var>& v) { return ad::matmul(v[0], v[1]); }), 1e-6);
  auto q = params({{3, 4}, {5, 4}});
  EXPECT_LT(fixture::gradcheck(q, [](Tape&, const std::vector<Var>& v) { return ad::matmul_nt(v[0], v[1]); }), 1e-6);
}

TEST(Autodiff, ElementwiseAndBroadcast) {
  auto p = params({{3, 4}, {3, 4}, {1, 4}, {3, 1}, {1, 1}});
  EXPECT_LT(fixture::gradcheck(p, [](Tape&, const std::vector<Var>& v) { return ad::sub(ad::add(v[0], v[1]), v[0]); }), 1e-6);
  EXPECT_LT(fixture::gradcheck(p, [](Tape&, const std::vector<Var>& v) { return ad::hadamard(v[0], v[1]); }), 1e-6);
  EXPECT_LT(fixture::gradcheck(p, [](Tape&, const std::vector<Var>& v) { return ad::mul_row(v[0], v[2]); }), 1e-6);
  EXPECT_LT(fixture::gradcheck(p, [](Tape&, const std::vector<Var>& v) { return ad::add_row(v[0], v[2]); }), 1e-6);
  EXPECT_LT(fixture::gradcheck(p, [](Tape&, const std::vector<Var>& v) { return ad::mul_col(v[3], v[0]); }), 1e-6);
  EXPECT_LT(fixture::gradcheck(p, [](Tape&, const std::vector<Var>& v) { return ad::scalar_mul(v[4], v[0]); }), 1e-6);
  EXPECT_LT(fixture::gradcheck(p, [](Tape&, const std::vector<Var>& v) { return ad::add_scalar(ad::scale(v[0], -2.5), 1.0); }),
            1e-6);
}

TEST(Autodiff, Nonlinearities) {
  auto p = params({{4, 5}});
  EXPECT_LT(fixture::gradcheck(p, [](Tape&, const std::vector<Var>& v) { return ad::gelu(v[0]); }), 1e-6);
  EXPECT_LT(fixture::gradcheck(p, [](Tape&, const std::vector<Var>& v) { return ad::sigmoid(v[0]); }), 1e-6);
  EXPECT_LT(fixture::gradcheck(p, [](Tape&, const std::vector<Var>& v) { return ad::softmax_rows(v[0]); }), 1e-6);
}

TEST(Autodiff, GeluMatchesTanhFormula) {
  for (double x : {-3.0, -0.5, 0.0, 0.7, 2.2}) EXPECT_NEAR(ad::gelu_value(x), oracle::gelu(x), 1e-15);
}

TEST(Autodiff, SlicingAndConcatenation) {
  auto p = params({{4, 6}, {2, 6}});
  EXPECT_LT(fixture::gradcheck(p,
                      [](Tape&, const std::vector<Var>& v) {
                        return ad::concat_cols({ad::slice_cols(v[0], 1, 3), ad::slice_cols(v[0], 0, 2)});
                      }),
            1e-6);
  EXPECT_LT(fixture::gradcheck(p,
                      [](Tape&, const std::vector<Var>& v) {
                        return ad::concat_rows({v[1], ad::slice_rows(v[0], 1, 2)});
                      }),
            1e-6);
  EXPECT_LT(fixture::gradcheck(p, [](Tape&, const std::vector<Var>& v) { return ad::block_mean_rows(v[0], {0, 1, 4}); }),
            1e-6);
}

TEST(Autodiff, Reductions) {
  auto p = params({{3, 3}});
  EXPECT_LT(fixture::gradcheck(p, [](Tape&, const std::vector<Var>& v) { return ad::sum(v[0]); }), 1e-6);
  EXPECT_LT(fixture::gradcheck(p, [](Tape&, const std::vector<Var>& v) { return ad::mean(v[0]); }), 1e-6);
}

TEST(Autodiff, BatchNormTraining) {
  auto p = params({{6, 3}, {1, 3}, {1, 3}});
  EXPECT_LT(fixture::gradcheck(p, [](Tape&, const std::vector<Var>& v) { return ad::batch_norm_train(v[0], v[1], v[2], 1e-5).out; }),
            1e-5);
  Tape tape;
  auto bn = ad::batch_norm_train(tape.constant(p[0].value), tape.constant(Matrix::Ones(1, 3)),
                                 tape.constant(Matrix::Zero(1, 3)), 0.0);
  const Matrix& y = bn.out.value();
  for (Eigen::Index c = 0; c < 3; ++c) {
    EXPECT_NEAR(y.col(c).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.col(c).squaredNorm() / 6.0, 1.0, 1e-9);
  }
}

TEST(Autodiff, BinaryCrossEntropy) {
  std::vector<Parameter> p;
  p.emplace_back(Matrix{{0.2}, {0.7}, {0.45}});
  Vector target(3);
  target << 1.0, 0.0, 0.3;
  EXPECT_LT(fixture::gradcheck(p, [&](Tape&, const std::vector<Var>& v) { return ad::binary_xent(v[0], target, 1e-6); }), 1e-6);
  Tape tape;
  Var out = ad::binary_xent(tape.constant(p[0].value), target, 1e-6);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(out.value()(i, 0), oracle::bce(p[0].value(i, 0), target(i)), 1e-14);
}

TEST(Autodiff, TopkRenormalize) {
  std::vector<Parameter> p;
  p.emplace_back(Matrix{{0.1, 0.4, 0.2, 0.3}, {0.5, 0.05, 0.25, 0.2}});
  EXPECT_LT(fixture::gradcheck(p, [](Tape&, const std::vector<Var>& v) { return ad::topk_renormalize(v[0], 2); }), 1e-6);
  Tape tape;
  const Matrix out = ad::topk_renormalize(tape.constant(p[0].value), 2).value();
  EXPECT_NEAR(out(0, 1), 0.4 / 0.7, 1e-15);
  EXPECT_NEAR(out(0, 3), 0.3 / 0.7, 1e-15);
  EXPECT_EQ(out(0, 0), 0.0);
  EXPECT_NEAR(out.row(1).sum(), 1.0, 1e-15);
}

TEST(Autodiff, GradDisabledTapeRecordsConstants) {
  Parameter p(Matrix::Ones(2, 2));
  Tape tape;
  tape.set_grad_enabled(false);
  Var v = tape.param(p);
  EXPECT_FALSE(tape.needs_grad(v.id()));
}

TEST(Autodiff, BackwardRequiresScalarRoot) {
  Tape tape;
  Parameter p(Matrix::Ones(2, 2));
  EXPECT_THROW(tape.backward(tape.param(p)), ShapeError);
}
