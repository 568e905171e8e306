#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "tkd/error.hpp"
#include "tkd/gradcheck.hpp"
#include "tkd/tensor.hpp"

using namespace tkd;

namespace {

Tensor param(std::mt19937_64& gen, Shape shape, double lo = -1.0, double hi = 1.0) {
  const auto n = shape_size(shape);
  return Tensor::parameter(std::move(shape), oracle::random_values(gen, n, lo, hi), "p");
}

// Reduces an arbitrary output to a scalar through fixed random weights so
// every output coordinate contributes a distinct gradient.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  return sum_all(mul(y, Tensor::from(y.shape(), oracle::random_values(gen, y.size()))));
}

double primitive_error(const std::function<Tensor()>& f, std::vector<Tensor> params) {
  return oracle::finite_difference(f, std::move(params), 1e-5).max_rel;
}

}  // namespace

TEST(Tensor, FactoriesAndShape) {
  const Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_DOUBLE_EQ(t.at(1, 2), 6.0);
  EXPECT_DOUBLE_EQ(Tensor::scalar(2.5).item(), 2.5);
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor::zeros({0, 3}), ShapeError);
}

TEST(Tensor, MatmulMatchesOracle) {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + gen() % 7, k = 1 + gen() % 7, n = 1 + gen() % 7;
    const auto a = oracle::random_values(gen, m * k), b = oracle::random_values(gen, k * n);
    const Tensor c = matmul(Tensor::from({m, k}, a), Tensor::from({k, n}, b));
    EXPECT_LT(oracle::max_abs_diff(c.data(), oracle::matmul(a, m, k, b, n)), 1e-13);
  }
}

TEST(Tensor, ShapeMismatchNamesShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[4x2]"), std::string::npos);
  }
  EXPECT_THROW(add(Tensor::zeros({2, 2}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(Tensor, BackwardRequiresScalar) {
  const Tensor p = Tensor::parameter({2, 2}, {1, 2, 3, 4}, "p");
  EXPECT_THROW(backward(scale(p, 2.0)), ContractError);
}

TEST(Tensor, LogRejectsNonPositive) {
  EXPECT_THROW(tkd::log(Tensor::from({2}, {1.0, 0.0})), ContractError);
  EXPECT_THROW(tkd::log(Tensor::from({1}, {-3.0})), ContractError);
}

TEST(Tensor, SumOfSquaresGradient) {
  const Tensor x = Tensor::parameter({3}, {1.0, -2.0, 0.5}, "x");
  const GradientMap g = backward(sum_all(mul(x, x)));
  const Tensor gx = g.of(x);
  EXPECT_DOUBLE_EQ(gx.at(0), 2.0);
  EXPECT_DOUBLE_EQ(gx.at(1), -4.0);
  EXPECT_DOUBLE_EQ(gx.at(2), 1.0);
}

TEST(Tensor, ReluSubgradientAtZeroIsZero) {
  const Tensor x = Tensor::parameter({3}, {0.0, 1.0, -1.0}, "x");
  const Tensor gx = backward(sum_all(relu(x))).of(x);
  EXPECT_EQ(gx.at(0), 0.0);
  EXPECT_EQ(gx.at(1), 1.0);
  EXPECT_EQ(gx.at(2), 0.0);
}

TEST(Tensor, BackwardResetsAccumulatorsEachCall) {
  const Tensor x = Tensor::parameter({2}, {1.0, 2.0}, "x");
  const Tensor loss = sum_all(scale(x, 3.0));
  const auto first = backward(loss).of(x);
  const auto second = backward(loss).of(x);
  EXPECT_EQ(first.at(0), 3.0);
  EXPECT_EQ(second.at(0), 3.0);
}

TEST(Tensor, SharedSubexpressionAccumulates) {
  const Tensor x = Tensor::parameter({1}, {2.0}, "x");
  const Tensor y = mul(x, x);
  const Tensor gx = backward(sum_all(add(y, y))).of(x);
  EXPECT_DOUBLE_EQ(gx.item(), 8.0);
}

TEST(Tensor, UnreachedParameterHasZeroGradient) {
  const Tensor x = Tensor::parameter({2}, {1.0, 2.0}, "x");
  const Tensor unused = Tensor::parameter({2}, {1.0, 2.0}, "unused");
  const GradientMap g = backward(sum_all(x));
  EXPECT_FALSE(g.contains(unused));
  EXPECT_EQ(g.of(unused).at(0), 0.0);
}

TEST(Tensor, NoGradSkipsGraph) {
  const Tensor x = Tensor::parameter({2}, {1.0, 2.0}, "x");
  NoGradGuard guard;
  EXPECT_FALSE(grad_enabled());
  const Tensor y = scale(x, 2.0);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Tensor, SoftmaxRowsSumToOneAndShiftInvariant) {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t r = 1 + gen() % 5, c = 2 + gen() % 6;
    const auto z = oracle::random_values(gen, r * c, -30.0, 30.0);
    const Tensor p = softmax_rows(Tensor::from({r, c}, z));
    auto shifted = z;
    const double shift = oracle::random_values(gen, 1, -100.0, 100.0)[0];
    for (auto& v : shifted) v += shift;
    const Tensor q = softmax_rows(Tensor::from({r, c}, shifted));
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += p.at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    EXPECT_LT(oracle::max_abs_diff(p.data(), q.data()), 1e-12);
  }
}

TEST(Tensor, SoftmaxHandlesLargeLogits) {
  const Tensor p = softmax_rows(Tensor::from({1, 3}, {1000.0, 1000.0, -1000.0}));
  EXPECT_NEAR(p.at(0, 0), 0.5, 1e-15);
  EXPECT_EQ(p.at(0, 2), 0.0);
}

TEST(Tensor, LayerNormMatchesOracle) {
  std::mt19937_64 gen(5);
  const std::size_t r = 4, d = 6;
  const auto x = oracle::random_values(gen, r * d), g = oracle::random_values(gen, d), b = oracle::random_values(gen, d);
  const Tensor y = layer_norm(Tensor::from({r, d}, x), Tensor::from({d}, g), Tensor::from({d}, b), 1e-5);
  EXPECT_LT(oracle::max_abs_diff(y.data(), oracle::layer_norm(x, r, d, g, b, 1e-5)), 1e-12);
}

TEST(Tensor, SplitAndConcatRoundTrip) {
  std::mt19937_64 gen(9);
  const Tensor x = Tensor::from({3, 6}, oracle::random_values(gen, 18));
  const auto parts = split_cols(x, 3);
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_EQ(parts[1].shape(), (Shape{3, 2}));
  EXPECT_EQ(concat_cols(parts).data()[7], x.data()[7]);
  EXPECT_THROW(split_cols(x, 4), ShapeError);
}

// Per-primitive finite-difference checks, each below 1e-6.

TEST(PrimitiveGradients, Matmul) {
  std::mt19937_64 gen(21);
  const Tensor a = param(gen, {3, 4}), b = param(gen, {4, 2});
  EXPECT_LT(primitive_error([&] { return weighted_sum(matmul(a, b), 1); }, {a, b}), 1e-6);
}

TEST(PrimitiveGradients, Elementwise) {
  std::mt19937_64 gen(22);
  const Tensor a = param(gen, {3, 4}), b = param(gen, {3, 4});
  EXPECT_LT(primitive_error([&] { return weighted_sum(add(a, b), 2); }, {a, b}), 1e-6);
  EXPECT_LT(primitive_error([&] { return weighted_sum(sub(a, b), 3); }, {a, b}), 1e-6);
  EXPECT_LT(primitive_error([&] { return weighted_sum(mul(a, b), 4); }, {a, b}), 1e-6);
  EXPECT_LT(primitive_error([&] { return weighted_sum(scale(a, -1.7), 5); }, {a}), 1e-6);
}

TEST(PrimitiveGradients, RowVectorAndTranspose) {
  std::mt19937_64 gen(23);
  const Tensor x = param(gen, {3, 4}), b = param(gen, {4});
  EXPECT_LT(primitive_error([&] { return weighted_sum(add_row_vector(x, b), 6); }, {x, b}), 1e-6);
  EXPECT_LT(primitive_error([&] { return weighted_sum(transpose(x), 7); }, {x}), 1e-6);
}

TEST(PrimitiveGradients, Structural) {
  std::mt19937_64 gen(24);
  const Tensor a = param(gen, {3, 2}), b = param(gen, {3, 3}), c = param(gen, {2, 2});
  EXPECT_LT(primitive_error([&] { return weighted_sum(concat_cols(std::vector<Tensor>{a, b}), 8); }, {a, b}), 1e-6);
  EXPECT_LT(primitive_error([&] { return weighted_sum(concat_rows(std::vector<Tensor>{a, c}), 9); }, {a, c}), 1e-6);
  EXPECT_LT(primitive_error([&] { return weighted_sum(split_cols(b, 3)[1], 10); }, {b}), 1e-6);
  EXPECT_LT(primitive_error([&] { return weighted_sum(slice_rows(b, 1, 3), 11); }, {b}), 1e-6);
  const std::vector<std::size_t> idx{2, 0, 2};
  EXPECT_LT(primitive_error([&] { return weighted_sum(gather_rows(b, idx), 12); }, {b}), 1e-6);
}

TEST(PrimitiveGradients, Reductions) {
  std::mt19937_64 gen(25);
  const Tensor x = param(gen, {3, 4});
  EXPECT_LT(primitive_error([&] { return weighted_sum(mean(x, 0), 13); }, {x}), 1e-6);
  EXPECT_LT(primitive_error([&] { return weighted_sum(mean(x, 1), 14); }, {x}), 1e-6);
  EXPECT_LT(primitive_error([&] { return scale(mean_all(x), 3.0); }, {x}), 1e-6);
  EXPECT_LT(primitive_error([&] { return sum_all(x); }, {x}), 1e-6);
}

TEST(PrimitiveGradients, Pointwise) {
  std::mt19937_64 gen(26);
  const Tensor pos = param(gen, {3, 3}, 0.5, 2.0);
  const Tensor any = param(gen, {3, 3});
  const Tensor away_from_kink = param(gen, {3, 3}, 0.2, 1.0);
  EXPECT_LT(primitive_error([&] { return weighted_sum(tkd::log(pos), 15); }, {pos}), 1e-6);
  EXPECT_LT(primitive_error([&] { return weighted_sum(tkd::exp(any), 16); }, {any}), 1e-6);
  EXPECT_LT(primitive_error([&] { return weighted_sum(relu(scale(away_from_kink, -1.0)), 17); }, {away_from_kink}),
            1e-6);
  EXPECT_LT(primitive_error([&] { return weighted_sum(relu(away_from_kink), 18); }, {away_from_kink}), 1e-6);
}

TEST(PrimitiveGradients, SoftmaxAndLayerNorm) {
  std::mt19937_64 gen(27);
  const Tensor x = param(gen, {3, 5}, -2.0, 2.0), g = param(gen, {5}), b = param(gen, {5});
  EXPECT_LT(primitive_error([&] { return weighted_sum(softmax_rows(x), 19); }, {x}), 1e-6);
  EXPECT_LT(primitive_error([&] { return weighted_sum(layer_norm(x, g, b, 1e-5), 20); }, {x, g, b}), 1e-6);
}

TEST(PrimitiveGradients, SoftCrossEntropy) {
  std::mt19937_64 gen(28);
  const Tensor z = param(gen, {4, 3}, -2.0, 2.0);
  std::vector<double> t;
  for (int i = 0; i < 4; ++i) {
    const auto row = oracle::random_distribution(gen, 3);
    t.insert(t.end(), row.begin(), row.end());
  }
  const Tensor target = Tensor::from({4, 3}, t);
  EXPECT_LT(primitive_error([&] { return soft_cross_entropy(target, softmax_rows(z)); }, {z}), 1e-6);
}

TEST(GradCheck, LibraryCheckerAgreesOnSmoothFunction) {
  std::mt19937_64 gen(29);
  const Tensor a = param(gen, {3, 3});
  const auto r = finite_diff_check([&] { return weighted_sum(tkd::exp(matmul(a, a)), 30); }, {a}, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-6);
  EXPECT_EQ(r.coordinates, 9u);
  EXPECT_THROW(finite_diff_check([&] { return sum_all(a); }, {a}, 0.0), ContractError);
}

TEST(GradCheck, DetectsWrongGradient) {
  // A loss whose value ignores a parameter that the graph still reaches with
  // a nonzero gradient: x is detached in the value path but scaled in.
  const Tensor x = Tensor::parameter({1}, {1.0}, "x");
  const auto r = finite_diff_check(
      [&] {
        const Tensor frozen = x.detach();
        return add(sum_all(mul(frozen, frozen)), scale(sub(sum_all(x), sum_all(frozen)), 5.0));
      },
      {x}, 1e-5);
  EXPECT_GT(r.max_rel_error, 0.1);
}
