#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mrb/ad/grad_check.hpp"
#include "mrb/ad/ops.hpp"
#include "mrb/ad/optim.hpp"
#include "mrb/ad/rng.hpp"
#include "mrb/error.hpp"

namespace mrb::ad {
namespace {

Tensor random_tensor(RngStream& rng, std::size_t r, std::size_t c, double lo = -2.0,
                     double hi = 2.0) {
  Tensor t(r, c);
  for (double& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

TEST(Softmax, HandValues) {
  Tape tape;
  Var a = tape.constant(Tensor::from_rows({{0.0, 0.0}, {0.0, std::log(3.0)}, {5.0, 5.0}}));
  const Tensor p = softmax_rows(a).value();
  EXPECT_DOUBLE_EQ(p(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(p(0, 1), 0.5);
  EXPECT_NEAR(p(1, 0), 0.25, 1e-15);
  EXPECT_NEAR(p(1, 1), 0.75, 1e-15);
  EXPECT_DOUBLE_EQ(p(2, 0), 0.5);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  RngStream rng(7, 0);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor(rng, 5, 7, -30.0, 30.0);
    Tensor shifted = x;
    const double c = rng.uniform(-100.0, 100.0);
    for (double& v : shifted.data()) v += c;
    const Tensor p = kernels::softmax_rows(x);
    const Tensor q = kernels::softmax_rows(shifted);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double total = 0.0;
      for (std::size_t k = 0; k < p.cols(); ++k) {
        EXPECT_GE(p(r, k), 0.0);
        EXPECT_NEAR(p(r, k), q(r, k), 1e-12);
        total += p(r, k);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, RejectsNonFinite) {
  Tape tape;
  Var a = tape.constant(Tensor::from_rows({{0.0, std::numeric_limits<double>::infinity()}}));
  EXPECT_THROW(softmax_rows(a), NumericError);
  Var b = tape.constant(Tensor::from_rows({{std::nan(""), 1.0}}));
  EXPECT_THROW(softmax_rows(b), NumericError);
}

TEST(Backward, SquareAtThree) {
  Tape tape;
  Var x = tape.variable(Tensor::scalar(3.0));
  const Gradients g = tape.backward(x * x);
  EXPECT_DOUBLE_EQ(g.wrt(x).item(), 6.0);
}

TEST(Backward, ConstantFunctionHasZeroGradient) {
  Tape tape;
  Var x = tape.variable(Tensor::scalar(3.0));
  Var c = tape.constant(Tensor::scalar(2.5));
  const Gradients g = tape.backward(c * c);
  EXPECT_EQ(g.wrt(x).item(), 0.0);
}

TEST(Backward, CrossEntropyGradientIsProbabilitiesMinusOneHot) {
  Tape tape;
  Var logits = tape.variable(Tensor::from_rows({{0.3, -1.2, 2.0, 0.7}}));
  Var onehot = tape.constant(Tensor::from_rows({{0.0, 0.0, 1.0, 0.0}}));
  Var p = softmax_rows(logits);
  Var loss = scale(sum(mul(onehot, log(p))), -1.0);
  const Gradients g = tape.backward(loss);
  const Tensor probs = p.value();
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_NEAR(g.wrt(logits)(0, k), probs(0, k) - (k == 2 ? 1.0 : 0.0), 1e-14);
  }
}

TEST(Backward, RejectsNonScalarOutput) {
  Tape tape;
  Var x = tape.variable(Tensor(2, 2, 1.0));
  EXPECT_THROW(tape.backward(x * x), ShapeError);
}

TEST(Backward, NonParticipatingParametersGetZero) {
  ParameterSet params;
  const ParamId used = params.add("used", Tensor::scalar(2.0));
  params.add("unused", Tensor(2, 3, 1.0));
  Tape tape;
  Var u = tape.param(params, used);
  const auto grads = tape.backward(mul(u, u)).for_set(params);
  ASSERT_EQ(grads.size(), 2u);
  EXPECT_DOUBLE_EQ(grads[0].item(), 4.0);
  EXPECT_EQ(grads[1], Tensor(2, 3, 0.0));
}

// f and g share inputs; the gradient of a·f + b·g must equal a·∇f + b·∇g.
TEST(Backward, IsLinear) {
  RngStream rng(11, 0);
  const Tensor xv = random_tensor(rng, 3, 4);
  const Tensor wv = random_tensor(rng, 4, 2);
  auto f = [](Var x, Var w) { return sum(tanh(matmul(x, w))); };
  auto g = [](Var x, Var w) { return mean(exp(scale(matmul(x, w), 0.3))); };
  const double a = 1.7, b = -0.4;

  auto grad_of = [&](auto&& fn) {
    Tape tape;
    Var x = tape.variable(xv);
    Var w = tape.variable(wv);
    const Gradients gr = tape.backward(fn(x, w));
    return std::make_pair(gr.wrt(x), gr.wrt(w));
  };
  const auto gf = grad_of(f);
  const auto gg = grad_of(g);
  const auto gc = grad_of([&](Var x, Var w) { return add(scale(f(x, w), a), scale(g(x, w), b)); });
  for (std::size_t i = 0; i < xv.size(); ++i)
    EXPECT_NEAR(gc.first[i], a * gf.first[i] + b * gg.first[i], 1e-13);
  for (std::size_t i = 0; i < wv.size(); ++i)
    EXPECT_NEAR(gc.second[i], a * gf.second[i] + b * gg.second[i], 1e-13);
}

TEST(Ops, BroadcastShapes) {
  Tape tape;
  Var a = tape.constant(Tensor::from_rows({{1, 2, 3}, {4, 5, 6}}));
  EXPECT_EQ(add(a, tape.constant(Tensor::from_rows({{10, 20, 30}}))).value(),
            Tensor::from_rows({{11, 22, 33}, {14, 25, 36}}));
  EXPECT_EQ(mul(a, tape.constant(Tensor::from_rows({{2}, {3}}))).value(),
            Tensor::from_rows({{2, 4, 6}, {12, 15, 18}}));
  EXPECT_EQ(sub(a, tape.constant(Tensor::scalar(1))).value(),
            Tensor::from_rows({{0, 1, 2}, {3, 4, 5}}));
  EXPECT_THROW(add(a, tape.constant(Tensor(3, 3))), ShapeError);
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Ops, SegmentMeanAndGather) {
  Tape tape;
  Var a = tape.constant(Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}}));
  const std::vector<std::size_t> lens{2, 1};
  EXPECT_EQ(segment_mean_rows(a, lens).value(), Tensor::from_rows({{2, 3}, {5, 6}}));
  const std::vector<std::size_t> idx{2, 0, 2};
  EXPECT_EQ(gather_rows(a, idx).value(), Tensor::from_rows({{5, 6}, {1, 2}, {5, 6}}));
  const std::vector<std::size_t> bad{3};
  EXPECT_THROW(gather_rows(a, bad), ShapeError);
}

TEST(Ops, L2NormalizeRejectsZeroRow) {
  Tape tape;
  Var a = tape.constant(Tensor::from_rows({{3, 4}, {0, 0}}));
  EXPECT_THROW(l2_normalize_rows(a), NumericError);
}

// Every differentiable op, composed, against central differences over 50 seeds.
TEST(GradCheck, CompositeOfAllOpsOverSeeds) {
  const ScalarFn f = [](Tape&, std::span<const Var> in) {
    const Var x = in[0], w = in[1], b = in[2], y = in[3];
    Var h = gelu(affine(x, w, b));                          // 4x3
    Var t = tanh(transpose(h));                             // 3x4
    Var p = softmax_rows(matmul(h, t));                     // 4x4
    Var n = l2_normalize_rows(add_scalar(mul(h, h), 0.5));  // 4x3
    const std::vector<std::size_t> idx{3, 1, 1, 0};
    Var g = gather_rows(n, idx);
    const std::vector<std::size_t> lens{1, 3};
    Var s = segment_mean_rows(g, lens);                     // 2x3
    const Var wide[] = {s, tanh(s)};
    const Var tail[] = {mean_rows(h), mean_rows(n)};
    const Var parts[] = {concat_cols(wide), concat_cols(tail)};
    Var c = concat_rows(parts);                             // 3x6
    Var e = exp(scale(sub(c, y), 0.25));
    Var l = log(add_scalar(p, 1.0));
    return add(add(mean(e), sum(mul(l, p))), sum(mean_rows(l)));
  };
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    RngStream rng(seed, 3);
    std::vector<Tensor> in{random_tensor(rng, 4, 2), random_tensor(rng, 2, 3),
                           random_tensor(rng, 1, 3), random_tensor(rng, 3, 6)};
    EXPECT_LE(grad_check(f, in), 1e-4) << "seed " << seed;
  }
}

TEST(GradCheck, AffineIsExact) {
  const ScalarFn f = [](Tape&, std::span<const Var> in) {
    return sum(affine(in[0], in[1], in[2]));
  };
  RngStream rng(5, 0);
  std::vector<Tensor> in{random_tensor(rng, 3, 4), random_tensor(rng, 4, 2),
                         random_tensor(rng, 1, 2)};
  EXPECT_LE(grad_check(f, in), 1e-9);
}

TEST(BlockAttention, MatchesDenseAttentionPerBlock) {
  RngStream rng(6, 0);
  const Tensor q = random_tensor(rng, 5, 3), k = random_tensor(rng, 6, 3),
               v = random_tensor(rng, 6, 2);
  const std::size_t qb[] = {2, 3}, kb[] = {4, 2};
  Tape tape;
  const auto att = block_attention(tape.constant(q), tape.constant(k), tape.constant(v), qb, kb, 0.5);
  ASSERT_EQ(att.weights.cols(), 4u);
  for (std::size_t r = 0; r < 5; ++r) {
    const std::size_t k0 = r < 2 ? 0 : 4, m = r < 2 ? 4 : 2;
    std::vector<double> s(m);
    double mx = -1e300, total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t c = 0; c < 3; ++c) s[j] += q(r, c) * k(k0 + j, c) * 0.5;
      mx = std::max(mx, s[j]);
    }
    for (double& x : s) total += (x = std::exp(x - mx));
    for (std::size_t c = 0; c < 2; ++c) {
      double want = 0.0;
      for (std::size_t j = 0; j < m; ++j) want += s[j] / total * v(k0 + j, c);
      EXPECT_NEAR(att.output.value()(r, c), want, 1e-12);
    }
    for (std::size_t j = m; j < 4; ++j) EXPECT_EQ(att.weights(r, j), 0.0);
  }
}

TEST(BlockAttention, GradientAndErrors) {
  const std::size_t qb[] = {2, 1, 3}, kb[] = {3, 1, 2};
  const ScalarFn f = [&](Tape&, std::span<const Var> in) {
    const auto att = block_attention(in[0], in[1], in[2], qb, kb, 0.7);
    return sum(mul(att.output, in[3]));
  };
  RngStream rng(7, 0);
  const std::vector<Tensor> in{random_tensor(rng, 6, 3), random_tensor(rng, 6, 3),
                               random_tensor(rng, 6, 4), random_tensor(rng, 6, 4)};
  EXPECT_LE(grad_check(f, in), 1e-4);
  Tape tape;
  const Var a = tape.constant(Tensor(6, 3));
  const std::size_t empty[] = {0, 6}, short_q[] = {2, 2};
  EXPECT_THROW(block_attention(a, a, a, empty, kb, 1.0), ShapeError);
  EXPECT_THROW(block_attention(a, a, a, short_q, short_q, 1.0), ShapeError);
}

TEST(GradCheck, ZeroFunction) {
  const ScalarFn f = [](Tape&, std::span<const Var> in) { return scale(sum(in[0]), 0.0); };
  const auto report = grad_check_report(f, {Tensor(2, 2, 1.0)});
  EXPECT_EQ(report.max_absolute_error, 0.0);
  EXPECT_EQ(report.max_relative_error, 0.0);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  ParameterSet params;
  params.add("w", Tensor::from_rows({{1.0, -2.0}}));
  const ParameterSet before = params;
  auto state = OptimizerState::for_set(params);
  adam_step(params, {Tensor(1, 2, 0.0)}, state);
  EXPECT_EQ(params, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterSet params;
  params.add("w", Tensor::from_rows({{1.0, -2.0, 0.5}}));
  auto state = OptimizerState::for_set(params, {.lr = 0.01});
  adam_step(params, {Tensor::from_rows({{0.3, -5.0, 1e-3}})}, state);
  // m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε).
  EXPECT_NEAR(params.value(0)[0], 1.0 - 0.01 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(params.value(0)[1], -2.0 + 0.01, 1e-9);
  EXPECT_NEAR(params.value(0)[2], 0.5 - 0.01, 1e-7);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, DeterministicAcrossRuns) {
  auto run = [] {
    ParameterSet params;
    RngStream rng(99, 0);
    params.add("w", random_tensor(rng, 3, 3));
    auto state = OptimizerState::for_set(params);
    for (int i = 0; i < 20; ++i) {
      Tape tape;
      Var w = tape.param(params, 0);
      adam_step(params, tape.backward(sum(tanh(matmul(w, w)))).for_set(params), state);
    }
    return params;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, RejectsShapeMismatch) {
  ParameterSet params;
  params.add("w", Tensor(2, 2));
  auto state = OptimizerState::for_set(params);
  EXPECT_THROW(adam_step(params, {Tensor(1, 2)}, state), ShapeError);
}

TEST(Rng, SameSeedAndStreamRepeat) {
  RngStream a(1234, 5), b(1234, 5);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, StreamsDifferEarly) {
  RngStream a(42, 0), b(42, 1);
  bool differ = false;
  for (int i = 0; i < 4; ++i) differ = differ || a.uniform() != b.uniform();
  EXPECT_TRUE(differ);
}

TEST(Rng, UniformRangeAndNormalMoments) {
  RngStream rng(2024, 0);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
  const auto z = rng.normals(100000);
  double m = 0.0;
  for (double x : z) m += x;
  m /= static_cast<double>(z.size());
  double var = 0.0;
  for (double x : z) var += (x - m) * (x - m);
  var /= static_cast<double>(z.size() - 1);
  EXPECT_NEAR(m, 0.0, 0.02);
  EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(Rng, PermutationIsBijection) {
  RngStream rng(3, 3);
  auto p = rng.permutation(257);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], i);
}

}  // namespace
}  // namespace mrb::ad
