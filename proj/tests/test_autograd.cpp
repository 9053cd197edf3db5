#include <cmath>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "dsre/autograd.hpp"
#include "dsre/gradcheck.hpp"
#include "dsre/random.hpp"

namespace ag = dsre::ag;
using dsre::Tensor;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, dsre::Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(r, c);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Contracts an arbitrary output with a fixed random weight so every output
// coordinate contributes to the scalar under test.
ag::Var contract(ag::Var y, const Tensor& w) {
  ag::Graph& g = *y.graph();
  return ag::sum(ag::mul(y, g.constant(w)));
}

double check_op(std::vector<ag::Parameter*> params, const std::function<ag::Var(ag::Graph&)>& f, double h = 1e-6) {
  return dsre::finite_diff_check(f, params, h).max_rel_error;
}

constexpr int kSeeds = 100;
constexpr double kTol = 1e-6;

}  // namespace

TEST(Forward, MatmulIdentity) {
  ag::Graph g;
  ag::Var i = g.constant(Tensor(2, 2, {1, 0, 0, 1}));
  ag::Var a = g.constant(Tensor(2, 2, {1, 2, 3, 4}));
  EXPECT_EQ(ag::matmul(i, a).value(), Tensor(2, 2, {1, 2, 3, 4}));
}

TEST(Forward, TanhOfZeroIsZero) {
  ag::Graph g;
  EXPECT_EQ(ag::tanh(g.constant(Tensor(3, 4))).value(), Tensor(3, 4));
}

TEST(Forward, SoftmaxOfEqualLogitsIsUniform) {
  ag::Graph g;
  const Tensor p = ag::softmax(g.constant(Tensor::row_vector({0.0, 0.0}))).value();
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Forward, ShapeMismatchNamesTheOp) {
  ag::Graph g;
  ag::Var a = g.constant(Tensor(2, 3));
  ag::Var b = g.constant(Tensor(2, 3));
  try {
    ag::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ag::ShapeError& e) {
    EXPECT_EQ(e.op(), "matmul");
  }
  EXPECT_THROW(ag::add(a, g.constant(Tensor(3, 2))), ag::ShapeError);
}

TEST(Forward, NonFiniteIntermediateIsRejected) {
  ag::Graph g;
  EXPECT_THROW(ag::log(g.constant(Tensor::row_vector({1.0, 0.0}))), ag::NonFiniteError);
  EXPECT_THROW(ag::scale(g.constant(Tensor::scalar(1e300)), 1e300), ag::NonFiniteError);
}

TEST(Backward, Square) {
  ag::Graph g;
  ag::Var x = g.input(Tensor::scalar(3.0));
  g.backward(ag::mul(x, x));
  EXPECT_DOUBLE_EQ(g.grad(x).item(), 6.0);
}

TEST(Backward, ProductRule) {
  ag::Graph g;
  ag::Var x = g.input(Tensor::scalar(2.0));
  ag::Var y = g.input(Tensor::scalar(5.0));
  g.backward(ag::mul(x, y));
  EXPECT_DOUBLE_EQ(g.grad(x).item(), 5.0);
  EXPECT_DOUBLE_EQ(g.grad(y).item(), 2.0);
}

TEST(Backward, MisuseIsRejected) {
  ag::Graph g;
  ag::Var x = g.input(Tensor::scalar(2.0));
  ag::Var y = ag::mul(x, x);
  EXPECT_THROW(g.backward(ag::Var{}), ag::GraphError);
  EXPECT_THROW(g.backward(g.input(Tensor(1, 2))), ag::ShapeError);
  g.backward(y);
  EXPECT_THROW(g.backward(y), ag::GraphError);
  ag::Graph other;
  EXPECT_THROW(ag::add(x, other.constant(Tensor::scalar(1.0))), ag::GraphError);
}

TEST(Backward, ParameterGradientsAccumulateAcrossGraphs) {
  ag::Parameter p("p", Tensor::scalar(3.0));
  for (int k = 0; k < 2; ++k) {
    ag::Graph g;
    ag::Var v = g.param(p);
    g.backward(ag::mul(v, v));
  }
  EXPECT_DOUBLE_EQ(p.grad.item(), 12.0);
  p.zero_grad();
  EXPECT_DOUBLE_EQ(p.grad.item(), 0.0);
}

TEST(Backward, FrozenGraphLeavesParametersAlone) {
  ag::Parameter p("p", Tensor::scalar(3.0));
  ag::Graph g(ag::Mode::Frozen);
  ag::Var v = g.param(p);
  ag::Var x = g.input(Tensor::scalar(2.0));
  g.backward(ag::mul(v, x));
  EXPECT_TRUE(p.grad.empty() || p.grad.item() == 0.0);
  EXPECT_DOUBLE_EQ(g.grad(x).item(), 3.0);
}

TEST(Backward, SumOfScalarsIsSumOfBackwards) {
  dsre::Rng rng(7);
  ag::Parameter w("w", random_tensor(3, 4, rng));
  const Tensor c1 = random_tensor(3, 4, rng);
  const Tensor c2 = random_tensor(3, 4, rng);
  auto f1 = [&](ag::Graph& g) { return contract(ag::tanh(g.param(w)), c1); };
  auto f2 = [&](ag::Graph& g) { return contract(ag::mul(g.param(w), g.param(w)), c2); };

  Tensor separate(3, 4);
  for (const auto& f : {std::function<ag::Var(ag::Graph&)>(f1), std::function<ag::Var(ag::Graph&)>(f2)}) {
    w.zero_grad();
    ag::Graph g;
    g.backward(f(g));
    dsre::axpy(1.0, w.grad, separate);
  }
  w.zero_grad();
  ag::Graph g;
  const std::vector<ag::Var> parts{f1(g), f2(g)};
  g.backward(ag::sum_all(parts));
  EXPECT_LT(dsre::max_abs_diff(w.grad, separate), 1e-14);
}

TEST(Backward, TapOnFrozenInputMatchesParameterGradient) {
  dsre::Rng rng(11);
  ag::Parameter x("x", random_tensor(5, 3, rng));
  ag::Parameter w("w", random_tensor(2, 3, rng));
  ag::Parameter b("b", random_tensor(1, 2, rng));
  auto build = [&](ag::Graph& g, ag::Var xv) {
    ag::Var y = ag::log_softmax(ag::linear(ag::tanh(xv), g.param(w), g.param(b)));
    return ag::sum(y);
  };
  ag::Graph train;
  train.backward(build(train, train.param(x)));
  ag::Graph frozen(ag::Mode::Frozen);
  ag::Var tap = frozen.input(x.value);
  frozen.backward(build(frozen, tap));
  EXPECT_LT(dsre::max_abs_diff(frozen.grad(tap), x.grad), 1e-15);
}

TEST(GradCheck, LinearMapIsExact) {
  dsre::Rng rng(3);
  ag::Parameter x("x", random_tensor(4, 3, rng));
  ag::Parameter w("w", random_tensor(5, 3, rng));
  ag::Parameter b("b", random_tensor(1, 5, rng));
  const Tensor c = random_tensor(4, 5, rng);
  for (double h : {1e-3, 1e-4}) {
    const double err =
        check_op({&x, &w, &b}, [&](ag::Graph& g) { return contract(ag::linear(g.param(x), g.param(w), g.param(b)), c); },
                 h);
    EXPECT_LT(err, 1e-9) << "h=" << h;
  }
}

TEST(GradCheck, SoftmaxCrossEntropyToy) {
  dsre::Rng rng(5);
  ag::Parameter w("w", random_tensor(3, 4, rng));
  ag::Parameter b("b", random_tensor(1, 3, rng));
  const Tensor x = random_tensor(1, 4, rng);
  const double err = check_op(
      {&w, &b},
      [&](ag::Graph& g) {
        return ag::scale(ag::pick(ag::log_softmax(ag::linear(g.constant(x), g.param(w), g.param(b))), 0, 1), -1.0);
      },
      1e-5);
  EXPECT_LT(err, 1e-4);
}

TEST(GradCheck, ThreeLayerNetwork) {
  dsre::Rng rng(17);
  ag::Parameter w1("w1", random_tensor(6, 4, rng)), b1("b1", random_tensor(1, 6, rng));
  ag::Parameter w2("w2", random_tensor(5, 6, rng)), b2("b2", random_tensor(1, 5, rng));
  ag::Parameter w3("w3", random_tensor(3, 5, rng)), b3("b3", random_tensor(1, 3, rng));
  const Tensor x = random_tensor(7, 4, rng);
  const double err = dsre::finite_diff_check(
                         [&](ag::Graph& g) {
                           ag::Var h1 = ag::tanh(ag::linear(g.constant(x), g.param(w1), g.param(b1)));
                           ag::Var h2 = ag::tanh(ag::linear(h1, g.param(w2), g.param(b2)));
                           ag::Var lp = ag::log_softmax(ag::linear(h2, g.param(w3), g.param(b3)));
                           return ag::scale(ag::sum(lp), -1.0 / 7.0);
                         },
                         std::vector<ag::Parameter*>{&w1, &b1, &w2, &b2, &w3, &b3}, 1e-5)
                         .max_rel_error;
  EXPECT_LT(err, 1e-4);
}

TEST(GradCheck, MaxPoolTieIsSkippedAndReported) {
  ag::Parameter c("c", Tensor(4, 1, {0.5, 0.5, 0.1, 0.2}));
  ag::PoolSegments seg;
  seg.begin = {0, 2, 4};
  seg.end = {2, 4, 4};
  const dsre::GradCheckReport r =
      dsre::finite_diff_check([&](ag::Graph& g) { return ag::sum(ag::piecewise_max_pool(g.param(c), seg)); },
                              std::vector<ag::Parameter*>{&c}, 1e-5);
  ASSERT_EQ(r.skipped.size(), 2u);
  EXPECT_EQ(r.skipped[0].index, 0u);
  EXPECT_EQ(r.skipped[1].index, 1u);
  EXPECT_LT(r.max_rel_error, 1e-9);
}

// ---- every op against central differences over many seeds ----------------------

class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, UnaryAndBinaryOps) {
  dsre::Rng rng(static_cast<std::uint64_t>(GetParam()));
  const std::size_t r = 1 + rng.index(4), c = 1 + rng.index(5);
  ag::Parameter a("a", random_tensor(r, c, rng));
  ag::Parameter b("b", random_tensor(r, c, rng));
  ag::Parameter pos("pos", random_tensor(r, c, rng, 0.2, 2.0));
  const Tensor w = random_tensor(r, c, rng);

  EXPECT_LT(check_op({&a, &b}, [&](ag::Graph& g) { return contract(ag::add(g.param(a), g.param(b)), w); }), kTol);
  EXPECT_LT(check_op({&a, &b}, [&](ag::Graph& g) { return contract(ag::mul(g.param(a), g.param(b)), w); }), kTol);
  EXPECT_LT(check_op({&a}, [&](ag::Graph& g) { return contract(ag::scale(g.param(a), -2.5), w); }), kTol);
  EXPECT_LT(check_op({&a}, [&](ag::Graph& g) { return contract(ag::add_scalar(g.param(a), 0.7), w); }), kTol);
  EXPECT_LT(check_op({&a}, [&](ag::Graph& g) { return contract(ag::tanh(g.param(a)), w); }), kTol);
  EXPECT_LT(check_op({&pos}, [&](ag::Graph& g) { return contract(ag::log(g.param(pos)), w); }), kTol);
  EXPECT_LT(check_op({&a}, [&](ag::Graph& g) { return contract(ag::softmax(g.param(a)), w); }), kTol);
  EXPECT_LT(check_op({&a}, [&](ag::Graph& g) { return contract(ag::log_softmax(g.param(a)), w); }), kTol);
  EXPECT_LT(check_op({&a}, [&](ag::Graph& g) { return ag::l2_norm(g.param(a)); }), kTol);
  EXPECT_LT(check_op({&a}, [&](ag::Graph& g) { return ag::sum(ag::mul(g.param(a), g.param(a))); }), kTol);
  EXPECT_LT(check_op({&a}, [&](ag::Graph& g) { return ag::pick(ag::tanh(g.param(a)), r - 1, c - 1); }), kTol);
}

TEST_P(OpGradient, ShapeOps) {
  dsre::Rng rng(1000 + static_cast<std::uint64_t>(GetParam()));
  const std::size_t n = 2 + rng.index(4), k = 1 + rng.index(4), m = 1 + rng.index(4);
  ag::Parameter a("a", random_tensor(n, k, rng));
  ag::Parameter b("b", random_tensor(k, m, rng));
  ag::Parameter bt("bt", random_tensor(m, k, rng));
  ag::Parameter bias("bias", random_tensor(1, m, rng));
  ag::Parameter table("table", random_tensor(6, k, rng));
  const Tensor w_nm = random_tensor(n, m, rng);

  EXPECT_LT(check_op({&a, &b}, [&](ag::Graph& g) { return contract(ag::matmul(g.param(a), g.param(b)), w_nm); }),
            kTol);
  EXPECT_LT(check_op({&a, &bt}, [&](ag::Graph& g) { return contract(ag::matmul_nt(g.param(a), g.param(bt)), w_nm); }),
            kTol);
  EXPECT_LT(check_op({&a, &bt, &bias},
                     [&](ag::Graph& g) { return contract(ag::linear(g.param(a), g.param(bt), g.param(bias)), w_nm); }),
            kTol);

  std::vector<int> ids(n);
  for (int& id : ids) id = static_cast<int>(rng.index(6));
  const Tensor w_nk = random_tensor(n, k, rng);
  EXPECT_LT(check_op({&table}, [&](ag::Graph& g) { return contract(ag::gather_rows(g.param(table), ids), w_nk); }),
            kTol);

  const Tensor w_cat_c = random_tensor(n, k + k, rng);
  EXPECT_LT(check_op({&a},
                     [&](ag::Graph& g) {
                       const std::vector<ag::Var> parts{g.param(a), ag::tanh(g.param(a))};
                       return contract(ag::concat_cols(parts), w_cat_c);
                     }),
            kTol);
  const Tensor w_cat_r = random_tensor(2 * n, k, rng);
  EXPECT_LT(check_op({&a},
                     [&](ag::Graph& g) {
                       const std::vector<ag::Var> parts{ag::tanh(g.param(a)), g.param(a)};
                       return contract(ag::concat_rows(parts), w_cat_r);
                     }),
            kTol);
  const std::size_t width = 1 + 2 * rng.index(3);
  const Tensor w_unf = random_tensor(n, width * k, rng);
  EXPECT_LT(check_op({&a}, [&](ag::Graph& g) { return contract(ag::unfold(g.param(a), width), w_unf); }, 1e-3),
            kTol);
}

TEST_P(OpGradient, DistributionOps) {
  dsre::Rng rng(2000 + static_cast<std::uint64_t>(GetParam()));
  const std::size_t n = 2 + rng.index(5);
  ag::Parameter logits_p("lp", random_tensor(1, n, rng, -2.0, 2.0));
  ag::Parameter logits_q("lq", random_tensor(1, n, rng, -2.0, 2.0));
  EXPECT_LT(check_op({&logits_p, &logits_q},
                     [&](ag::Graph& g) {
                       return ag::kl_div(ag::softmax(g.param(logits_p)), ag::log_softmax(g.param(logits_q)));
                     }),
            kTol);
}

TEST_P(OpGradient, PiecewiseMaxPoolAwayFromTies) {
  dsre::Rng rng(3000 + static_cast<std::uint64_t>(GetParam()));
  const std::size_t rows = 3 + rng.index(6), k = 1 + rng.index(4);
  ag::Parameter c("c", random_tensor(rows, k, rng));
  const std::size_t h = rng.index(rows), t = h + rng.index(rows - h);
  ag::PoolSegments seg;
  seg.begin = {0, h + 1, t + 1};
  seg.end = {h + 1, t + 1, rows};
  const Tensor w = random_tensor(1, 3 * k, rng);
  const dsre::GradCheckReport rep = dsre::finite_diff_check(
      [&](ag::Graph& g) { return contract(ag::tanh(ag::piecewise_max_pool(g.param(c), seg)), w); },
      std::vector<ag::Parameter*>{&c}, 1e-6);
  EXPECT_TRUE(rep.skipped.empty());
  EXPECT_LT(rep.max_rel_error, kTol);
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradient, ::testing::Range(0, kSeeds));
