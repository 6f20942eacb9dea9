#include <cmath>
#include <vector>

#include "atr/nn.hpp"
#include "doctest.h"

using namespace atr::nn;
using atr::Rng;

namespace {

// Two-layer net with hand-set weights used by the exact-value cases.
ParamVector tiny_params() {
  MlpSpec spec{{2, 2, 1}};
  ParamVector p = ParamVector::zeros(mlp_layout(spec));
  auto w0 = p.mat("l0.W");
  w0(0, 0) = 1.0;
  w0(0, 1) = 2.0;
  w0(1, 0) = -1.0;
  w0(1, 1) = 0.5;
  auto b0 = p.mat("l0.b");
  b0(0, 0) = 0.1;
  b0(1, 0) = -0.2;
  auto w1 = p.mat("l1.W");
  w1(0, 0) = 1.5;
  w1(0, 1) = -1.0;
  p.mat("l1.b")(0, 0) = 0.25;
  return p;
}

}  // namespace

TEST_CASE("layout sizes and offsets") {
  MlpSpec spec{{36, 64, 64, 12}};
  ParamLayout l = mlp_layout(spec);
  CHECK(l.total() == 36 * 64 + 64 + 64 * 64 + 64 + 64 * 12 + 12);
  CHECK(l.at("l0.W").rows == 64);
  CHECK(l.at("l0.W").cols == 36);
  CHECK(l.at("l2.b").rows == 12);
  CHECK(l.has("l1.W"));
  CHECK_FALSE(l.has("l3.W"));
  ParamVector p = ParamVector::zeros(l);
  CHECK_THROWS_AS(p.mat("nope"), UnknownParam);
}

TEST_CASE("forward pass matches hand arithmetic") {
  MlpSpec spec{{2, 2, 1}};
  ParamVector p = tiny_params();

  Mat x(2, 2);
  x.col(0) << 1.0, 1.0;
  x.col(1) << 0.0, -1.0;
  const Mat y = mlp_forward(p, spec, x);
  REQUIRE(y.rows() == 1);
  REQUIRE(y.cols() == 2);
  // col 0: relu(3.1, -0.7) = (3.1, 0) -> 1.5*3.1 + 0.25 = 4.9
  CHECK(y(0, 0) == doctest::Approx(4.9).epsilon(1e-12));
  // col 1: relu(-1.9, -0.7) = (0, 0) -> 0.25
  CHECK(y(0, 1) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("initialization is seed-deterministic and bias-free") {
  MlpSpec spec{{8, 16, 4}};
  ParamVector a = ParamVector::zeros(mlp_layout(spec));
  ParamVector b = ParamVector::zeros(mlp_layout(spec));
  Rng ra(77), rb(77);
  init_params(a, ra);
  init_params(b, rb);
  CHECK(a.values == b.values);
  CHECK(a.mat("l0.b").isZero());
  CHECK(a.mat("l1.b").isZero());
  CHECK(a.mat("l0.W").cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("tape reproduces the plain forward pass") {
  MlpSpec spec{{2, 2, 1}};
  ParamVector p = tiny_params();
  Mat x(2, 1);
  x << 1.0, 1.0;
  Tape t(p);
  const auto out = tape_mlp(t, spec, t.input(x));
  CHECK(t.value(out)(0, 0) == doctest::Approx(4.9).epsilon(1e-12));
}

TEST_CASE("tape elementwise ops match hand values") {
  ParamVector p = ParamVector::zeros(ParamLayout{});
  Tape t(p);
  Mat x(2, 1);
  x << -1.0, 2.0;
  const auto xi = t.input(x);
  CHECK(t.value(t.relu(xi))(0, 0) == 0.0);
  CHECK(t.value(t.relu(xi))(1, 0) == 2.0);
  CHECK(t.value(t.sigmoid(xi))(0, 0) ==
        doctest::Approx(1.0 / (1.0 + std::exp(1.0))));
  CHECK(t.value(t.scale(xi, -3.0))(1, 0) == -6.0);
  const auto two = t.input(Mat::Constant(2, 1, 2.0));
  CHECK(t.value(t.add(xi, two))(0, 0) == 1.0);
  const auto cat = t.concat_rows({xi, two});
  CHECK(t.value(cat).rows() == 4);
  CHECK(t.value(t.slice_rows(cat, 2, 2))(0, 0) == 2.0);
}

TEST_CASE("mean squared error over columns") {
  ParamVector p = ParamVector::zeros(ParamLayout{});
  Tape t(p);
  Mat pred(2, 2);
  pred.col(0) << 1.0, 2.0;
  pred.col(1) << 0.0, 0.0;
  Mat target = Mat::Zero(2, 2);
  target(0, 1) = 3.0;
  // col errors: (1^2 + 2^2) = 5 and 3^2 = 9 -> mean 7
  const auto loss = t.mean_squared_error(t.input(pred), target);
  CHECK(t.scalar(loss) == doctest::Approx(7.0));
}

TEST_CASE("gaussian log-likelihood matches the closed form") {
  Vec mean = Vec::Zero(3), log_std = Vec::Zero(3), a = Vec::Zero(3);
  const double unit = -0.5 * std::log(2.0 * M_PI);
  CHECK(gaussian_loglik(mean, log_std, a) == doctest::Approx(3.0 * unit));
  a << 1.0, 0.0, 0.0;
  CHECK(gaussian_loglik(mean, log_std, a) ==
        doctest::Approx(3.0 * unit - 0.5));
  // The log-std is clamped below at -5.
  log_std.setConstant(-20.0);
  a.setZero();
  CHECK(gaussian_loglik(mean, log_std, a) ==
        doctest::Approx(3.0 * (unit + 5.0)));
}

TEST_CASE("tape Gaussian NLL equals the negative mean log-likelihood") {
  ParamVector p = ParamVector::zeros(ParamLayout{});
  Tape t(p);
  Mat mean(2, 2), log_std(2, 2), actions(2, 2);
  mean << 0.1, -0.3, 0.2, 0.0;
  log_std << -1.0, 0.5, 0.0, -2.0;
  actions << 0.0, 0.1, 0.5, -0.2;
  const auto nll =
      t.gaussian_nll(t.input(mean), t.input(log_std), actions);
  double expect = 0.0;
  for (int b = 0; b < 2; ++b) {
    expect -= gaussian_loglik(mean.col(b), log_std.col(b), actions.col(b));
  }
  expect /= 2.0;
  CHECK(t.scalar(nll) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("analytic gradients match central differences") {
  MlpSpec spec{{3, 8, 2}};
  ParamVector p = ParamVector::zeros(mlp_layout(spec));
  Rng rng(5);
  init_params(p, rng);
  Mat x(3, 4), target(2, 4);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  for (int i = 0; i < target.size(); ++i) target.data()[i] = rng.normal();

  const LossFn f = [&](const ParamVector& q) {
    Tape t(q);
    const auto out = tape_mlp(t, spec, t.input(x));
    const auto loss = t.mean_squared_error(out, target);
    return LossEval{t.scalar(loss), t.relu_signature()};
  };

  Tape t(p);
  const auto out = tape_mlp(t, spec, t.input(x));
  const auto loss = t.mean_squared_error(out, target);
  const Vec g = t.grad(loss);

  const FdReport rep = finite_diff_check(p, f, g);
  CHECK(rep.n_checked > 0);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("gradients flow through sigmoid heads and NLL heads") {
  MlpSpec spec{{4, 6, 4}};
  ParamVector p = ParamVector::zeros(mlp_layout(spec));
  Rng rng(9);
  init_params(p, rng);
  Mat x(4, 3), actions(2, 3);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  for (int i = 0; i < actions.size(); ++i) actions.data()[i] = rng.normal();

  const LossFn f = [&](const ParamVector& q) {
    Tape t(q);
    const auto out = tape_mlp(t, spec, t.input(x));
    const auto mean = t.slice_rows(out, 0, 2);
    const auto log_std = t.slice_rows(out, 2, 2);
    const auto nll = t.gaussian_nll(mean, log_std, actions);
    return LossEval{t.scalar(nll), t.relu_signature()};
  };

  Tape t(p);
  const auto out = tape_mlp(t, spec, t.input(x));
  const auto nll = t.gaussian_nll(t.slice_rows(out, 0, 2),
                                  t.slice_rows(out, 2, 2), actions);
  const Vec g = t.grad(nll);
  const FdReport rep = finite_diff_check(p, f, g);
  CHECK(rep.n_checked > 0);
  CHECK(rep.max_rel_err < 1e-4);

  // Sigmoid + MSE head.
  const LossFn fs = [&](const ParamVector& q) {
    Tape t2(q);
    const auto o = tape_mlp(t2, spec, t2.input(x));
    const auto s = t2.sigmoid(t2.slice_rows(o, 0, 1));
    const auto l = t2.mean_squared_error(s, Mat::Ones(1, 3));
    return LossEval{t2.scalar(l), t2.relu_signature()};
  };
  Tape t3(p);
  const auto o = tape_mlp(t3, spec, t3.input(x));
  const auto s = t3.sigmoid(t3.slice_rows(o, 0, 1));
  const auto l = t3.mean_squared_error(s, Mat::Ones(1, 3));
  const Vec gs = t3.grad(l);
  const FdReport rs = finite_diff_check(p, fs, gs);
  CHECK(rs.max_rel_err < 1e-4);
}

TEST_CASE("non-finite values are reported with the offending op") {
  MlpSpec spec{{2, 2, 1}};
  ParamVector p = tiny_params();
  p.mat("l0.W")(0, 0) = std::numeric_limits<double>::infinity();
  Mat x = Mat::Ones(2, 1);
  Tape t(p);
  CHECK_THROWS_AS((void)tape_mlp(t, spec, t.input(x)), NonFiniteValue);
}

TEST_CASE("first Adam step equals the bias-corrected closed form") {
  ParamLayout l;
  l.add("w", 3, 1);
  ParamVector p = ParamVector::zeros(l);
  p.values << 1.0, -2.0, 0.5;
  AdamState s = make_adam(3, 0.01);
  Vec g(3);
  g << 0.3, -0.7, 0.0;
  const Vec before = p.values;
  adam_step(p, s, g);
  for (int i = 0; i < 3; ++i) {
    const double expect =
        before[i] - 0.01 * g[i] / (std::abs(g[i]) + 1e-8);
    CHECK(p.values[i] == doctest::Approx(expect).epsilon(1e-9));
  }
  CHECK(s.t == 1);
}

TEST_CASE("Adam converges on a quadratic") {
  ParamLayout l;
  l.add("w", 2, 1);
  ParamVector p = ParamVector::zeros(l);
  p.values << 4.0, -3.0;
  AdamState s = make_adam(2, 0.05);
  Vec target(2);
  target << 1.0, 2.0;
  for (int it = 0; it < 2000; ++it) {
    const Vec g = p.values - target;
    adam_step(p, s, g);
  }
  CHECK((p.values - target).norm() < 1e-3);
}
