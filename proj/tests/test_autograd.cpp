#include <cmath>
#include <memory>

#include "cvpm/autograd.hpp"
#include "cvpm/rng.hpp"
#include "doctest.h"

using namespace cvpm;

namespace {

Mat random_mat(int r, int c, Rng& rng, double s = 1.0) {
  Mat m(r, c);
  for (double& v : m.data) v = s * rng.normal();
  return m;
}

// Runs gradient_check over a loss built fresh on every call; params are the
// leaves the builder reads.
GradCheckReport check_graph(std::vector<ParamRef> params,
                            const std::function<Tape::Var(Tape&)>& build,
                            double tol = 1e-4) {
  auto loss_fn = [&]() {
    Tape t;
    return t.scalar_value(build(t));
  };
  auto grad_fn = [&]() {
    Tape t;
    t.backward(build(t));
    return t.grads();
  };
  return gradient_check(loss_fn, grad_fn, params, 1e-5, tol);
}

}  // namespace

TEST_CASE("gradient check validates sum of squares exactly") {
  Mat p(1, 2);
  p.at(0, 0) = 1.0;
  p.at(0, 1) = 2.0;
  ParamRef ref{"p", &p};
  GradCheckReport rep = check_graph({ref}, [&](Tape& t) {
    return t.sum_sq(t.param(ref));
  }, 1e-6);
  CHECK(rep.passed);
  CHECK(rep.max_rel_err < 1e-6);
  CHECK(rep.entries == 2);
}

TEST_CASE("gradient check accepts a constant loss with zero gradients") {
  Mat p(1, 3, 0.5);
  ParamRef ref{"p", &p};
  GradCheckReport rep = check_graph({ref}, [&](Tape& t) {
    t.param(ref);  // registered but unused by the loss
    return t.constant(7.0);
  });
  CHECK(rep.passed);
  CHECK(rep.max_rel_err == 0.0);
}

TEST_CASE("gradient check flags a wrong analytic gradient") {
  Mat p(1, 2);
  p.at(0, 0) = 1.0;
  p.at(0, 1) = 2.0;
  ParamRef ref{"p", &p};
  auto loss_fn = [&]() { return p.at(0, 0) * p.at(0, 0) + p.at(0, 1); };
  auto grad_fn = [&]() {
    GradientBundle g;
    Mat gm(1, 2);
    gm.at(0, 0) = 2.0 * p.at(0, 0);
    gm.at(0, 1) = 3.0;  // truth is 1
    g["p"] = gm;
    return g;
  };
  GradCheckReport rep = gradient_check(loss_fn, grad_fn, {ref});
  CHECK_FALSE(rep.passed);
  CHECK(rep.worst_param == "p");
  CHECK(rep.worst_index == 1);
}

TEST_CASE("every tape op passes a finite-difference check") {
  Rng rng(3);
  Mat w = random_mat(3, 2, rng);
  Mat b = random_mat(1, 3, rng);
  Mat x = random_mat(1, 2, rng);
  ParamRef rw{"w", &w}, rb{"b", &b}, rx{"x", &x};
  auto c = std::make_shared<Mat>(random_mat(4, 3, rng));

  SUBCASE("affine + relu + sum_sq") {
    // Nudge pre-activations away from the kink where fd is one-sided.
    GradCheckReport rep = check_graph({rw, rb, rx}, [&](Tape& t) {
      return t.sum_sq(t.relu(t.affine(t.param(rx), t.param(rw), t.param(rb))));
    });
    CHECK(rep.passed);
  }
  SUBCASE("softmax + dot_const") {
    GradCheckReport rep = check_graph({rx}, [&](Tape& t) {
      return t.dot_const(t.softmax(t.param(rx)), {0.3, -1.1}, 2.0);
    });
    CHECK(rep.passed);
  }
  SUBCASE("log_sum_exp and pick") {
    GradCheckReport rep = check_graph({rb}, [&](Tape& t) {
      return t.sub(t.log_sum_exp(t.param(rb)), t.pick(t.param(rb), 1));
    });
    CHECK(rep.passed);
  }
  SUBCASE("const_matvec both directions") {
    GradCheckReport rep = check_graph({rb}, [&](Tape& t) {
      Tape::Var up = t.const_matvec_t(c, t.const_matvec(c, t.param(rb), 0.7));
      return t.sum_sq(up);
    });
    CHECK(rep.passed);
  }
  SUBCASE("flat_matvec emits a reshaped product") {
    Mat flat = random_mat(1, 6, rng);
    ParamRef rf{"flat", &flat};
    GradCheckReport rep = check_graph({rf}, [&](Tape& t) {
      return t.sum_sq(t.flat_matvec(t.param(rf), {1.0, -2.0}, 3, 0.5));
    });
    CHECK(rep.passed);
  }
  SUBCASE("mul, mul_const, axpb, concat") {
    GradCheckReport rep = check_graph({rw, rx}, [&](Tape& t) {
      Tape::Var a = t.mul(t.param(rx), t.mul_const(t.param(rx), {2.0, -1.0}));
      Tape::Var joined = t.concat(a, t.axpb(t.param(rx), 3.0, -0.5));
      return t.sum_sq(joined);
    });
    CHECK(rep.passed);
  }
  SUBCASE("exp_clamp inside the window") {
    GradCheckReport rep = check_graph({rx}, [&](Tape& t) {
      return t.sum_sq(t.exp_clamp(t.param(rx), -10.0, 10.0));
    });
    CHECK(rep.passed);
  }
  SUBCASE("sq_err_rows") {
    auto rows = std::make_shared<Mat>(random_mat(5, 3, rng));
    GradCheckReport rep = check_graph({rb}, [&](Tape& t) {
      return t.sq_err_rows(t.param(rb), rows, {1.0, 0.0, -1.0, 2.0, 0.5});
    });
    CHECK(rep.passed);
  }
}

TEST_CASE("softmax node reproduces the closed-form jacobian") {
  Mat x(1, 3);
  x.at(0, 0) = 0.2;
  x.at(0, 1) = -1.0;
  x.at(0, 2) = 0.7;
  ParamRef rx{"x", &x};
  // loss = softmax(x) . e_k has gradient p_k (e_k - p).
  for (int k = 0; k < 3; ++k) {
    Tape t;
    Vec ek(3, 0.0);
    ek[size_t(k)] = 1.0;
    Tape::Var p = t.softmax(t.param(rx));
    t.backward(t.dot_const(p, ek));
    Vec pv = t.value(p);
    Mat g = t.grads().at("x");
    for (int j = 0; j < 3; ++j) {
      double want = pv[size_t(k)] * ((j == k ? 1.0 : 0.0) - pv[size_t(j)]);
      CHECK(g.at(0, j) == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("params registered twice share one node") {
  Mat p(1, 2, 1.0);
  ParamRef ref{"p", &p};
  Tape t;
  Tape::Var a = t.param(ref);
  Tape::Var b = t.param(ref);
  CHECK(a.id == b.id);
  // x . x means the gradient doubles through the shared leaf.
  t.backward(t.sum_sq(t.add(a, b)));
  Mat g = t.grads().at("p");
  CHECK(g.at(0, 0) == doctest::Approx(8.0));  // d/dx (2x)^2 = 8x at x=1
}

TEST_CASE("untouched params get zero gradient tensors") {
  Mat a(1, 2, 1.0), b(2, 2, 3.0);
  ParamRef ra{"a", &a}, rb{"b", &b};
  Tape t;
  t.param(ra);
  t.param(rb);
  t.backward(t.sum_sq(t.param(ra)));
  GradientBundle g = t.grads();
  REQUIRE(g.count("b") == 1);
  CHECK(g.at("b").rows == 2);
  CHECK(g.at("b").cols == 2);
  for (double v : g.at("b").data) CHECK(v == 0.0);
}

TEST_CASE("tape misuse is a contract violation") {
  Mat p(1, 1, 2.0);
  ParamRef ref{"p", &p};
  Tape t;
  Tape::Var loss = t.sum_sq(t.param(ref));
  CHECK_THROWS_AS(t.grads(), ContractError);  // before backward
  t.backward(loss);
  CHECK_THROWS_AS(t.backward(loss), ContractError);  // twice
  Tape t2;
  CHECK_THROWS_AS(t2.backward(t2.constant(Vec{1.0, 2.0})), ShapeError);
}

TEST_CASE("adam takes the bias-corrected first step") {
  Mat p(1, 1, 0.0);
  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam opt({ParamRef{"p", &p}}, cfg);
  GradientBundle g;
  g["p"] = Mat(1, 1, 1.0);
  opt.step(g);
  // m_hat = 1, v_hat = 1 after correction; step = lr / (1 + eps).
  CHECK(p.at(0, 0) == doctest::Approx(-0.1).epsilon(1e-7));
  CHECK(opt.steps() == 1);
}

TEST_CASE("decoupled weight decay applies even when the gradient is missing") {
  Mat p(1, 1, 1.0);
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  Adam opt({ParamRef{"p", &p}}, cfg);
  opt.step(GradientBundle{});  // no entry for "p"
  CHECK(p.at(0, 0) == doctest::Approx(0.95).epsilon(1e-12));
}

TEST_CASE("adam rejects a gradient of the wrong shape") {
  Mat p(1, 2, 0.0);
  Adam opt({ParamRef{"p", &p}}, AdamConfig{});
  GradientBundle g;
  g["p"] = Mat(2, 2, 1.0);
  CHECK_THROWS_AS(opt.step(g), ShapeError);
}

TEST_CASE("adam minimizes a convex quadratic") {
  Mat p(1, 2);
  p.at(0, 0) = 3.0;
  p.at(0, 1) = -2.0;
  ParamRef ref{"p", &p};
  AdamConfig cfg;
  cfg.lr = 5e-2;
  Adam opt({ref}, cfg);
  for (int i = 0; i < 400; ++i) {
    Tape t;
    t.backward(t.sum_sq(t.param(ref)));
    opt.step(t.grads());
  }
  CHECK(std::fabs(p.at(0, 0)) < 1e-3);
  CHECK(std::fabs(p.at(0, 1)) < 1e-3);
}
