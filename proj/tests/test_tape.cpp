#include "hypair/tape.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "hypair/core.hpp"

namespace {

using hypair::finite_diff_grad;
using hypair::grad_rel_err;
using hypair::Matrix;
using hypair::Rng;
using hypair::Tape;
using hypair::Var;
using hypair::Vec;

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

double eval_scalar(const std::vector<Matrix>& inputs, const Builder& build) {
  Tape t;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Matrix& m : inputs) vars.push_back(t.input(m));
  return t.scalar(build(t, vars));
}

// Checks the tape adjoint of every input against central finite differences.
void expect_grad_matches(const std::vector<Matrix>& inputs, const Builder& build,
                         double tol = 1e-6, double step = 1e-5) {
  Tape t;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Matrix& m : inputs) vars.push_back(t.input(m));
  Var root = build(t, vars);
  ASSERT_EQ(t.value(root).size(), 1);
  t.backward(root);
  for (size_t k = 0; k < inputs.size(); ++k) {
    const Vec analytic = t.adjoint(vars[k]).data;
    auto f = [&](const Vec& xv) {
      std::vector<Matrix> shifted = inputs;
      shifted[k].data = xv;
      return eval_scalar(shifted, build);
    };
    const Vec fd = finite_diff_grad(f, inputs[k].data, step);
    EXPECT_LT(grad_rel_err(analytic, fd), tol) << "input " << k;
  }
}

Matrix random_matrix(Rng& rng, int rows, int cols, double lo, double hi) {
  Matrix m(rows, cols);
  for (double& x : m.data) x = lo + (hi - lo) * rng.uniform();
  return m;
}

// Reduces a matrix node to a scalar with non-uniform weights so that
// entry-level sign or placement errors cannot cancel.
Var weighted_sum(Tape& t, Var m) {
  const Matrix& v = t.value(m);
  Matrix w(v.rows, v.cols);
  for (int i = 0; i < w.size(); ++i) w.data[i] = 0.3 + 0.1 * i;
  return t.dot(m, t.input(w));
}

TEST(Tape, DotBackwardIsOtherOperand) {
  Tape t;
  Var a = t.input_row({1.0, 2.0});
  Var b = t.input_row({3.0, 4.0});
  Var z = t.dot(a, b);
  EXPECT_DOUBLE_EQ(t.scalar(z), 11.0);
  t.backward(z);
  EXPECT_DOUBLE_EQ(t.adjoint(a).data[0], 3.0);
  EXPECT_DOUBLE_EQ(t.adjoint(a).data[1], 4.0);
  EXPECT_DOUBLE_EQ(t.adjoint(b).data[0], 1.0);
  EXPECT_DOUBLE_EQ(t.adjoint(b).data[1], 2.0);
}

TEST(Tape, TanhDerivative) {
  Tape t;
  Var x = t.input_row({0.5});
  Var y = t.sum(t.tanh_(x));
  t.backward(y);
  const double th = std::tanh(0.5);
  EXPECT_NEAR(t.adjoint(x).data[0], 1.0 - th * th, 1e-12);
}

TEST(Tape, SumBackwardIsOnes) {
  Tape t;
  Var x = t.input(Matrix(3, 2, 0.25));
  Var y = t.sum(x);
  t.backward(y);
  for (double g : t.adjoint(x).data) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Tape, SquaredNormBackwardIsTwoX) {
  Tape t;
  Var x = t.input_row({1.0, -2.0, 3.0});
  Var y = t.dot(x, x);
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.adjoint(x).data[0], 2.0);
  EXPECT_DOUBLE_EQ(t.adjoint(x).data[1], -4.0);
  EXPECT_DOUBLE_EQ(t.adjoint(x).data[2], 6.0);
}

TEST(Tape, FiniteDiffSquaredNorm) {
  auto f = [](const Vec& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return s;
  };
  const Vec g = finite_diff_grad(f, {1.0, 2.0});
  EXPECT_NEAR(g[0], 2.0, 1e-8);
  EXPECT_NEAR(g[1], 4.0, 1e-8);
}

TEST(Tape, FiniteDiffConstantIsZero) {
  auto f = [](const Vec&) { return 7.5; };
  const Vec g = finite_diff_grad(f, {0.3, -0.8, 2.0});
  for (double v : g) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Tape, BackwardRejectsNonScalarRoot) {
  Tape t;
  Var x = t.input(Matrix(2, 2, 1.0));
  EXPECT_THROW(t.backward(x), std::invalid_argument);
}

TEST(Tape, InputRejectsNonFinite) {
  Tape t;
  Matrix bad(1, 2);
  bad.data[1] = std::nan("");
  EXPECT_THROW(t.input(bad), std::invalid_argument);
}

TEST(Tape, CheckedModeRejectsOverflowingNode) {
  Tape t(true);
  Var x = t.input_row({1000.0});
  EXPECT_THROW(t.exp_(x), std::runtime_error);
}

TEST(Tape, AdjointBeforeBackwardThrows) {
  Tape t;
  Var x = t.input_row({1.0});
  EXPECT_THROW(t.adjoint(x), std::logic_error);
}

TEST(Tape, ShapeMismatchThrows) {
  Tape t;
  Var a = t.input(Matrix(2, 2, 1.0));
  Var b = t.input(Matrix(2, 3, 1.0));
  EXPECT_THROW(t.add(a, b), std::invalid_argument);
  EXPECT_THROW(t.dot(a, b), std::invalid_argument);
  EXPECT_THROW(t.matmul(b, b), std::invalid_argument);
}

TEST(Tape, BackwardIsDeterministic) {
  auto run = [](Vec* out) {
    Rng rng(99);
    Tape t;
    Var a = t.input(random_matrix(rng, 4, 3, -1.0, 1.0));
    Var b = t.input(random_matrix(rng, 3, 5, -1.0, 1.0));
    Var z = t.sum(t.tanh_(t.matmul(a, b)));
    t.backward(z);
    *out = t.adjoint(a).data;
    Vec bd = t.adjoint(b).data;
    out->insert(out->end(), bd.begin(), bd.end());
  };
  Vec g1, g2;
  run(&g1);
  run(&g2);
  ASSERT_EQ(g1.size(), g2.size());
  for (size_t i = 0; i < g1.size(); ++i) {
    EXPECT_EQ(g1[i], g2[i]) << "entry " << i;
  }
}

TEST(Tape, GradientIsLinearInRoots) {
  Rng rng(7);
  const Matrix x = random_matrix(rng, 1, 4, -1.0, 1.0);
  const Matrix a = random_matrix(rng, 1, 4, -1.0, 1.0);
  const Matrix b = random_matrix(rng, 1, 4, -1.0, 1.0);

  Tape t;
  Var xv = t.input(x);
  Var joint = t.add(t.dot(xv, t.input(a)), t.dot(xv, t.input(b)));
  t.backward(joint);
  const Vec gj = t.adjoint(xv).data;
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(gj[i], a.data[i] + b.data[i], 1e-15);
}

TEST(Tape, ColMinTiesPickLowestRow) {
  Tape t;
  Matrix m(3, 2);
  m(0, 0) = 2.0; m(0, 1) = 5.0;
  m(1, 0) = 1.0; m(1, 1) = 5.0;
  m(2, 0) = 1.0; m(2, 1) = 7.0;
  Var v = t.col_min(t.input(m));
  EXPECT_DOUBLE_EQ(t.value(v).data[0], 1.0);
  EXPECT_DOUBLE_EQ(t.value(v).data[1], 5.0);
  const std::vector<int>& arg = t.argmin_rows(v);
  EXPECT_EQ(arg[0], 1);  // rows 1 and 2 tie at 1.0
  EXPECT_EQ(arg[1], 0);  // rows 0 and 1 tie at 5.0
}

TEST(Tape, ExpmapZeroRowPassesThrough) {
  Tape t;
  Matrix m(2, 3);
  m(1, 0) = 0.3; m(1, 1) = -0.2; m(1, 2) = 0.1;
  Var x = t.input(m);
  Var y = t.expmap0_rows(x, 1.0);
  for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(t.value(y)(0, j), 0.0);
  Matrix w(2, 3);
  for (int i = 0; i < w.size(); ++i) w.data[i] = 0.3 + 0.1 * i;
  Var z = t.dot(y, t.input(w));
  t.backward(z);
  // Zero rows behave as the identity map, so the adjoint passes through.
  for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(t.adjoint(x)(0, j), w(0, j));
}

TEST(Tape, GradElementwiseOps) {
  Rng rng(11);
  const Matrix a = random_matrix(rng, 3, 4, -1.0, 1.0);
  const Matrix b = random_matrix(rng, 3, 4, 0.5, 1.5);
  expect_grad_matches({a, b}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.add(v[0], v[1]));
  });
  expect_grad_matches({a, b}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.sub(v[0], v[1]));
  });
  expect_grad_matches({a, b}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.mul(v[0], v[1]));
  });
  expect_grad_matches({a, b}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.div(v[0], v[1]));
  });
  expect_grad_matches({a}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.affine(v[0], -1.7, 0.4));
  });
}

TEST(Tape, GradScalarBroadcastOps) {
  Rng rng(12);
  const Matrix a = random_matrix(rng, 2, 3, -1.0, 1.0);
  const Matrix s(1, 1, 0.8);
  expect_grad_matches({s, a}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.smul(v[0], v[1]));
  });
  expect_grad_matches({a, s}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.sdiv(v[0], v[1]));
  });
  expect_grad_matches({s}, [](Tape& t, const std::vector<Var>& v) {
    return t.recip(v[0]);
  });
}

TEST(Tape, GradReductions) {
  Rng rng(13);
  const Matrix a = random_matrix(rng, 3, 4, -1.0, 1.0);
  const Matrix b = random_matrix(rng, 3, 4, -1.0, 1.0);
  expect_grad_matches({a, b}, [](Tape& t, const std::vector<Var>& v) {
    return t.dot(v[0], v[1]);
  });
  expect_grad_matches({a}, [](Tape& t, const std::vector<Var>& v) {
    return t.norm(v[0]);
  });
  expect_grad_matches({a}, [](Tape& t, const std::vector<Var>& v) {
    return t.sum(t.mul(v[0], v[0]));
  });
  expect_grad_matches({a}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.mean_rows(v[0]));
  });
  expect_grad_matches({a}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.sqnorm_rows(v[0]));
  });
}

TEST(Tape, GradMatrixOps) {
  Rng rng(14);
  const Matrix a = random_matrix(rng, 3, 4, -1.0, 1.0);
  const Matrix b = random_matrix(rng, 4, 2, -1.0, 1.0);
  const Matrix r1 = random_matrix(rng, 1, 3, -1.0, 1.0);
  const Matrix r2 = random_matrix(rng, 1, 5, -1.0, 1.0);
  expect_grad_matches({a, b}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.matmul(v[0], v[1]));
  });
  expect_grad_matches({a}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.transpose(v[0]));
  });
  expect_grad_matches({r1, r2}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.outer(v[0], v[1]));
  });
  const Matrix vv = random_matrix(rng, 1, 4, -1.0, 1.0);
  expect_grad_matches({a, vv}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.matvec(v[0], v[1]));
  });
}

TEST(Tape, GradNonlinearities) {
  Rng rng(15);
  const Matrix a = random_matrix(rng, 2, 3, -1.0, 1.0);
  const Matrix inside = random_matrix(rng, 2, 3, -0.9, 0.9);
  const Matrix positive = random_matrix(rng, 2, 3, 0.2, 2.0);
  expect_grad_matches({a}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.tanh_(v[0]));
  });
  expect_grad_matches({inside}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.atanh_(v[0], 1e-5));
  });
  expect_grad_matches({positive}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.sqrt_(v[0]));
  });
  expect_grad_matches({positive}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.log_(v[0]));
  });
  expect_grad_matches({a}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.exp_(v[0]));
  });
  expect_grad_matches({a}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.softmax_rows(v[0]));
  });
}

TEST(Tape, GradRowTransforms) {
  Rng rng(16);
  const Matrix a = random_matrix(rng, 3, 4, 0.2, 1.0);
  expect_grad_matches({a}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.normalize_rows(v[0]));
  });
  // Rows straddle the clipping threshold so both branches get exercised.
  Matrix mixed(3, 4);
  Rng rng2(17);
  for (double& x : mixed.data) x = rng2.gaussian();
  for (int j = 0; j < 4; ++j) mixed(0, j) *= 0.1;
  expect_grad_matches({mixed}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.clip_rows(v[0], 1.0));
  });
  expect_grad_matches({a}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.expmap0_rows(v[0], 1.0));
  });
  expect_grad_matches({a}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.expmap0_rows(v[0], 0.5));
  });
}

TEST(Tape, GradStructuralOps) {
  Rng rng(18);
  const Matrix a = random_matrix(rng, 2, 3, -1.0, 1.0);
  const Matrix b = random_matrix(rng, 3, 3, -1.0, 1.0);
  expect_grad_matches({a, b}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.concat_rows({v[0], v[1]}));
  });
  expect_grad_matches({b}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.rows(v[0], 1, 3));
  });
  expect_grad_matches({b}, [](Tape& t, const std::vector<Var>& v) {
    return t.element(v[0], 2, 1);
  });
  const Matrix d = random_matrix(rng, 1, 3, -1.0, 1.0);
  expect_grad_matches({b, d}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.set_diag(v[0], v[1]));
  });
  // Repeated gather indices must scatter-add into the same source row.
  expect_grad_matches({b}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.gather_rows(v[0], {0, 2, 0}));
  });
}

TEST(Tape, GradColMin) {
  // Entries spaced far apart so the finite-difference step cannot flip the
  // selected row.
  Matrix m(3, 3);
  m(0, 0) = 0.5; m(0, 1) = 2.0; m(0, 2) = 3.0;
  m(1, 0) = 1.5; m(1, 1) = 0.2; m(1, 2) = 2.5;
  m(2, 0) = 2.5; m(2, 1) = 1.0; m(2, 2) = 0.7;
  expect_grad_matches({m}, [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, t.col_min(v[0]));
  });
}

TEST(Tape, GradComposedPipeline) {
  // A small end-to-end graph mixing matmul, softmax, gather and reductions.
  Rng rng(19);
  const Matrix emb = random_matrix(rng, 5, 3, -0.5, 0.5);
  const Matrix w = random_matrix(rng, 3, 4, -0.5, 0.5);
  expect_grad_matches({emb, w}, [](Tape& t, const std::vector<Var>& v) {
    Var gathered = t.gather_rows(v[0], {4, 0, 2});
    Var h = t.tanh_(t.matmul(gathered, v[1]));
    Var sm = t.softmax_rows(h);
    return t.dot(sm, sm);
  }, 1e-6);
}

}  // namespace
