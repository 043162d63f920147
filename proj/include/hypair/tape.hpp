#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "hypair/core.hpp"

// Reverse-mode differentiation over a flat tape of matrix-valued nodes.
// One tape per training step; backward walks the node list in reverse
// creation order, so gradient accumulation is deterministic and two runs
// on the same graph produce bit-identical adjoints.

namespace hypair {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

using Gradient = std::vector<Matrix>;

class Tape {
  enum class Op : uint8_t {
    kLeaf,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kAffine,
    kSmul,
    kSdiv,
    kRecip,
    kDot,
    kNorm,
    kSum,
    kMeanRows,
    kMatmul,
    kTranspose,
    kOuter,
    kTanh,
    kAtanh,
    kSqrt,
    kLog,
    kExp,
    kSoftmaxRows,
    kSqnormRows,
    kNormalizeRows,
    kClipRows,
    kExpmap0Rows,
    kConcatRows,
    kRowSlice,
    kElement,
    kColMin,
    kSetDiag,
    kGatherRows,
  };

  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    double p0 = 0.0;
    double p1 = 0.0;
    Matrix value;
    std::vector<int> indices;  // concat parents, gather/argmin indices, slice bounds
  };

 public:
  explicit Tape(bool check_finite = false) : check_finite_(check_finite) {}

  int size() const { return static_cast<int>(nodes_.size()); }

  void reset() {
    nodes_.clear();
    adjoints_.clear();
  }

  Var input(Matrix m) {
    if (!all_finite(m)) throw std::invalid_argument("tape input: non-finite value");
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(m);
    return push(std::move(n));
  }

  Var input_row(Vec v) { return input(Matrix::row(std::move(v))); }

  const Matrix& value(Var v) const { return at(v).value; }
  double scalar(Var v) const {
    const Node& n = at(v);
    if (n.value.size() != 1) throw std::invalid_argument("tape scalar: node is not 1x1");
    return n.value.data[0];
  }

  Var add(Var a, Var b) { return binary_same(Op::kAdd, a, b, [](double x, double y) { return x + y; }); }
  Var sub(Var a, Var b) { return binary_same(Op::kSub, a, b, [](double x, double y) { return x - y; }); }
  Var mul(Var a, Var b) { return binary_same(Op::kMul, a, b, [](double x, double y) { return x * y; }); }
  Var div(Var a, Var b) { return binary_same(Op::kDiv, a, b, [](double x, double y) { return x / y; }); }

  // m * a + k, elementwise with constant coefficients.
  Var affine(Var a, double m, double k) {
    Node n = unary_node(Op::kAffine, a);
    n.p0 = m;
    n.p1 = k;
    for (double& x : n.value.data) x = m * x + k;
    return push(std::move(n));
  }

  Var neg(Var a) { return affine(a, -1.0, 0.0); }

  // Scalar node times tensor node.
  Var smul(Var s, Var a) {
    check_scalar(s, "smul");
    Node n = unary_node(Op::kSmul, a);
    n.b = s.id;
    const double sv = scalar(s);
    for (double& x : n.value.data) x *= sv;
    return push(std::move(n));
  }

  // Tensor node divided by scalar node.
  Var sdiv(Var a, Var s) {
    check_scalar(s, "sdiv");
    Node n = unary_node(Op::kSdiv, a);
    n.b = s.id;
    const double sv = scalar(s);
    for (double& x : n.value.data) x /= sv;
    return push(std::move(n));
  }

  Var recip(Var s) {
    check_scalar(s, "recip");
    Node n = unary_node(Op::kRecip, s);
    n.value.data[0] = 1.0 / n.value.data[0];
    return push(std::move(n));
  }

  Var dot(Var a, Var b) {
    const Node& na = at(a);
    const Node& nb = at(b);
    if (!na.value.same_shape(nb.value)) throw std::invalid_argument("dot: shape mismatch");
    Node n;
    n.op = Op::kDot;
    n.a = a.id;
    n.b = b.id;
    n.value = Matrix(1, 1, vdot(na.value.data, nb.value.data));
    return push(std::move(n));
  }

  Var norm(Var a) {
    Node n;
    n.op = Op::kNorm;
    n.a = a.id;
    n.value = Matrix(1, 1, vnorm(at(a).value.data));
    return push(std::move(n));
  }

  Var sum(Var a) {
    Node n;
    n.op = Op::kSum;
    n.a = a.id;
    double s = 0.0;
    for (double x : at(a).value.data) s += x;
    n.value = Matrix(1, 1, s);
    return push(std::move(n));
  }

  // Column-wise mean over rows: (m,k) -> (1,k).
  Var mean_rows(Var a) {
    const Matrix& m = at(a).value;
    Node n;
    n.op = Op::kMeanRows;
    n.a = a.id;
    n.value = Matrix(1, m.cols);
    for (int i = 0; i < m.rows; ++i)
      for (int j = 0; j < m.cols; ++j) n.value(0, j) += m(i, j);
    for (double& x : n.value.data) x /= m.rows;
    return push(std::move(n));
  }

  Var matmul(Var a, Var b) {
    const Matrix& A = at(a).value;
    const Matrix& B = at(b).value;
    if (A.cols != B.rows) throw std::invalid_argument("matmul: inner dimensions differ");
    Node n;
    n.op = Op::kMatmul;
    n.a = a.id;
    n.b = b.id;
    n.value = matmul_values(A, B, false, false);
    return push(std::move(n));
  }

  // M (m,k) by length-k vector node -> (1,m).
  Var matvec(Var m, Var v) {
    const Matrix& M = at(m).value;
    const Matrix& V = at(v).value;
    if (V.size() != M.cols) throw std::invalid_argument("matvec: length mismatch");
    Var vrow = V.rows == 1 ? v : transpose(v);
    return transpose(matmul(m, transpose(vrow)));
  }

  Var transpose(Var a) {
    const Matrix& A = at(a).value;
    Node n;
    n.op = Op::kTranspose;
    n.a = a.id;
    n.value = Matrix(A.cols, A.rows);
    for (int i = 0; i < A.rows; ++i)
      for (int j = 0; j < A.cols; ++j) n.value(j, i) = A(i, j);
    return push(std::move(n));
  }

  // Rank-one product of two row vectors: (1,m) x (1,n) -> (m,n).
  Var outer(Var a, Var b) {
    const Matrix& A = at(a).value;
    const Matrix& B = at(b).value;
    if (A.rows != 1 || B.rows != 1) throw std::invalid_argument("outer: expects row vectors");
    Node n;
    n.op = Op::kOuter;
    n.a = a.id;
    n.b = b.id;
    n.value = Matrix(A.cols, B.cols);
    for (int i = 0; i < A.cols; ++i)
      for (int j = 0; j < B.cols; ++j) n.value(i, j) = A.data[i] * B.data[j];
    return push(std::move(n));
  }

  Var tanh_(Var a) {
    Node n = unary_node(Op::kTanh, a);
    for (double& x : n.value.data) x = std::tanh(x);
    return push(std::move(n));
  }

  // Inputs clamped to [-1 + margin, 1 - margin]; the derivative is evaluated
  // at the clamped argument.
  Var atanh_(Var a, double margin) {
    Node n = unary_node(Op::kAtanh, a);
    n.p0 = margin;
    for (double& x : n.value.data) x = std::atanh(clamp_sym(x, 1.0 - margin));
    return push(std::move(n));
  }

  // Negative inputs clamp to zero (zero gradient there).
  Var sqrt_(Var a) {
    Node n = unary_node(Op::kSqrt, a);
    for (double& x : n.value.data) x = x > 0.0 ? std::sqrt(x) : 0.0;
    return push(std::move(n));
  }

  Var log_(Var a) {
    Node n = unary_node(Op::kLog, a);
    for (double& x : n.value.data) x = std::log(std::max(x, kTiny));
    return push(std::move(n));
  }

  Var exp_(Var a) {
    Node n = unary_node(Op::kExp, a);
    for (double& x : n.value.data) x = std::exp(x);
    return push(std::move(n));
  }

  Var softmax_rows(Var a) {
    Node n = unary_node(Op::kSoftmaxRows, a);
    Matrix& m = n.value;
    for (int i = 0; i < m.rows; ++i) {
      double mx = m(i, 0);
      for (int j = 1; j < m.cols; ++j) mx = std::max(mx, m(i, j));
      double z = 0.0;
      for (int j = 0; j < m.cols; ++j) {
        m(i, j) = std::exp(m(i, j) - mx);
        z += m(i, j);
      }
      for (int j = 0; j < m.cols; ++j) m(i, j) /= z;
    }
    return push(std::move(n));
  }

  // Per-row squared norms: (m,k) -> (1,m).
  Var sqnorm_rows(Var a) {
    const Matrix& A = at(a).value;
    Node n;
    n.op = Op::kSqnormRows;
    n.a = a.id;
    n.value = Matrix(1, A.rows);
    for (int i = 0; i < A.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < A.cols; ++j) s += A(i, j) * A(i, j);
      n.value.data[i] = s;
    }
    return push(std::move(n));
  }

  Var normalize_rows(Var a) {
    Node n = unary_node(Op::kNormalizeRows, a);
    Matrix& m = n.value;
    for (int i = 0; i < m.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < m.cols; ++j) s += m(i, j) * m(i, j);
      const double nv = std::max(std::sqrt(s), kTiny);
      for (int j = 0; j < m.cols; ++j) m(i, j) /= nv;
    }
    return push(std::move(n));
  }

  // Rows with norm above max_norm are rescaled onto the threshold sphere.
  Var clip_rows(Var a, double max_norm) {
    Node n = unary_node(Op::kClipRows, a);
    n.p0 = max_norm;
    Matrix& m = n.value;
    for (int i = 0; i < m.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < m.cols; ++j) s += m(i, j) * m(i, j);
      const double nv = std::sqrt(s);
      if (nv > max_norm) {
        const double sc = max_norm / nv;
        for (int j = 0; j < m.cols; ++j) m(i, j) *= sc;
      }
    }
    return push(std::move(n));
  }

  // Row-wise exponential map at the origin, v -> v tanh(sqrt(c)||v||)/(sqrt(c)||v||).
  Var expmap0_rows(Var a, double curvature) {
    Node n = unary_node(Op::kExpmap0Rows, a);
    n.p0 = curvature;
    const double sc = std::sqrt(curvature);
    Matrix& m = n.value;
    for (int i = 0; i < m.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < m.cols; ++j) s += m(i, j) * m(i, j);
      const double r = std::sqrt(s);
      if (r < kTiny) continue;
      const double g = std::tanh(sc * r) / (sc * r);
      for (int j = 0; j < m.cols; ++j) m(i, j) *= g;
    }
    return push(std::move(n));
  }

  // Stacks parts with equal column counts along rows.
  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty part list");
    const int cols = at(parts[0]).value.cols;
    int rows = 0;
    for (Var p : parts) {
      if (at(p).value.cols != cols) throw std::invalid_argument("concat_rows: column mismatch");
      rows += at(p).value.rows;
    }
    Node n;
    n.op = Op::kConcatRows;
    n.value = Matrix(rows, cols);
    n.indices.reserve(parts.size());
    int r = 0;
    for (Var p : parts) {
      n.indices.push_back(p.id);
      const Matrix& m = at(p).value;
      for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < cols; ++j) n.value(r + i, j) = m(i, j);
      r += m.rows;
    }
    return push(std::move(n));
  }

  // Row slice [r0, r1).
  Var rows(Var a, int r0, int r1) {
    const Matrix& A = at(a).value;
    if (r0 < 0 || r1 > A.rows || r0 >= r1) throw std::invalid_argument("rows: bad slice bounds");
    Node n;
    n.op = Op::kRowSlice;
    n.a = a.id;
    n.indices = {r0, r1};
    n.value = Matrix(r1 - r0, A.cols);
    for (int i = r0; i < r1; ++i)
      for (int j = 0; j < A.cols; ++j) n.value(i - r0, j) = A(i, j);
    return push(std::move(n));
  }

  Var row(Var a, int r) { return rows(a, r, r + 1); }

  Var element(Var a, int i, int j) {
    const Matrix& A = at(a).value;
    if (i < 0 || i >= A.rows || j < 0 || j >= A.cols)
      throw std::invalid_argument("element: index out of range");
    Node n;
    n.op = Op::kElement;
    n.a = a.id;
    n.indices = {i, j};
    n.value = Matrix(1, 1, A(i, j));
    return push(std::move(n));
  }

  // Column minima: (m,n) -> (1,n). Ties resolve to the lowest row index;
  // the adjoint flows only into the selected entries.
  Var col_min(Var a) {
    const Matrix& A = at(a).value;
    Node n;
    n.op = Op::kColMin;
    n.a = a.id;
    n.value = Matrix(1, A.cols);
    n.indices.resize(A.cols);
    for (int j = 0; j < A.cols; ++j) {
      int best = 0;
      double bv = A(0, j);
      for (int i = 1; i < A.rows; ++i)
        if (A(i, j) < bv) {
          bv = A(i, j);
          best = i;
        }
      n.value.data[j] = bv;
      n.indices[j] = best;
    }
    return push(std::move(n));
  }

  // Row indices selected by the last col_min on this node.
  const std::vector<int>& argmin_rows(Var colmin) const {
    const Node& n = at(colmin);
    if (n.op != Op::kColMin) throw std::invalid_argument("argmin_rows: not a col_min node");
    return n.indices;
  }

  // Square matrix with its diagonal replaced by the entries of d.
  Var set_diag(Var m, Var d) {
    const Matrix& M = at(m).value;
    const Matrix& D = at(d).value;
    if (M.rows != M.cols) throw std::invalid_argument("set_diag: matrix not square");
    if (D.size() != M.rows) throw std::invalid_argument("set_diag: diagonal length mismatch");
    Node n;
    n.op = Op::kSetDiag;
    n.a = m.id;
    n.b = d.id;
    n.value = M;
    for (int i = 0; i < M.rows; ++i) n.value(i, i) = D.data[i];
    return push(std::move(n));
  }

  Var gather_rows(Var table, std::vector<int> idx) {
    const Matrix& T = at(table).value;
    Node n;
    n.op = Op::kGatherRows;
    n.a = table.id;
    n.value = Matrix(static_cast<int>(idx.size()), T.cols);
    for (size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= T.rows) throw std::invalid_argument("gather_rows: index out of range");
      for (int j = 0; j < T.cols; ++j) n.value(static_cast<int>(i), j) = T(idx[i], j);
    }
    n.indices = std::move(idx);
    return push(std::move(n));
  }

  void backward(Var root) {
    const Node& rn = at(root);
    if (rn.value.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    adjoints_.assign(nodes_.size(), Matrix());
    for (size_t i = 0; i < nodes_.size(); ++i)
      adjoints_[i] = Matrix(nodes_[i].value.rows, nodes_[i].value.cols);
    adjoints_[root.id].data[0] = 1.0;
    for (int id = root.id; id >= 0; --id) propagate(id);
  }

  const Matrix& adjoint(Var v) const {
    if (adjoints_.empty()) throw std::logic_error("adjoint: backward has not run");
    return adjoints_[v.id];
  }

 private:
  static constexpr double kTiny = 1e-15;

  static double clamp_sym(double x, double cap) { return x > cap ? cap : (x < -cap ? -cap : x); }

  const Node& at(Var v) const { return nodes_[v.id]; }

  Var push(Node n) {
    if (check_finite_ && !all_finite(n.value))
      throw std::runtime_error("tape: non-finite value recorded");
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Node unary_node(Op op, Var a) {
    Node n;
    n.op = op;
    n.a = a.id;
    n.value = at(a).value;
    return n;
  }

  template <typename F>
  Var binary_same(Op op, Var a, Var b, F f) {
    const Node& na = at(a);
    const Node& nb = at(b);
    if (!na.value.same_shape(nb.value)) throw std::invalid_argument("tape: shape mismatch");
    Node n;
    n.op = op;
    n.a = a.id;
    n.b = b.id;
    n.value = Matrix(na.value.rows, na.value.cols);
    for (int i = 0; i < n.value.size(); ++i)
      n.value.data[i] = f(na.value.data[i], nb.value.data[i]);
    return push(std::move(n));
  }

  void check_scalar(Var s, const char* who) const {
    if (at(s).value.size() != 1)
      throw std::invalid_argument(std::string(who) + ": scalar operand expected");
  }

  static Matrix matmul_values(const Matrix& A, const Matrix& B, bool ta, bool tb) {
    const int m = ta ? A.cols : A.rows;
    const int k = ta ? A.rows : A.cols;
    const int p = tb ? B.rows : B.cols;
    Matrix C(m, p);
    for (int i = 0; i < m; ++i)
      for (int l = 0; l < k; ++l) {
        const double av = ta ? A(l, i) : A(i, l);
        if (av == 0.0) continue;
        for (int j = 0; j < p; ++j) C(i, j) += av * (tb ? B(j, l) : B(l, j));
      }
    return C;
  }

  void propagate(int id) {
    const Node& n = nodes_[id];
    const Matrix& adj = adjoints_[id];
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd:
        axpy(n.a, 1.0, adj.data);
        axpy(n.b, 1.0, adj.data);
        break;
      case Op::kSub:
        axpy(n.a, 1.0, adj.data);
        axpy(n.b, -1.0, adj.data);
        break;
      case Op::kMul: {
        Matrix& da = adjoints_[n.a];
        Matrix& db = adjoints_[n.b];
        const Vec& va = nodes_[n.a].value.data;
        const Vec& vb = nodes_[n.b].value.data;
        for (int i = 0; i < adj.size(); ++i) {
          da.data[i] += adj.data[i] * vb[i];
          db.data[i] += adj.data[i] * va[i];
        }
        break;
      }
      case Op::kDiv: {
        Matrix& da = adjoints_[n.a];
        Matrix& db = adjoints_[n.b];
        const Vec& va = nodes_[n.a].value.data;
        const Vec& vb = nodes_[n.b].value.data;
        for (int i = 0; i < adj.size(); ++i) {
          da.data[i] += adj.data[i] / vb[i];
          db.data[i] -= adj.data[i] * va[i] / (vb[i] * vb[i]);
        }
        break;
      }
      case Op::kAffine:
        axpy(n.a, n.p0, adj.data);
        break;
      case Op::kSmul: {
        const double sv = nodes_[n.b].value.data[0];
        axpy(n.a, sv, adj.data);
        double acc = 0.0;
        const Vec& va = nodes_[n.a].value.data;
        for (int i = 0; i < adj.size(); ++i) acc += adj.data[i] * va[i];
        adjoints_[n.b].data[0] += acc;
        break;
      }
      case Op::kSdiv: {
        const double sv = nodes_[n.b].value.data[0];
        axpy(n.a, 1.0 / sv, adj.data);
        double acc = 0.0;
        const Vec& va = nodes_[n.a].value.data;
        for (int i = 0; i < adj.size(); ++i) acc += adj.data[i] * va[i];
        adjoints_[n.b].data[0] -= acc / (sv * sv);
        break;
      }
      case Op::kRecip: {
        const double y = n.value.data[0];
        adjoints_[n.a].data[0] -= adj.data[0] * y * y;
        break;
      }
      case Op::kDot:
        axpy(n.a, adj.data[0], nodes_[n.b].value.data);
        axpy(n.b, adj.data[0], nodes_[n.a].value.data);
        break;
      case Op::kNorm: {
        const double y = std::max(n.value.data[0], kTiny);
        axpy(n.a, adj.data[0] / y, nodes_[n.a].value.data);
        break;
      }
      case Op::kSum: {
        Matrix& da = adjoints_[n.a];
        for (double& x : da.data) x += adj.data[0];
        break;
      }
      case Op::kMeanRows: {
        Matrix& da = adjoints_[n.a];
        const double inv = 1.0 / da.rows;
        for (int i = 0; i < da.rows; ++i)
          for (int j = 0; j < da.cols; ++j) da(i, j) += adj.data[j] * inv;
        break;
      }
      case Op::kMatmul: {
        accumulate(adjoints_[n.a], matmul_values(adj, nodes_[n.b].value, false, true));
        accumulate(adjoints_[n.b], matmul_values(nodes_[n.a].value, adj, true, false));
        break;
      }
      case Op::kTranspose: {
        Matrix& da = adjoints_[n.a];
        for (int i = 0; i < adj.rows; ++i)
          for (int j = 0; j < adj.cols; ++j) da(j, i) += adj(i, j);
        break;
      }
      case Op::kOuter: {
        Matrix& da = adjoints_[n.a];
        Matrix& db = adjoints_[n.b];
        const Vec& va = nodes_[n.a].value.data;
        const Vec& vb = nodes_[n.b].value.data;
        for (int i = 0; i < adj.rows; ++i)
          for (int j = 0; j < adj.cols; ++j) {
            da.data[i] += adj(i, j) * vb[j];
            db.data[j] += adj(i, j) * va[i];
          }
        break;
      }
      case Op::kTanh: {
        Matrix& da = adjoints_[n.a];
        for (int i = 0; i < adj.size(); ++i) {
          const double y = n.value.data[i];
          da.data[i] += adj.data[i] * (1.0 - y * y);
        }
        break;
      }
      case Op::kAtanh: {
        Matrix& da = adjoints_[n.a];
        const double cap = 1.0 - n.p0;
        const Vec& va = nodes_[n.a].value.data;
        for (int i = 0; i < adj.size(); ++i) {
          const double x = clamp_sym(va[i], cap);
          da.data[i] += adj.data[i] / (1.0 - x * x);
        }
        break;
      }
      case Op::kSqrt: {
        Matrix& da = adjoints_[n.a];
        const Vec& va = nodes_[n.a].value.data;
        for (int i = 0; i < adj.size(); ++i) {
          if (va[i] <= 0.0) continue;
          da.data[i] += adj.data[i] / (2.0 * std::max(n.value.data[i], kTiny));
        }
        break;
      }
      case Op::kLog: {
        Matrix& da = adjoints_[n.a];
        const Vec& va = nodes_[n.a].value.data;
        for (int i = 0; i < adj.size(); ++i) da.data[i] += adj.data[i] / std::max(va[i], kTiny);
        break;
      }
      case Op::kExp: {
        Matrix& da = adjoints_[n.a];
        for (int i = 0; i < adj.size(); ++i) da.data[i] += adj.data[i] * n.value.data[i];
        break;
      }
      case Op::kSoftmaxRows: {
        Matrix& da = adjoints_[n.a];
        for (int i = 0; i < adj.rows; ++i) {
          double inner = 0.0;
          for (int j = 0; j < adj.cols; ++j) inner += adj(i, j) * n.value(i, j);
          for (int j = 0; j < adj.cols; ++j)
            da(i, j) += n.value(i, j) * (adj(i, j) - inner);
        }
        break;
      }
      case Op::kSqnormRows: {
        Matrix& da = adjoints_[n.a];
        const Matrix& va = nodes_[n.a].value;
        for (int i = 0; i < va.rows; ++i)
          for (int j = 0; j < va.cols; ++j) da(i, j) += 2.0 * adj.data[i] * va(i, j);
        break;
      }
      case Op::kNormalizeRows: {
        Matrix& da = adjoints_[n.a];
        const Matrix& va = nodes_[n.a].value;
        for (int i = 0; i < va.rows; ++i) {
          double s = 0.0;
          for (int j = 0; j < va.cols; ++j) s += va(i, j) * va(i, j);
          const double nv = std::max(std::sqrt(s), kTiny);
          double inner = 0.0;
          for (int j = 0; j < va.cols; ++j) inner += adj(i, j) * n.value(i, j);
          for (int j = 0; j < va.cols; ++j)
            da(i, j) += (adj(i, j) - inner * n.value(i, j)) / nv;
        }
        break;
      }
      case Op::kClipRows: {
        Matrix& da = adjoints_[n.a];
        const Matrix& va = nodes_[n.a].value;
        for (int i = 0; i < va.rows; ++i) {
          double s = 0.0;
          for (int j = 0; j < va.cols; ++j) s += va(i, j) * va(i, j);
          const double nv = std::sqrt(s);
          if (nv <= n.p0) {
            for (int j = 0; j < va.cols; ++j) da(i, j) += adj(i, j);
          } else {
            const double sc = n.p0 / nv;
            double inner = 0.0;
            for (int j = 0; j < va.cols; ++j) inner += adj(i, j) * va(i, j);
            inner /= s;
            for (int j = 0; j < va.cols; ++j)
              da(i, j) += sc * (adj(i, j) - inner * va(i, j));
          }
        }
        break;
      }
      case Op::kExpmap0Rows: {
        Matrix& da = adjoints_[n.a];
        const Matrix& va = nodes_[n.a].value;
        const double sc = std::sqrt(n.p0);
        for (int i = 0; i < va.rows; ++i) {
          double s = 0.0;
          for (int j = 0; j < va.cols; ++j) s += va(i, j) * va(i, j);
          const double r = std::sqrt(s);
          if (r < kTiny) {
            for (int j = 0; j < va.cols; ++j) da(i, j) += adj(i, j);
            continue;
          }
          const double th = std::tanh(sc * r);
          const double g = th / (sc * r);
          const double sech2 = 1.0 - th * th;
          double inner = 0.0;
          for (int j = 0; j < va.cols; ++j) inner += adj(i, j) * va(i, j);
          const double coef = (sech2 - g) / s * inner;
          for (int j = 0; j < va.cols; ++j) da(i, j) += g * adj(i, j) + coef * va(i, j);
        }
        break;
      }
      case Op::kConcatRows: {
        int r = 0;
        for (int pid : n.indices) {
          Matrix& dp = adjoints_[pid];
          for (int i = 0; i < dp.rows; ++i)
            for (int j = 0; j < dp.cols; ++j) dp(i, j) += adj(r + i, j);
          r += dp.rows;
        }
        break;
      }
      case Op::kRowSlice: {
        Matrix& da = adjoints_[n.a];
        const int r0 = n.indices[0];
        for (int i = 0; i < adj.rows; ++i)
          for (int j = 0; j < adj.cols; ++j) da(r0 + i, j) += adj(i, j);
        break;
      }
      case Op::kElement:
        adjoints_[n.a](n.indices[0], n.indices[1]) += adj.data[0];
        break;
      case Op::kColMin: {
        Matrix& da = adjoints_[n.a];
        for (int j = 0; j < adj.cols; ++j) da(n.indices[j], j) += adj.data[j];
        break;
      }
      case Op::kSetDiag: {
        Matrix& dm = adjoints_[n.a];
        Matrix& dd = adjoints_[n.b];
        for (int i = 0; i < adj.rows; ++i)
          for (int j = 0; j < adj.cols; ++j) {
            if (i == j)
              dd.data[i] += adj(i, j);
            else
              dm(i, j) += adj(i, j);
          }
        break;
      }
      case Op::kGatherRows: {
        Matrix& dt = adjoints_[n.a];
        for (size_t i = 0; i < n.indices.size(); ++i)
          for (int j = 0; j < adj.cols; ++j)
            dt(n.indices[i], j) += adj(static_cast<int>(i), j);
        break;
      }
    }
  }

  void axpy(int target, double k, const Vec& src) {
    Vec& dst = adjoints_[target].data;
    for (size_t i = 0; i < src.size(); ++i) dst[i] += k * src[i];
  }

  static void accumulate(Matrix& dst, const Matrix& src) {
    for (int i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
  }

  bool check_finite_;
  std::vector<Node> nodes_;
  std::vector<Matrix> adjoints_;
};

// Central finite differences, (f(x + h e_i) - f(x - h e_i)) / 2h.
inline Vec finite_diff_grad(const std::function<double(const Vec&)>& f, Vec x,
                            double step = 1e-5) {
  Vec g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double fp = f(x);
    x[i] = saved - step;
    const double fm = f(x);
    x[i] = saved;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

// ||a - b|| / (||a|| + ||b||), the usual gradient-check discrepancy measure.
inline double grad_rel_err(const Vec& a, const Vec& b) {
  double dn = 0.0, an = 0.0, bn = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dn += (a[i] - b[i]) * (a[i] - b[i]);
    an += a[i] * a[i];
    bn += b[i] * b[i];
  }
  const double denom = std::sqrt(an) + std::sqrt(bn);
  if (denom < 1e-12) return std::sqrt(dn);
  return std::sqrt(dn) / denom;
}

}  // namespace hypair
