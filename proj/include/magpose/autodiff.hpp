#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "magpose/errors.hpp"

namespace magpose {

class Tape;

// Handle to one scalar on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  double value() const;
};

// Wengert-list reverse-mode tape over scalars. Nodes may have any number of
// parents; parents always precede children, so reverse index order is a
// reverse topological order and backward() visits each node exactly once.
class Tape {
 public:
  Tape() { arg_begin_.push_back(0); }

  Var leaf(double value) {
    const int id = new_node(value);
    return {this, id};
  }

  Var unary(double value, Var a, double da) {
    push_arg(a.id, da);
    return {this, new_node(value)};
  }

  Var binary(double value, Var a, double da, Var b, double db) {
    push_arg(a.id, da);
    push_arg(b.id, db);
    return {this, new_node(value)};
  }

  // Caller pushes parents with push_arg() and seals with commit().
  void push_arg(int parent, double partial) {
    arg_id_.push_back(parent);
    arg_dx_.push_back(partial);
  }

  Var commit(double value) { return {this, new_node(value)}; }

  double value(Var v) const { return val_[static_cast<std::size_t>(v.id)]; }

  // Gradients of `loss` with respect to every node. All adjoints are zeroed
  // first; nodes recorded after loss keep adjoint zero.
  void backward(Var loss) {
    grad_.assign(val_.size(), 0.0);
    grad_[static_cast<std::size_t>(loss.id)] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      const double g = grad_[static_cast<std::size_t>(i)];
      if (g == 0.0) continue;
      const std::size_t begin = arg_begin_[static_cast<std::size_t>(i)];
      const std::size_t end = arg_begin_[static_cast<std::size_t>(i) + 1];
      for (std::size_t k = begin; k < end; ++k)
        grad_[static_cast<std::size_t>(arg_id_[k])] += g * arg_dx_[k];
    }
  }

  double grad(Var v) const { return grad_[static_cast<std::size_t>(v.id)]; }

  std::size_t size() const { return val_.size(); }

  // Drops all nodes but keeps allocated capacity for reuse across batches.
  void clear() {
    val_.clear();
    grad_.clear();
    arg_id_.clear();
    arg_dx_.clear();
    arg_begin_.clear();
    arg_begin_.push_back(0);
  }

 private:
  int new_node(double value) {
    val_.push_back(value);
    arg_begin_.push_back(arg_id_.size());
    return static_cast<int>(val_.size()) - 1;
  }

  std::vector<double> val_;
  std::vector<double> grad_;
  std::vector<int> arg_id_;
  std::vector<double> arg_dx_;
  std::vector<std::size_t> arg_begin_;  // size() + 1 prefix offsets
};

inline double Var::value() const { return tape->value(*this); }

// ---- primitives ----
// Each has a double overload so templated model code instantiates for both
// plain evaluation and taped training.

inline Var operator+(Var a, Var b) {
  return a.tape->binary(a.value() + b.value(), a, 1.0, b, 1.0);
}

inline Var operator-(Var a, Var b) {
  return a.tape->binary(a.value() - b.value(), a, 1.0, b, -1.0);
}

inline Var operator*(Var a, Var b) {
  return a.tape->binary(a.value() * b.value(), a, b.value(), b, a.value());
}

inline Var operator-(Var a) { return a.tape->unary(-a.value(), a, -1.0); }

inline Var operator+(Var a, double c) { return a.tape->unary(a.value() + c, a, 1.0); }
inline Var operator+(double c, Var a) { return a + c; }
inline Var operator-(Var a, double c) { return a + (-c); }
inline Var operator-(double c, Var a) { return a.tape->unary(c - a.value(), a, -1.0); }
inline Var operator*(Var a, double c) { return a.tape->unary(a.value() * c, a, c); }
inline Var operator*(double c, Var a) { return a * c; }
inline Var operator/(Var a, double c) { return a * (1.0 / c); }

inline Var tanh(Var a) {
  const double t = std::tanh(a.value());
  return a.tape->unary(t, a, 1.0 - t * t);
}
inline double tanh(double a) { return std::tanh(a); }

inline Var sigmoid(Var a) {
  const double v = a.value();
  const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                            : std::exp(v) / (1.0 + std::exp(v));
  return a.tape->unary(s, a, s * (1.0 - s));
}
inline double sigmoid(double a) {
  return a >= 0.0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a));
}

// exp saturates at e^30 so random graph compositions stay finite.
inline constexpr double kExpClamp = 30.0;

inline Var exp(Var a) {
  const double v = a.value();
  if (v > kExpClamp) {
    const double e = std::exp(kExpClamp);
    return a.tape->unary(e, a, 0.0);
  }
  const double e = std::exp(v);
  return a.tape->unary(e, a, e);
}
inline double exp(double a) { return std::exp(a > kExpClamp ? kExpClamp : a); }

// log floors its argument at 1e-300.
inline Var log(Var a) {
  const double v = a.value();
  if (v < 1e-300) return a.tape->unary(std::log(1e-300), a, 0.0);
  return a.tape->unary(std::log(v), a, 1.0 / v);
}
inline double log(double a) { return std::log(a < 1e-300 ? 1e-300 : a); }

// Numerically stable log(1 + e^x).
inline Var softplus(Var a) {
  const double v = a.value();
  const double sp = v > 30.0 ? v : std::log1p(std::exp(v));
  const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                            : std::exp(v) / (1.0 + std::exp(v));
  return a.tape->unary(sp, a, s);
}
inline double softplus(double a) { return a > 30.0 ? a : std::log1p(std::exp(a)); }

inline Var square(Var a) {
  const double v = a.value();
  return a.tape->unary(v * v, a, 2.0 * v);
}
inline double square(double a) { return a * a; }

inline Var inv(Var a) {
  const double v = a.value();
  return a.tape->unary(1.0 / v, a, -1.0 / (v * v));
}
inline double inv(double a) { return 1.0 / a; }

inline Var sqrt(Var a) {
  const double s = std::sqrt(a.value());
  return a.tape->unary(s, a, 0.5 / s);
}
inline double sqrt(double a) { return std::sqrt(a); }

// ---- vector helpers ----

// Dot product as one n-ary node (2n partials).
inline Var dot(const std::vector<Var>& a, const std::vector<Var>& b) {
  if (a.size() != b.size()) throw ShapeMismatch("dot: length mismatch");
  if (a.empty()) throw ShapeMismatch("dot: empty operands");
  Tape* t = a[0].tape;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double av = a[i].value(), bv = b[i].value();
    s += av * bv;
    t->push_arg(a[i].id, bv);
    t->push_arg(b[i].id, av);
  }
  return t->commit(s);
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeMismatch("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Var sum(const std::vector<Var>& a) {
  if (a.empty()) throw ShapeMismatch("sum: empty operand");
  Tape* t = a[0].tape;
  double s = 0.0;
  for (const Var& v : a) {
    s += v.value();
    t->push_arg(v.id, 1.0);
  }
  return t->commit(s);
}

inline double sum(const std::vector<double>& a) {
  double s = 0.0;
  for (double v : a) s += v;
  return s;
}

// y = W x + b with W row-major (rows x cols).
template <class S>
std::vector<S> matvec_affine(const std::vector<S>& w_rowmajor, int rows, int cols,
                             const std::vector<S>& x, const std::vector<S>& b) {
  if (static_cast<int>(w_rowmajor.size()) != rows * cols ||
      static_cast<int>(x.size()) != cols || static_cast<int>(b.size()) != rows)
    throw ShapeMismatch("matvec_affine: inconsistent shapes");
  std::vector<S> y;
  y.reserve(static_cast<std::size_t>(rows));
  std::vector<S> row(static_cast<std::size_t>(cols));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c)
      row[static_cast<std::size_t>(c)] = w_rowmajor[static_cast<std::size_t>(r * cols + c)];
    y.push_back(dot(row, x) + b[static_cast<std::size_t>(r)]);
  }
  return y;
}

template <class S>
std::vector<S> concat(const std::vector<S>& a, const std::vector<S>& b) {
  std::vector<S> out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace magpose
