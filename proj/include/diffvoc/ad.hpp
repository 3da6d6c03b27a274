// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode autodiff over flat double buffers. The network
// forward pass, the unrolled reverse sampler, and the spectral losses are
// all expressed in this op set, so one backward() covers the whole
// objective. Buffers carry an optional 2-D shape (rows x cols); plain
// vectors are (1 x n). Ops with only constant inputs produce constants and
// record no backward closure, so inference reuses the same code paths at
// negligible cost.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace diffvoc::ad {

class Node;
using NodePtr = std::shared_ptr<Node>;

class Node {
 public:
  std::vector<double> val;
  std::vector<double> grad;  // allocated lazily, same size as val
  std::int64_t rows = 1;
  std::int64_t cols = 0;
  bool needs_grad = false;
  std::vector<NodePtr> parents;
  std::function<void()> backprop;  // accumulates this->grad into parents

  void ensure_grad();
};

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : n_(std::move(n)) {}

  static Var constant(std::vector<double> v, std::int64_t rows = 1);
  static Var constant(std::span<const double> v, std::int64_t rows = 1);
  static Var scalar(double v);
  static Var leaf(std::vector<double> v, bool needs_grad, std::int64_t rows = 1);

  bool defined() const { return n_ != nullptr; }
  std::int64_t size() const;
  std::int64_t rows() const;
  std::int64_t cols() const;
  bool needs_grad() const;
  const std::vector<double>& value() const;
  const std::vector<double>& grad() const;
  double item() const;  // value of a single-element Var
  NodePtr node() const { return n_; }

 private:
  NodePtr n_;
};

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, double c);
Var mul_scalar(const Var& a, double c);
// c_a * a + c_b * b, same shapes.
Var axpby(double c_a, const Var& a, double c_b, const Var& b);
Var tanh(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var abs(const Var& a);
// log(a + shift); shift > 0 keeps the value and gradient bounded near zero.
Var log_shift(const Var& a, double shift);
Var atan2(const Var& y, const Var& x);
// Principal value of an angle difference: remainder(a, 2*pi), range [-pi, pi].
Var wrap_angle(const Var& a);
// sqrt(re^2 + im^2) with a zero-safe gradient.
Var magnitude(const Var& re, const Var& im);
// Elementwise product with a constant weight vector (e.g. a 0/1 mask).
Var mul_const(const Var& a, std::span<const double> w);
// x * s where s is a single-element Var.
Var mul_scalar_var(const Var& x, const Var& s);

// ---- reductions / reshaping ----
Var sum(const Var& a);
Var mean(const Var& a);
// Flat [begin, end) slice; result is a vector.
Var slice(const Var& a, std::int64_t begin, std::int64_t end);

// ---- linear algebra ----
// (r x c) matrix times length-c vector -> length-r vector.
Var matvec(const Var& m, const Var& x);
// (f x b) times (c x b)^T -> (f x c). Used for DFT and mel projection where
// the right operand is a constant basis/filterbank.
Var matmul_rt(const Var& x, const Var& m);

// ---- network ops ----
// x: (c_in x t), w: (c_out x c_in*k), b: (c_out) or undefined. Stride 1,
// zero 'same' padding, odd k.
Var conv1d(const Var& x, const Var& w, const Var& b, int kernel);
// Repeat each time step `factor` times: (c x t) -> (c x t*factor).
Var upsample_repeat(const Var& x, int factor);
// y[c][t] = x[c][t] * s[c].
Var channel_scale(const Var& x, const Var& s);

// ---- signal framing ----
// Centered frames with reflection padding of window_len/2 on both sides.
// Output is (frames x window_len) with the window already applied;
// frames = floor(t / hop) + 1. Requires even window_len <= signal length.
Var frame_signal(const Var& x, std::span<const double> window, int hop);

// Runs reverse-mode accumulation from a single-element root. Leaf Vars
// created with needs_grad=true hold the result in .grad().
void backward(const Var& root);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double c, const Var& a) { return mul_scalar(a, c); }

}  // namespace diffvoc::ad
