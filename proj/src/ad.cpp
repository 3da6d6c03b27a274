// Copyright 2026 The diffvoc Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffvoc/ad.hpp"

#include <cmath>
#include <unordered_set>

#include "diffvoc/errors.hpp"

namespace diffvoc::ad {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

NodePtr make_node(std::vector<double> val, std::int64_t rows,
                  std::vector<NodePtr> parents) {
  auto n = std::make_shared<Node>();
  if (rows <= 0 || val.size() % static_cast<std::size_t>(rows) != 0)
    throw ContractError("ad: invalid row count for buffer size");
  n->rows = rows;
  n->cols = static_cast<std::int64_t>(val.size()) / rows;
  n->val = std::move(val);
  for (const auto& p : parents)
    if (p && p->needs_grad) n->needs_grad = true;
  if (n->needs_grad) n->parents = std::move(parents);
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.size() != b.size() || a.rows() != b.rows())
    throw ContractError(std::string("ad: shape mismatch in ") + op);
}

// Reflection without edge duplication: -1 -> 1, n -> n-2.
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (i < 0) i = -i;
  if (i >= n) i = 2 * n - 2 - i;
  return i;
}

}  // namespace

void Node::ensure_grad() {
  if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
}

Var Var::constant(std::vector<double> v, std::int64_t rows) {
  return Var(make_node(std::move(v), rows, {}));
}

Var Var::constant(std::span<const double> v, std::int64_t rows) {
  return constant(std::vector<double>(v.begin(), v.end()), rows);
}

Var Var::scalar(double v) { return constant(std::vector<double>{v}, 1); }

Var Var::leaf(std::vector<double> v, bool needs_grad, std::int64_t rows) {
  auto n = make_node(std::move(v), rows, {});
  n->needs_grad = needs_grad;
  return Var(n);
}

std::int64_t Var::size() const {
  return n_ ? static_cast<std::int64_t>(n_->val.size()) : 0;
}
std::int64_t Var::rows() const { return n_ ? n_->rows : 0; }
std::int64_t Var::cols() const { return n_ ? n_->cols : 0; }
bool Var::needs_grad() const { return n_ && n_->needs_grad; }

const std::vector<double>& Var::value() const {
  if (!n_) throw ContractError("ad: value() on undefined Var");
  return n_->val;
}

const std::vector<double>& Var::grad() const {
  if (!n_) throw ContractError("ad: grad() on undefined Var");
  const_cast<Node*>(n_.get())->ensure_grad();
  return n_->grad;
}

double Var::item() const {
  if (size() != 1) throw ContractError("ad: item() on non-scalar Var");
  return value()[0];
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  auto n = make_node(std::move(out), a.rows(), {a.node(), b.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    n->backprop = [self, pa, pb] {
      if (pa->needs_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self->grad.size(); ++i)
          pa->grad[i] += self->grad[i];
      }
      if (pb->needs_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < self->grad.size(); ++i)
          pb->grad[i] += self->grad[i];
      }
    };
  }
  return Var(n);
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  auto n = make_node(std::move(out), a.rows(), {a.node(), b.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    n->backprop = [self, pa, pb] {
      if (pa->needs_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self->grad.size(); ++i)
          pa->grad[i] += self->grad[i];
      }
      if (pb->needs_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < self->grad.size(); ++i)
          pb->grad[i] -= self->grad[i];
      }
    };
  }
  return Var(n);
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  auto n = make_node(std::move(out), a.rows(), {a.node(), b.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    n->backprop = [self, pa, pb] {
      if (pa->needs_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self->grad.size(); ++i)
          pa->grad[i] += self->grad[i] * pb->val[i];
      }
      if (pb->needs_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < self->grad.size(); ++i)
          pb->grad[i] += self->grad[i] * pa->val[i];
      }
    };
  }
  return Var(n);
}

Var add_scalar(const Var& a, double c) {
  std::vector<double> out(a.value());
  for (auto& v : out) v += c;
  auto n = make_node(std::move(out), a.rows(), {a.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    n->backprop = [self, pa] {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        pa->grad[i] += self->grad[i];
    };
  }
  return Var(n);
}

Var mul_scalar(const Var& a, double c) {
  std::vector<double> out(a.value());
  for (auto& v : out) v *= c;
  auto n = make_node(std::move(out), a.rows(), {a.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    n->backprop = [self, pa, c] {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        pa->grad[i] += c * self->grad[i];
    };
  }
  return Var(n);
}

Var axpby(double c_a, const Var& a, double c_b, const Var& b) {
  check_same_shape(a, b, "axpby");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = c_a * a.value()[i] + c_b * b.value()[i];
  auto n = make_node(std::move(out), a.rows(), {a.node(), b.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    n->backprop = [self, pa, pb, c_a, c_b] {
      if (pa->needs_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self->grad.size(); ++i)
          pa->grad[i] += c_a * self->grad[i];
      }
      if (pb->needs_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < self->grad.size(); ++i)
          pb->grad[i] += c_b * self->grad[i];
      }
    };
  }
  return Var(n);
}

Var tanh(const Var& a) {
  std::vector<double> out(a.value());
  for (auto& v : out) v = std::tanh(v);
  auto n = make_node(std::move(out), a.rows(), {a.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    n->backprop = [self, pa] {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i) {
        const double y = self->val[i];
        pa->grad[i] += (1.0 - y * y) * self->grad[i];
      }
    };
  }
  return Var(n);
}

Var sqrt(const Var& a) {
  std::vector<double> out(a.value());
  for (auto& v : out) v = std::sqrt(v);
  auto n = make_node(std::move(out), a.rows(), {a.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    n->backprop = [self, pa] {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i) {
        const double y = self->val[i];
        if (y > 0.0) pa->grad[i] += self->grad[i] / (2.0 * y);
      }
    };
  }
  return Var(n);
}

Var square(const Var& a) {
  std::vector<double> out(a.value());
  for (auto& v : out) v *= v;
  auto n = make_node(std::move(out), a.rows(), {a.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    n->backprop = [self, pa] {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        pa->grad[i] += 2.0 * pa->val[i] * self->grad[i];
    };
  }
  return Var(n);
}

Var abs(const Var& a) {
  std::vector<double> out(a.value());
  for (auto& v : out) v = std::fabs(v);
  auto n = make_node(std::move(out), a.rows(), {a.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    n->backprop = [self, pa] {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i) {
        const double x = pa->val[i];
        const double s = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
        pa->grad[i] += s * self->grad[i];
      }
    };
  }
  return Var(n);
}

Var log_shift(const Var& a, double shift) {
  if (shift <= 0.0) throw ContractError("ad: log_shift requires shift > 0");
  std::vector<double> out(a.value());
  for (auto& v : out) v = std::log(v + shift);
  auto n = make_node(std::move(out), a.rows(), {a.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    n->backprop = [self, pa, shift] {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        pa->grad[i] += self->grad[i] / (pa->val[i] + shift);
    };
  }
  return Var(n);
}

Var atan2(const Var& y, const Var& x) {
  check_same_shape(y, x, "atan2");
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::atan2(y.value()[i], x.value()[i]);
  auto n = make_node(std::move(out), y.rows(), {y.node(), x.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* py = y.node().get();
    Node* px = x.node().get();
    n->backprop = [self, py, px] {
      for (std::size_t i = 0; i < self->grad.size(); ++i) {
        const double yv = py->val[i];
        const double xv = px->val[i];
        const double r2 = yv * yv + xv * xv;
        if (r2 == 0.0) continue;
        const double g = self->grad[i] / r2;
        if (py->needs_grad) {
          py->ensure_grad();
          py->grad[i] += xv * g;
        }
        if (px->needs_grad) {
          px->ensure_grad();
          px->grad[i] -= yv * g;
        }
      }
    };
  }
  return Var(n);
}

Var wrap_angle(const Var& a) {
  std::vector<double> out(a.value());
  for (auto& v : out) v = std::remainder(v, kTwoPi);
  auto n = make_node(std::move(out), a.rows(), {a.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    n->backprop = [self, pa] {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        pa->grad[i] += self->grad[i];
    };
  }
  return Var(n);
}

Var magnitude(const Var& re, const Var& im) {
  check_same_shape(re, im, "magnitude");
  std::vector<double> out(re.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::hypot(re.value()[i], im.value()[i]);
  auto n = make_node(std::move(out), re.rows(), {re.node(), im.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* pre = re.node().get();
    Node* pim = im.node().get();
    n->backprop = [self, pre, pim] {
      for (std::size_t i = 0; i < self->grad.size(); ++i) {
        const double m = self->val[i];
        if (m == 0.0) continue;
        const double g = self->grad[i] / m;
        if (pre->needs_grad) {
          pre->ensure_grad();
          pre->grad[i] += pre->val[i] * g;
        }
        if (pim->needs_grad) {
          pim->ensure_grad();
          pim->grad[i] += pim->val[i] * g;
        }
      }
    };
  }
  return Var(n);
}

Var mul_const(const Var& a, std::span<const double> w) {
  if (static_cast<std::int64_t>(w.size()) != a.size())
    throw ContractError("ad: mul_const weight size mismatch");
  std::vector<double> out(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= w[i];
  auto n = make_node(std::move(out), a.rows(), {a.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    std::vector<double> wc(w.begin(), w.end());
    n->backprop = [self, pa, wc = std::move(wc)] {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        pa->grad[i] += wc[i] * self->grad[i];
    };
  }
  return Var(n);
}

Var mul_scalar_var(const Var& x, const Var& s) {
  if (s.size() != 1) throw ContractError("ad: mul_scalar_var needs scalar s");
  const double sv = s.value()[0];
  std::vector<double> out(x.value());
  for (auto& v : out) v *= sv;
  auto n = make_node(std::move(out), x.rows(), {x.node(), s.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* px = x.node().get();
    Node* ps = s.node().get();
    n->backprop = [self, px, ps] {
      const double sv2 = ps->val[0];
      if (px->needs_grad) {
        px->ensure_grad();
        for (std::size_t i = 0; i < self->grad.size(); ++i)
          px->grad[i] += sv2 * self->grad[i];
      }
      if (ps->needs_grad) {
        ps->ensure_grad();
        double acc = 0.0;
        for (std::size_t i = 0; i < self->grad.size(); ++i)
          acc += px->val[i] * self->grad[i];
        ps->grad[0] += acc;
      }
    };
  }
  return Var(n);
}

Var sum(const Var& a) {
  double acc = 0.0;
  for (double v : a.value()) acc += v;
  auto n = make_node({acc}, 1, {a.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    n->backprop = [self, pa] {
      pa->ensure_grad();
      const double g = self->grad[0];
      for (auto& gv : pa->grad) gv += g;
    };
  }
  return Var(n);
}

Var mean(const Var& a) {
  if (a.size() == 0) throw ContractError("ad: mean of empty Var");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var slice(const Var& a, std::int64_t begin, std::int64_t end) {
  if (begin < 0 || end > a.size() || begin >= end)
    throw ContractError("ad: bad slice bounds");
  std::vector<double> out(a.value().begin() + begin, a.value().begin() + end);
  auto n = make_node(std::move(out), 1, {a.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* pa = a.node().get();
    n->backprop = [self, pa, begin] {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        pa->grad[begin + static_cast<std::int64_t>(i)] += self->grad[i];
    };
  }
  return Var(n);
}

Var matvec(const Var& m, const Var& x) {
  const std::int64_t r = m.rows();
  const std::int64_t c = m.cols();
  if (x.size() != c) throw ContractError("ad: matvec dimension mismatch");
  std::vector<double> out(r, 0.0);
  for (std::int64_t i = 0; i < r; ++i) {
    double acc = 0.0;
    const double* row = m.value().data() + i * c;
    for (std::int64_t j = 0; j < c; ++j) acc += row[j] * x.value()[j];
    out[i] = acc;
  }
  auto n = make_node(std::move(out), 1, {m.node(), x.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* pm = m.node().get();
    Node* px = x.node().get();
    n->backprop = [self, pm, px, r, c] {
      if (pm->needs_grad) {
        pm->ensure_grad();
        for (std::int64_t i = 0; i < r; ++i) {
          const double g = self->grad[i];
          double* row = pm->grad.data() + i * c;
          for (std::int64_t j = 0; j < c; ++j) row[j] += g * px->val[j];
        }
      }
      if (px->needs_grad) {
        px->ensure_grad();
        for (std::int64_t i = 0; i < r; ++i) {
          const double g = self->grad[i];
          const double* row = pm->val.data() + i * c;
          for (std::int64_t j = 0; j < c; ++j) px->grad[j] += g * row[j];
        }
      }
    };
  }
  return Var(n);
}

Var matmul_rt(const Var& x, const Var& m) {
  const std::int64_t f = x.rows();
  const std::int64_t b = x.cols();
  const std::int64_t c = m.rows();
  if (m.cols() != b) throw ContractError("ad: matmul_rt dimension mismatch");
  std::vector<double> out(static_cast<std::size_t>(f * c), 0.0);
  for (std::int64_t i = 0; i < f; ++i) {
    const double* xi = x.value().data() + i * b;
    double* yi = out.data() + i * c;
    for (std::int64_t j = 0; j < c; ++j) {
      const double* mj = m.value().data() + j * b;
      double acc = 0.0;
      for (std::int64_t k = 0; k < b; ++k) acc += xi[k] * mj[k];
      yi[j] = acc;
    }
  }
  auto n = make_node(std::move(out), f, {x.node(), m.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* px = x.node().get();
    Node* pm = m.node().get();
    n->backprop = [self, px, pm, f, b, c] {
      if (px->needs_grad) {
        px->ensure_grad();
        for (std::int64_t i = 0; i < f; ++i) {
          const double* gi = self->grad.data() + i * c;
          double* dxi = px->grad.data() + i * b;
          for (std::int64_t j = 0; j < c; ++j) {
            const double g = gi[j];
            if (g == 0.0) continue;
            const double* mj = pm->val.data() + j * b;
            for (std::int64_t k = 0; k < b; ++k) dxi[k] += g * mj[k];
          }
        }
      }
      if (pm->needs_grad) {
        pm->ensure_grad();
        for (std::int64_t i = 0; i < f; ++i) {
          const double* gi = self->grad.data() + i * c;
          const double* xi = px->val.data() + i * b;
          for (std::int64_t j = 0; j < c; ++j) {
            const double g = gi[j];
            if (g == 0.0) continue;
            double* dmj = pm->grad.data() + j * b;
            for (std::int64_t k = 0; k < b; ++k) dmj[k] += g * xi[k];
          }
        }
      }
    };
  }
  return Var(n);
}

Var conv1d(const Var& x, const Var& w, const Var& b, int kernel) {
  if (kernel <= 0 || kernel % 2 == 0)
    throw ContractError("ad: conv1d requires odd positive kernel");
  const std::int64_t c_in = x.rows();
  const std::int64_t t = x.cols();
  const std::int64_t c_out = w.rows();
  if (w.cols() != c_in * kernel)
    throw ContractError("ad: conv1d weight shape mismatch");
  if (b.defined() && b.size() != c_out)
    throw ContractError("ad: conv1d bias shape mismatch");
  const std::int64_t pad = kernel / 2;

  std::vector<double> out(static_cast<std::size_t>(c_out * t), 0.0);
  for (std::int64_t o = 0; o < c_out; ++o) {
    double* yo = out.data() + o * t;
    if (b.defined()) {
      const double bo = b.value()[o];
      for (std::int64_t s = 0; s < t; ++s) yo[s] = bo;
    }
    for (std::int64_t i = 0; i < c_in; ++i) {
      const double* xi = x.value().data() + i * t;
      const double* wrow = w.value().data() + o * (c_in * kernel) + i * kernel;
      for (int k = 0; k < kernel; ++k) {
        const double wk = wrow[k];
        if (wk == 0.0) continue;
        const std::int64_t off = k - pad;
        const std::int64_t lo = std::max<std::int64_t>(0, -off);
        const std::int64_t hi = std::min<std::int64_t>(t, t - off);
        for (std::int64_t s = lo; s < hi; ++s) yo[s] += wk * xi[s + off];
      }
    }
  }

  std::vector<NodePtr> parents{x.node(), w.node()};
  if (b.defined()) parents.push_back(b.node());
  auto n = make_node(std::move(out), c_out, parents);
  if (n->needs_grad) {
    Node* self = n.get();
    Node* px = x.node().get();
    Node* pw = w.node().get();
    Node* pb = b.defined() ? b.node().get() : nullptr;
    n->backprop = [self, px, pw, pb, c_in, c_out, t, kernel, pad] {
      if (pb && pb->needs_grad) {
        pb->ensure_grad();
        for (std::int64_t o = 0; o < c_out; ++o) {
          const double* go = self->grad.data() + o * t;
          double acc = 0.0;
          for (std::int64_t s = 0; s < t; ++s) acc += go[s];
          pb->grad[o] += acc;
        }
      }
      if (pw->needs_grad) {
        pw->ensure_grad();
        for (std::int64_t o = 0; o < c_out; ++o) {
          const double* go = self->grad.data() + o * t;
          for (std::int64_t i = 0; i < c_in; ++i) {
            const double* xi = px->val.data() + i * t;
            double* dwrow = pw->grad.data() + o * (c_in * kernel) + i * kernel;
            for (int k = 0; k < kernel; ++k) {
              const std::int64_t off = k - pad;
              const std::int64_t lo = std::max<std::int64_t>(0, -off);
              const std::int64_t hi = std::min<std::int64_t>(t, t - off);
              double acc = 0.0;
              for (std::int64_t s = lo; s < hi; ++s) acc += go[s] * xi[s + off];
              dwrow[k] += acc;
            }
          }
        }
      }
      if (px->needs_grad) {
        px->ensure_grad();
        for (std::int64_t o = 0; o < c_out; ++o) {
          const double* go = self->grad.data() + o * t;
          for (std::int64_t i = 0; i < c_in; ++i) {
            double* dxi = px->grad.data() + i * t;
            const double* wrow =
                pw->val.data() + o * (c_in * kernel) + i * kernel;
            for (int k = 0; k < kernel; ++k) {
              const double wk = wrow[k];
              if (wk == 0.0) continue;
              const std::int64_t off = k - pad;
              const std::int64_t lo = std::max<std::int64_t>(0, -off);
              const std::int64_t hi = std::min<std::int64_t>(t, t - off);
              for (std::int64_t s = lo; s < hi; ++s)
                dxi[s + off] += wk * go[s];
            }
          }
        }
      }
    };
  }
  return Var(n);
}

Var upsample_repeat(const Var& x, int factor) {
  if (factor <= 0) throw ContractError("ad: upsample factor must be positive");
  const std::int64_t c = x.rows();
  const std::int64_t t = x.cols();
  std::vector<double> out(static_cast<std::size_t>(c * t * factor));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const double* xi = x.value().data() + ch * t;
    double* yo = out.data() + ch * t * factor;
    for (std::int64_t s = 0; s < t; ++s)
      for (int j = 0; j < factor; ++j) yo[s * factor + j] = xi[s];
  }
  auto n = make_node(std::move(out), c, {x.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* px = x.node().get();
    n->backprop = [self, px, c, t, factor] {
      px->ensure_grad();
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double* go = self->grad.data() + ch * t * factor;
        double* dxi = px->grad.data() + ch * t;
        for (std::int64_t s = 0; s < t; ++s) {
          double acc = 0.0;
          for (int j = 0; j < factor; ++j) acc += go[s * factor + j];
          dxi[s] += acc;
        }
      }
    };
  }
  return Var(n);
}

Var channel_scale(const Var& x, const Var& s) {
  const std::int64_t c = x.rows();
  const std::int64_t t = x.cols();
  if (s.size() != c) throw ContractError("ad: channel_scale size mismatch");
  std::vector<double> out(x.value());
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const double sc = s.value()[ch];
    double* yo = out.data() + ch * t;
    for (std::int64_t j = 0; j < t; ++j) yo[j] *= sc;
  }
  auto n = make_node(std::move(out), c, {x.node(), s.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* px = x.node().get();
    Node* ps = s.node().get();
    n->backprop = [self, px, ps, c, t] {
      if (px->needs_grad) {
        px->ensure_grad();
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const double sc = ps->val[ch];
          const double* go = self->grad.data() + ch * t;
          double* dxi = px->grad.data() + ch * t;
          for (std::int64_t j = 0; j < t; ++j) dxi[j] += sc * go[j];
        }
      }
      if (ps->needs_grad) {
        ps->ensure_grad();
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const double* go = self->grad.data() + ch * t;
          const double* xi = px->val.data() + ch * t;
          double acc = 0.0;
          for (std::int64_t j = 0; j < t; ++j) acc += go[j] * xi[j];
          ps->grad[ch] += acc;
        }
      }
    };
  }
  return Var(n);
}

Var frame_signal(const Var& x, std::span<const double> window, int hop) {
  const std::int64_t t = x.size();
  const std::int64_t w = static_cast<std::int64_t>(window.size());
  if (x.rows() != 1) throw ContractError("ad: frame_signal expects a vector");
  if (w % 2 != 0) throw ContractError("ad: window length must be even");
  if (hop <= 0) throw ContractError("ad: hop must be positive");
  if (t < w)
    throw ContractError("ad: signal shorter than the analysis window");
  const std::int64_t pad = w / 2;
  const std::int64_t frames = t / hop + 1;

  std::vector<double> out(static_cast<std::size_t>(frames * w));
  for (std::int64_t f = 0; f < frames; ++f) {
    double* row = out.data() + f * w;
    const std::int64_t base = f * hop - pad;
    for (std::int64_t j = 0; j < w; ++j)
      row[j] = window[j] * x.value()[reflect_index(base + j, t)];
  }
  auto n = make_node(std::move(out), frames, {x.node()});
  if (n->needs_grad) {
    Node* self = n.get();
    Node* px = x.node().get();
    std::vector<double> wc(window.begin(), window.end());
    n->backprop = [self, px, wc = std::move(wc), t, w, pad, hop] {
      px->ensure_grad();
      const std::int64_t frames2 = static_cast<std::int64_t>(self->rows);
      for (std::int64_t f = 0; f < frames2; ++f) {
        const double* grow = self->grad.data() + f * w;
        const std::int64_t base = f * hop - pad;
        for (std::int64_t j = 0; j < w; ++j)
          px->grad[reflect_index(base + j, t)] += wc[j] * grow[j];
      }
    };
  }
  return Var(n);
}

void backward(const Var& root) {
  if (!root.defined() || root.size() != 1)
    throw ContractError("ad: backward requires a defined scalar root");
  if (!root.needs_grad()) return;

  // Iterative post-order DFS; reverse post-order is a valid topological
  // order for gradient propagation (children before parents).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* parent = node->parents[idx++].get();
      if (parent && parent->needs_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad();
  root.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    node->ensure_grad();
    if (node->backprop) node->backprop();
  }
}

}  // namespace diffvoc::ad
