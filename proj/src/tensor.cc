#include "lava/tensor.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "lava/position.h"

namespace lava {

namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<Tensor::Node>;

NodePtr make_node(Shape shape, std::vector<double> data) {
  auto node = std::make_shared<Tensor::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return node;
}

// Wires a freshly computed value into the tape when any input needs grad.
Tensor record(Shape shape, std::vector<double> data,
              std::initializer_list<const Tensor*> inputs,
              std::function<void(Tensor::Node&)> backward_fn) {
  auto node = make_node(std::move(shape), std::move(data));
  if (g_grad_enabled) {
    bool needs = false;
    for (const Tensor* t : inputs) needs = needs || t->requires_grad();
    if (needs) {
      node->requires_grad = true;
      for (const Tensor* t : inputs) node->parents.push_back(t->node_ptr());
      node->backward = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

Tensor record_many(Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs,
                   std::function<void(Tensor::Node&)> backward_fn) {
  auto node = make_node(std::move(shape), std::move(data));
  if (g_grad_enabled) {
    bool needs = false;
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
    if (needs) {
      node->requires_grad = true;
      for (const Tensor& t : inputs) node->parents.push_back(t.node_ptr());
      node->backward = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

void require_2d(const Tensor& t, const char* op) {
  if (!t.defined() || t.ndim() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " +
                         (t.defined() ? shape_str(t.shape()) : "undefined"));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// C[m×n] (+)= A[m×k] · B[k×n]. Every output element accumulates over k in
// ascending order regardless of m, so a row computed alone is bitwise equal
// to the same row computed inside a larger product.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[k×n] += Aᵀ · B for A[m×k], B[m×n].
void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

std::vector<double> transposed(const double* src, std::size_t r,
                               std::size_t c) {
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = src[i * c + j];
  return out;
}

// C[m×n] += A[m×k] · B[n×k]ᵀ.
void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  const std::vector<double> bt = transposed(b, n, k);
  gemm_nn(a, bt.data(), c, m, k, n);
}

template <class F>
Tensor unary(const Tensor& x, F&& f, std::function<void(Tensor::Node&)> bw) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return record(x.shape(), std::move(out), {&x}, std::move(bw));
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  auto node = make_node(std::move(shape), std::vector<double>(n, value));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("Tensor::from: shape " + shape_str(shape) +
                         " does not hold " + std::to_string(values.size()) +
                         " values");
  }
  auto node = make_node(std::move(shape), std::move(values));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }
std::size_t Tensor::rows() const { return dim(0); }
std::size_t Tensor::cols() const { return dim(1); }

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }
std::vector<double> Tensor::to_vector() const { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->data[0];
}

double Tensor::at(std::size_t i) const { return node_->data.at(i); }

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->data.at(r * cols() + c);
}

bool Tensor::requires_grad() const {
  return node_ != nullptr && node_->requires_grad;
}

void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() {
  node_->grad_buffer();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), node_->data); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  Tensor::Node* an = a.node();
  Tensor::Node* bn = b.node();
  return record({m, n}, std::move(out), {&a, &b},
                [an, bn, m, k, n](Tensor::Node& self) {
                  if (an->requires_grad)
                    gemm_nt(self.grad.data(), bn->data.data(), an->grad_buffer(),
                            m, n, k);
                  if (bn->requires_grad)
                    gemm_tn(an->data.data(), self.grad.data(), bn->grad_buffer(),
                            m, k, n);
                });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions differ " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                         "^T");
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
  Tensor::Node* an = a.node();
  Tensor::Node* bn = b.node();
  return record({m, n}, std::move(out), {&a, &b},
                [an, bn, m, k, n](Tensor::Node& self) {
                  // dA = dC · B ; dB = dCᵀ · A
                  if (an->requires_grad)
                    gemm_nn(self.grad.data(), bn->data.data(), an->grad_buffer(),
                            m, n, k);
                  if (bn->requires_grad)
                    gemm_tn(self.grad.data(), an->data.data(), bn->grad_buffer(),
                            m, n, k);
                });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  Tensor::Node* an = a.node();
  return record({c, r}, transposed(a.data().data(), r, c), {&a},
                [an, r, c](Tensor::Node& self) {
                  double* g = an->grad_buffer();
                  for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                      g[i * c + j] += self.grad[j * r + i];
                });
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  Tensor::Node* an = a.node();
  Tensor::Node* bn = b.node();
  return record(a.shape(), std::move(out), {&a, &b}, [an, bn](Tensor::Node& self) {
    for (Tensor::Node* p : {an, bn}) {
      if (!p->requires_grad) continue;
      double* g = p->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  Tensor::Node* an = a.node();
  Tensor::Node* bn = b.node();
  return record(a.shape(), std::move(out), {&a, &b}, [an, bn](Tensor::Node& self) {
    if (an->requires_grad) {
      double* g = an->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      double* g = bn->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  Tensor::Node* an = a.node();
  Tensor::Node* bn = b.node();
  return record(a.shape(), std::move(out), {&a, &b}, [an, bn](Tensor::Node& self) {
    if (an->requires_grad) {
      double* g = an->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[i] += self.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      double* g = bn->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[i] += self.grad[i] * an->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  Tensor::Node* an = a.node();
  return unary(a, [s](double v) { return v * s; }, [an, s](Tensor::Node& self) {
    double* g = an->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += s * self.grad[i];
  });
}

Tensor add_row(const Tensor& x, const Tensor& b) {
  require_2d(x, "add_row");
  const std::size_t n = x.rows(), d = x.cols();
  if (b.numel() != d) {
    throw DimensionError("add_row: bias " + shape_str(b.shape()) +
                         " does not match width of " + shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto bias = b.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += bias[j];
  Tensor::Node* xn = x.node();
  Tensor::Node* bn = b.node();
  return record(x.shape(), std::move(out), {&x, &b},
                [xn, bn, n, d](Tensor::Node& self) {
                  if (xn->requires_grad) {
                    double* g = xn->grad_buffer();
                    for (std::size_t i = 0; i < n * d; ++i) g[i] += self.grad[i];
                  }
                  if (bn->requires_grad) {
                    double* g = bn->grad_buffer();
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t j = 0; j < d; ++j)
                        g[j] += self.grad[i * d + j];
                  }
                });
}

Tensor relu(const Tensor& x) {
  Tensor::Node* xn = x.node();
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [xn](Tensor::Node& self) {
                 double* g = xn->grad_buffer();
                 for (std::size_t i = 0; i < self.grad.size(); ++i)
                   if (xn->data[i] > 0.0) g[i] += self.grad[i];
               });
}

namespace {
double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& x) {
  Tensor::Node* xn = x.node();
  auto out = unary(x, stable_sigmoid, nullptr);
  if (!out.requires_grad()) return out;
  Tensor::Node* on = out.node();
  on->backward = [xn, on](Tensor::Node& self) {
    double* g = xn->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double s = on->data[i];
      g[i] += self.grad[i] * s * (1.0 - s);
    }
  };
  return out;
}

Tensor log_sigmoid(const Tensor& x) {
  Tensor::Node* xn = x.node();
  // log σ(v) = −softplus(−v)
  return unary(
      x,
      [](double v) {
        return v >= 0.0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v));
      },
      [xn](Tensor::Node& self) {
        double* g = xn->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          g[i] += self.grad[i] * (1.0 - stable_sigmoid(xn->data[i]));
      });
}

Tensor square(const Tensor& x) {
  Tensor::Node* xn = x.node();
  return unary(x, [](double v) { return v * v; }, [xn](Tensor::Node& self) {
    double* g = xn->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      g[i] += 2.0 * xn->data[i] * self.grad[i];
  });
}

// ---- normalization ----------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) +
                         " invalid for " + shape_str(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t q = 0; q < inner; ++q) {
      const std::size_t base = o * len * inner + q;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < len; ++t) mx = std::max(mx, in[base + t * inner]);
      double total = 0.0;
      for (std::size_t t = 0; t < len; ++t) {
        const double e = std::exp(in[base + t * inner] - mx);
        out[base + t * inner] = e;
        total += e;
      }
      for (std::size_t t = 0; t < len; ++t) out[base + t * inner] /= total;
    }
  }
  Tensor::Node* xn = x.node();
  auto result = record(shape, std::move(out), {&x}, nullptr);
  if (!result.requires_grad()) return result;
  Tensor::Node* on = result.node();
  on->backward = [xn, on, outer, inner, len](Tensor::Node& self) {
    double* g = xn->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t q = 0; q < inner; ++q) {
        const std::size_t base = o * len * inner + q;
        double dot = 0.0;
        for (std::size_t t = 0; t < len; ++t)
          dot += self.grad[base + t * inner] * on->data[base + t * inner];
        for (std::size_t t = 0; t < len; ++t) {
          const std::size_t idx = base + t * inner;
          g[idx] += on->data[idx] * (self.grad[idx] - dot);
        }
      }
    }
  };
  return result;
}

Tensor masked_softmax(const Tensor& x, const std::vector<std::uint8_t>& allow) {
  require_2d(x, "masked_softmax");
  const std::size_t n = x.rows(), c = x.cols();
  if (allow.size() != n * c) {
    throw DimensionError("masked_softmax: mask size " +
                         std::to_string(allow.size()) + " vs " +
                         shape_str(x.shape()));
  }
  const auto in = x.data();
  std::vector<double> out(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (allow[i * c + j]) mx = std::max(mx, in[i * c + j]);
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw ContractError("masked_softmax: row " + std::to_string(i) +
                          " has no allowed entries");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (!allow[i * c + j]) continue;
      const double e = std::exp(in[i * c + j] - mx);
      out[i * c + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= total;
  }
  Tensor::Node* xn = x.node();
  auto result = record(x.shape(), std::move(out), {&x}, nullptr);
  if (!result.requires_grad()) return result;
  Tensor::Node* on = result.node();
  on->backward = [xn, on, n, c](Tensor::Node& self) {
    double* g = xn->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j)
        dot += self.grad[i * c + j] * on->data[i * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t idx = i * c + j;
        g[idx] += on->data[idx] * (self.grad[idx] - dot);
      }
    }
  };
  return result;
}

Tensor log_softmax(const Tensor& x) {
  require_2d(x, "log_softmax");
  const std::size_t n = x.rows(), c = x.cols();
  const auto in = x.data();
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, in[i * c + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(in[i * c + j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = in[i * c + j] - lse;
  }
  Tensor::Node* xn = x.node();
  auto result = record(x.shape(), std::move(out), {&x}, nullptr);
  if (!result.requires_grad()) return result;
  Tensor::Node* on = result.node();
  on->backward = [xn, on, n, c](Tensor::Node& self) {
    double* g = xn->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < c; ++j) total += self.grad[i * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t idx = i * c + j;
        g[idx] += self.grad[idx] - std::exp(on->data[idx]) * total;
      }
    }
  };
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  require_2d(x, "layer_norm");
  const std::size_t n = x.rows(), d = x.cols();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: affine parameters must have width " +
                         std::to_string(d));
  }
  const auto in = x.data();
  const auto gv = gain.data(), bv = bias.data();
  std::vector<double> out(n * d), xhat(n * d), inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += in[i * d + j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = in[i * d + j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (in[i * d + j] - mean) * inv_std[i];
      xhat[i * d + j] = h;
      out[i * d + j] = h * gv[j] + bv[j];
    }
  }
  Tensor::Node* xn = x.node();
  Tensor::Node* gn = gain.node();
  Tensor::Node* bn = bias.node();
  return record(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [xn, gn, bn, n, d, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tensor::Node& self) {
        if (gn->requires_grad) {
          double* g = gn->grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
              g[j] += self.grad[i * d + j] * xhat[i * d + j];
        }
        if (bn->requires_grad) {
          double* g = bn->grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
        }
        if (xn->requires_grad) {
          double* g = xn->grad_buffer();
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t i = 0; i < n; ++i) {
            double sum_dh = 0.0, sum_dh_h = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = self.grad[i * d + j] * gn->data[j];
              sum_dh += dh;
              sum_dh_h += dh * xhat[i * d + j];
            }
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = self.grad[i * d + j] * gn->data[j];
              g[i * d + j] += inv_std[i] *
                              (dh - inv_d * sum_dh - xhat[i * d + j] * inv_d * sum_dh_h);
            }
          }
        }
      });
}

// ---- shape and indexing -----------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " +
                         shape_str(shape));
  }
  Tensor::Node* xn = x.node();
  return record(std::move(shape), x.to_vector(), {&x}, [xn](Tensor::Node& self) {
    double* g = xn->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::size_t width = 0;
  std::vector<std::size_t> offsets;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != n) throw DimensionError("concat_cols: row counts differ");
    offsets.push_back(width);
    width += p.cols();
  }
  std::vector<double> out(n * width);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].data();
    const std::size_t c = parts[k].cols();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(src.begin() + i * c, c, out.begin() + i * width + offsets[k]);
  }
  std::vector<Tensor::Node*> nodes;
  for (const Tensor& p : parts) nodes.push_back(p.node());
  return record_many({n, width}, std::move(out), parts,
                     [nodes, offsets, n, width](Tensor::Node& self) {
                       for (std::size_t k = 0; k < nodes.size(); ++k) {
                         Tensor::Node* p = nodes[k];
                         if (!p->requires_grad) continue;
                         const std::size_t c = p->shape[1];
                         double* g = p->grad_buffer();
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < c; ++j)
                             g[i * c + j] += self.grad[i * width + offsets[k] + j];
                       }
                     });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t n = 0;
  std::vector<std::size_t> offsets;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_rows");
    if (p.cols() != c) throw DimensionError("concat_rows: widths differ");
    offsets.push_back(n);
    n += p.rows();
  }
  std::vector<double> out;
  out.reserve(n * c);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<Tensor::Node*> nodes;
  for (const Tensor& p : parts) nodes.push_back(p.node());
  return record_many({n, c}, std::move(out), parts,
                     [nodes, offsets, c](Tensor::Node& self) {
                       for (std::size_t k = 0; k < nodes.size(); ++k) {
                         Tensor::Node* p = nodes[k];
                         if (!p->requires_grad) continue;
                         double* g = p->grad_buffer();
                         const std::size_t len = p->data.size();
                         const double* src = self.grad.data() + offsets[k] * c;
                         for (std::size_t i = 0; i < len; ++i) g[i] += src[i];
                       }
                     });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
  require_2d(x, "slice_cols");
  const std::size_t n = x.rows(), c = x.cols();
  if (start + len > c) throw DimensionError("slice_cols: range past width");
  std::vector<double> out(n * len);
  const auto in = x.data();
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(in.begin() + i * c + start, len, out.begin() + i * len);
  Tensor::Node* xn = x.node();
  return record({n, len}, std::move(out), {&x},
                [xn, n, c, start, len](Tensor::Node& self) {
                  double* g = xn->grad_buffer();
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < len; ++j)
                      g[i * c + start + j] += self.grad[i * len + j];
                });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t len) {
  require_2d(x, "slice_rows");
  const std::size_t c = x.cols();
  if (start + len > x.rows()) throw DimensionError("slice_rows: range past rows");
  const auto in = x.data();
  std::vector<double> out(in.begin() + start * c, in.begin() + (start + len) * c);
  Tensor::Node* xn = x.node();
  return record({len, c}, std::move(out), {&x}, [xn, start, c](Tensor::Node& self) {
    double* g = xn->grad_buffer() + start * c;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  require_2d(table, "gather_rows");
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<double> out(ids.size() * d);
  const auto in = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw DimensionError("gather_rows: index " + std::to_string(ids[i]) +
                           " outside table of " + std::to_string(v) + " rows");
    }
    std::copy_n(in.begin() + ids[i] * d, d, out.begin() + i * d);
  }
  Tensor::Node* tn = table.node();
  std::vector<int> idx(ids.begin(), ids.end());
  return record({ids.size(), d}, std::move(out), {&table},
                [tn, idx = std::move(idx), d](Tensor::Node& self) {
                  double* g = tn->grad_buffer();
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::size_t j = 0; j < d; ++j)
                      g[idx[i] * d + j] += self.grad[i * d + j];
                });
}

Tensor gather_elems(const Tensor& x, std::span<const int> idx) {
  std::vector<double> out(idx.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= in.size()) {
      throw DimensionError("gather_elems: index out of range");
    }
    out[i] = in[idx[i]];
  }
  Tensor::Node* xn = x.node();
  std::vector<int> copy(idx.begin(), idx.end());
  return record({idx.size()}, std::move(out), {&x},
                [xn, copy = std::move(copy)](Tensor::Node& self) {
                  double* g = xn->grad_buffer();
                  for (std::size_t i = 0; i < copy.size(); ++i)
                    g[copy[i]] += self.grad[i];
                });
}

Tensor relative_scores(const Tensor& qr, std::size_t n_keys, int k) {
  require_2d(qr, "relative_scores");
  const std::size_t n = qr.rows(), buckets = qr.cols();
  if (buckets != static_cast<std::size_t>(2 * k + 1)) {
    throw DimensionError("relative_scores: expected 2k+1 bucket columns");
  }
  std::vector<int> bucket(n * n_keys);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n_keys; ++j)
      bucket[i * n_keys + j] =
          relative_offset(static_cast<int>(i), static_cast<int>(j), k);
  std::vector<double> out(n * n_keys);
  const auto in = qr.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n_keys; ++j)
      out[i * n_keys + j] = in[i * buckets + bucket[i * n_keys + j]];
  Tensor::Node* qn = qr.node();
  return record({n, n_keys}, std::move(out), {&qr},
                [qn, bucket = std::move(bucket), n, n_keys, buckets](Tensor::Node& self) {
                  double* g = qn->grad_buffer();
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n_keys; ++j)
                      g[i * buckets + bucket[i * n_keys + j]] +=
                          self.grad[i * n_keys + j];
                });
}

// ---- reductions ---------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor::Node* xn = x.node();
  return record({}, {total}, {&x}, [xn](Tensor::Node& self) {
    double* g = xn->grad_buffer();
    const double s = self.grad[0];
    for (std::size_t i = 0; i < xn->data.size(); ++i) g[i] += s;
  });
}

Tensor sum_rows(const Tensor& x) {
  require_2d(x, "sum_rows");
  const std::size_t n = x.rows(), c = x.cols();
  std::vector<double> out(c, 0.0);
  const auto in = x.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += in[i * c + j];
  Tensor::Node* xn = x.node();
  return record({c}, std::move(out), {&x}, [xn, n, c](Tensor::Node& self) {
    double* g = xn->grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j];
  });
}

Tensor max_rows(const Tensor& x, const std::vector<std::uint8_t>& mask) {
  require_2d(x, "max_rows");
  const std::size_t n = x.rows(), c = x.cols();
  if (mask.size() != n) throw DimensionError("max_rows: mask length mismatch");
  std::vector<double> out(c, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> arg(c, n);
  const auto in = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    for (std::size_t j = 0; j < c; ++j) {
      if (in[i * c + j] > out[j] || arg[j] == n) {
        out[j] = in[i * c + j];
        arg[j] = i;
      }
    }
  }
  if (c > 0 && arg[0] == n) throw ContractError("max_rows: every row is masked");
  Tensor::Node* xn = x.node();
  return record({c}, std::move(out), {&x}, [xn, arg = std::move(arg), c](Tensor::Node& self) {
    double* g = xn->grad_buffer();
    for (std::size_t j = 0; j < c; ++j) g[arg[j] * c + j] += self.grad[j];
  });
}

// ---- losses -------------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     double smoothing, std::span<const double> row_weights) {
  require_2d(logits, "cross_entropy");
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(n) + " rows");
  }
  if (!row_weights.empty() && row_weights.size() != n) {
    throw DimensionError("cross_entropy: row weight count mismatch");
  }
  const auto in = logits.data();
  std::vector<double> probs(n * v);
  std::vector<double> weights(n, 1.0);
  if (!row_weights.empty()) weights.assign(row_weights.begin(), row_weights.end());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) {
      throw DimensionError("cross_entropy: target out of range");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, in[i * v + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      const double e = std::exp(in[i * v + j] - mx);
      probs[i * v + j] = e;
      z += e;
    }
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= z;
    if (weights[i] == 0.0) continue;
    const double nll = lse - in[i * v + targets[i]];
    double mean_nll = 0.0;
    if (smoothing > 0.0) {
      for (std::size_t j = 0; j < v; ++j) mean_nll += lse - in[i * v + j];
      mean_nll /= static_cast<double>(v);
    }
    total += weights[i] * ((1.0 - smoothing) * nll + smoothing * mean_nll);
  }
  Tensor::Node* ln = logits.node();
  std::vector<int> t(targets.begin(), targets.end());
  return record({}, {total}, {&logits},
                [ln, probs = std::move(probs), weights = std::move(weights),
                 t = std::move(t), n, v, smoothing](Tensor::Node& self) {
                  double* g = ln->grad_buffer();
                  const double s = self.grad[0];
                  const double uniform = smoothing / static_cast<double>(v);
                  for (std::size_t i = 0; i < n; ++i) {
                    if (weights[i] == 0.0) continue;
                    const double w = s * weights[i];
                    for (std::size_t j = 0; j < v; ++j) {
                      double q = uniform;
                      if (static_cast<int>(j) == t[i]) q += 1.0 - smoothing;
                      g[i * v + j] += w * (probs[i * v + j] - q);
                    }
                  }
                });
}

// ---- regularization -----------------------------------------------------------

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ContractError("dropout: p must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  const double scale_kept = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = keep(rng) ? scale_kept : 0.0;
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * mask[i];
  Tensor::Node* xn = x.node();
  return record(x.shape(), std::move(out), {&x},
                [xn, mask = std::move(mask)](Tensor::Node& self) {
                  double* g = xn->grad_buffer();
                  for (std::size_t i = 0; i < mask.size(); ++i)
                    g[i] += self.grad[i] * mask[i];
                });
}

// ---- autodiff -----------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  }
  if (!std::isfinite(loss.item())) {
    throw NumericError("backward: non-finite loss " + std::to_string(loss.item()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order of the tape.
  std::vector<Tensor::Node*> order;
  std::unordered_set<Tensor::Node*> seen;
  std::vector<std::pair<Tensor::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Tensor::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second)
        stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor::Node* node = *it;
    if (!node->backward) continue;
    node->grad_buffer();
    node->backward(*node);
  }
  // Interior nodes are single-use; release the tape so memory is reclaimed.
  for (Tensor::Node* node : order) {
    if (!node->backward) continue;
    node->backward = nullptr;
    node->parents.clear();
    node->grad.clear();
  }
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v); });
}

double grad_check(const std::function<Tensor()>& f, Tensor x, double h) {
  if (!x.requires_grad()) throw ContractError("grad_check: x must require grad");
  x.zero_grad();
  Tensor loss = f();
  backward(loss);
  std::vector<double> analytic(x.numel(), 0.0);
  if (x.has_grad()) analytic.assign(x.grad().begin(), x.grad().end());

  NoGradGuard no_grad;
  auto values = x.mutable_data();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double plus = f().item();
    values[i] = saved - h;
    const double minus = f().item();
    values[i] = saved;
    const double numeric = (plus - minus) / (2.0 * h);
    const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

int argmax(std::span<const double> values) {
  return static_cast<int>(std::max_element(values.begin(), values.end()) -
                          values.begin());
}

}  // namespace lava
