#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lava {

using Shape = std::vector<std::size_t>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense float64 tensor with an optional reverse-mode tape.
//
// Tensor is a shared handle: copies alias the same storage and graph node.
// Operations never modify their inputs; only leaf parameters are mutated,
// and only by the optimizer or by grad_check's perturbation loop.
class Tensor {
 public:
  struct Node;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Direct write access; reserved for parameters (optimizer, loaders, tests).
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  // Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Copy of the values with no graph attached.
  Tensor detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

struct Tensor::Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  double* grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad.data();
  }
};

// Recording switch; thread local so read-only decodes can run concurrently.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// a · bᵀ for a[m×k], b[n×k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// x[n×d] + b[d] broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log_sigmoid(const Tensor& x);
Tensor square(const Tensor& x);

// ---- normalization ----------------------------------------------------------

// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);
// Row softmax of a 2-D tensor where entries with allow[i] == 0 get exactly
// zero probability. Every row needs at least one allowed entry.
Tensor masked_softmax(const Tensor& x, const std::vector<std::uint8_t>& allow);
Tensor log_softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// ---- shape and indexing -----------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t len);
// out[i] = table[ids[i]]; gradient scatter-adds back into table.
Tensor gather_rows(const Tensor& table, std::span<const int> ids);
// out[i] = x[idx[i]] on a flat view.
Tensor gather_elems(const Tensor& x, std::span<const int> idx);
// Expands a per-query relative-bucket score table qr[n×(2k+1)] into
// out[n×n_keys] with out(i, j) = qr(i, relative_offset(i, j, k)).
Tensor relative_scores(const Tensor& qr, std::size_t n_keys, int k);

// ---- reductions ---------------------------------------------------------------

Tensor sum(const Tensor& x);
// Column sums of a 2-D tensor, shape [cols].
Tensor sum_rows(const Tensor& x);
// Elementwise max over rows with mask[r] != 0, shape [cols].
Tensor max_rows(const Tensor& x, const std::vector<std::uint8_t>& mask);

// ---- losses -------------------------------------------------------------------

// Σ_i w_i · [(1−γ)·(−log p_i(t_i)) + γ·mean_v(−log p_i(v))] over rows of
// logits, via log-sum-exp. Rows with weight 0 contribute nothing.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     double smoothing = 0.0,
                     std::span<const double> row_weights = {});

// ---- regularization -----------------------------------------------------------

// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

// ---- autodiff -----------------------------------------------------------------

// Reverse sweep from a scalar. Gradients accumulate into leaves.
void backward(const Tensor& loss);

bool all_finite(std::span<const double> values);

// Max over elements of |analytic − numeric| / max(1, |analytic|, |numeric|)
// using central differences. `x` must be a leaf that `f` reads.
double grad_check(const std::function<Tensor()>& f, Tensor x, double h = 1e-5);

int argmax(std::span<const double> values);

}  // namespace lava
