#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace pgsu {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

/// 64-byte aligned storage so vectorized kernels see the same alignment on
/// every run and produce bit-identical sums.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = true;
  bool released = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Buffer& grad_buffer();
};

}  // namespace detail

/// Handle to a node of the differentiation graph. Copies share the node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }
  /// Leading dimension; 1 for scalars.
  std::size_t rows() const;
  /// Product of the trailing dimensions.
  std::size_t cols() const;

  std::span<const double> values() const { return node_->value; }
  /// Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; all zeros when nothing has accumulated yet.
  std::vector<double> grad() const;
  std::span<const double> grad_view() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording while alive (evaluation, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Sentinel row index for gather_rows: produces an all-zero row.
inline constexpr std::size_t kZeroRow = std::numeric_limits<std::size_t>::max();

// Building blocks. 2-D operations take [rows, cols] tensors.
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[n, in] * W[in, out] + b[out]; `b` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
inline Tensor residual_add(const Tensor& x, const Tensor& y) { return add(x, y); }
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// log(max(x, eps)); gradient is zero where the clamp is active.
Tensor log_clamped(const Tensor& x, double eps);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& xs, std::size_t axis);
/// Max over one axis (axis removed). Ties route the gradient to the first max.
Tensor max_pool(const Tensor& x, std::size_t axis);
/// Row-wise max within consecutive row ranges [offsets[s], offsets[s+1]).
/// Empty ranges produce zero rows.
Tensor segment_max(const Tensor& x, std::span<const std::size_t> offsets);
/// Rows [begin, end) of a 2-D tensor.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
/// Selects rows (first axis) by index; kZeroRow yields a zero row.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
/// Row-wise L2 norm of x[n, k] -> [n]. Gradient at a zero row is zero.
Tensor row_norm(const Tensor& x);
/// Adds `row`[k] to the listed rows of x[n, k].
Tensor add_to_rows(const Tensor& x, const Tensor& row, std::span<const std::size_t> rows);

/// Row-wise softmax of x[n, m]. `mask` is empty (all valid), length m (per
/// column), or length n*m. Invalid positions get probability 0; a row with
/// no valid position is all zero.
Tensor softmax(const Tensor& x, std::span<const std::uint8_t> mask = {});

/// Inverted dropout. Identity outside training or when rate == 0.
Tensor dropout(const Tensor& x, double rate, bool training, Rng* rng);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

/// A block-diagonal attention problem: query rows [q_begin, q_end) attend to
/// key rows [k_begin, k_end).
struct AttentionGroup {
  std::size_t q_begin = 0;
  std::size_t q_end = 0;
  std::size_t k_begin = 0;
  std::size_t k_end = 0;
};

/// out_i = sum_j alpha_ij V_j, alpha = masked softmax(Q K^T / sqrt(D)) within
/// each group. `key_valid` has one flag per key row (empty = all valid).
/// When `score_entries` is given, the number of score-matrix entries formed
/// is added to it.
Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                         std::span<const AttentionGroup> groups,
                         std::span<const std::uint8_t> key_valid = {},
                         std::size_t* score_entries = nullptr);

/// Single-group attention of Q[n_q, D] over K, V[n_k, D].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::span<const std::uint8_t> key_valid = {});

// Losses (scalar outputs).
/// Mean of squared differences over elements with mask != 0 (empty = all).
Tensor mse_loss(const Tensor& pred, const Tensor& target,
                std::span<const std::uint8_t> mask = {});
/// Piecewise 0.5 d^2 (|d| < 1) / |d| - 0.5, averaged over all elements.
Tensor smooth_l1(const Tensor& pred, const Tensor& target);
/// Mean over rows of -log(max(p[row, target[row]], eps)); probs is [n, C] or [C].
Tensor cross_entropy_probs(const Tensor& probs, std::span<const std::size_t> targets,
                           double eps = 1e-12);
/// Mean over rows of -log softmax(logits)[row, target[row]].
Tensor cross_entropy_logits(const Tensor& logits, std::span<const std::size_t> targets);

/// Reverse-mode sweep from a scalar. Releases the graph; a second call on the
/// same graph is an error.
void backward(const Tensor& loss);

/// Central finite differences against analytic gradients for every
/// coordinate of `inputs` (leaves with requires_grad). Returns
/// max |analytic - numeric| / max(1e-8, |numeric|).
double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                  double eps = 1e-5);

}  // namespace pgsu
