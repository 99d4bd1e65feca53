#include "pgsu/tensor.hpp"

#include <Eigen/Core>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "pgsu/error.hpp"
#include "pgsu/rng.hpp"

namespace pgsu {

using detail::Buffer;
using detail::Node;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local bool g_grad_enabled = true;

#if defined(__GLIBC__)
// Graph buffers are allocated and freed at a high rate; keep them on the heap
// instead of round-tripping through mmap.
const bool g_malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

using NodePtr = std::shared_ptr<Node>;

Tensor make_op(const char* op, Shape shape, Buffer value,
               std::vector<NodePtr> parents, std::function<void(Node&)> backward) {
  for (double x : value)
    if (!std::isfinite(x))
      fail(ErrorKind::numeric, std::string("non-finite value produced by ") + op);
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  const bool needs = g_grad_enabled &&
                     std::any_of(parents.begin(), parents.end(),
                                 [](const NodePtr& p) { return p->requires_grad; });
  if (needs) {
    n->requires_grad = true;
    n->leaf = false;
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorKind::usage, what);
}

void require_defined(const Tensor& t, const char* op) {
  require(t.defined(), std::string(op) + ": undefined tensor");
}

void require_rank2(const Tensor& t, const char* op) {
  require_defined(t, op);
  require(t.rank() == 2, std::string(op) + ": expected a 2-D tensor, got " +
                             shape_string(t.shape()));
}

// Accumulates `g` into the gradient of parent `i` if it participates.
Buffer* grad_of(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

}  // namespace

Buffer& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value.assign(shape_size(shape), 0.0);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size())
    fail(ErrorKind::usage, "tensor shape " + shape_string(shape) + " does not match " +
                               std::to_string(values.size()) + " values");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value.assign(values.begin(), values.end());
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

std::size_t Tensor::rows() const { return rank() == 0 ? 1 : shape()[0]; }

std::size_t Tensor::cols() const {
  const std::size_t r = rows();
  return r == 0 ? 0 : size() / r;
}

double Tensor::item() const {
  if (size() != 1) fail(ErrorKind::usage, "item() on a tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(size(), 0.0);
  return {node_->grad.begin(), node_->grad.end()};
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dimensions differ " + shape_string(a.shape()) +
                             " x " + shape_string(b.shape()));
  Buffer out(n * m);
  MutMap(out.data(), n, m).noalias() =
      ConstMap(a.values().data(), n, k) * ConstMap(b.values().data(), k, m);
  return make_op("matmul", {n, m}, std::move(out), {a.node(), b.node()},
                 [n, k, m](Node& self) {
                   const ConstMap dy(self.grad.data(), n, m);
                   const Node& pa = *self.parents[0];
                   const Node& pb = *self.parents[1];
                   if (auto* ga = grad_of(self, 0))
                     MutMap(ga->data(), n, k).noalias() +=
                         dy * ConstMap(pb.value.data(), k, m).transpose();
                   if (auto* gb = grad_of(self, 1))
                     MutMap(gb->data(), k, m).noalias() +=
                         ConstMap(pa.value.data(), n, k).transpose() * dy;
                 });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank2(x, "linear");
  require_rank2(w, "linear");
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  require(w.dim(0) == in, "linear: input width " + std::to_string(in) +
                              " does not match weight " + shape_string(w.shape()));
  const bool has_bias = b.defined();
  if (has_bias) require(b.size() == out_dim, "linear: bias length mismatch");

  Buffer out(n * out_dim);
  MutMap y(out.data(), n, out_dim);
  y.noalias() = ConstMap(x.values().data(), n, in) * ConstMap(w.values().data(), in, out_dim);
  if (has_bias) {
    const Eigen::Map<const Eigen::RowVectorXd> bias(b.values().data(), out_dim);
    y.rowwise() += bias;
  }
  std::vector<NodePtr> parents{x.node(), w.node()};
  if (has_bias) parents.push_back(b.node());
  return make_op("linear", {n, out_dim}, std::move(out), std::move(parents),
                 [n, in, out_dim, has_bias](Node& self) {
                   const ConstMap dy(self.grad.data(), n, out_dim);
                   const Node& px = *self.parents[0];
                   const Node& pw = *self.parents[1];
                   if (auto* gx = grad_of(self, 0))
                     MutMap(gx->data(), n, in).noalias() +=
                         dy * ConstMap(pw.value.data(), in, out_dim).transpose();
                   if (auto* gw = grad_of(self, 1))
                     MutMap(gw->data(), in, out_dim).noalias() +=
                         ConstMap(px.value.data(), n, in).transpose() * dy;
                   if (has_bias)
                     if (auto* gb = grad_of(self, 2))
                       Eigen::Map<Eigen::RowVectorXd>(gb->data(), out_dim) += dy.colwise().sum();
                 });
}

namespace {

template <class Fwd, class Bwd>
Tensor binary_elementwise(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  require_defined(a, op);
  require_defined(b, op);
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  const std::size_t n = a.size();
  Buffer out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(a[i], b[i]);
  return make_op(op, a.shape(), std::move(out), {a.node(), b.node()},
                 [n, bwd](Node& self) {
                   const auto& va = self.parents[0]->value;
                   const auto& vb = self.parents[1]->value;
                   auto* ga = grad_of(self, 0);
                   auto* gb = grad_of(self, 1);
                   for (std::size_t i = 0; i < n; ++i) {
                     const auto [da, db] = bwd(va[i], vb[i]);
                     if (ga) (*ga)[i] += da * self.grad[i];
                     if (gb) (*gb)[i] += db * self.grad[i];
                   }
                 });
}

template <class Fwd, class Bwd>
Tensor unary_elementwise(const char* op, const Tensor& x, Fwd fwd, Bwd bwd) {
  require_defined(x, op);
  const std::size_t n = x.size();
  Buffer out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(x[i]);
  return make_op(op, x.shape(), std::move(out), {x.node()}, [n, bwd](Node& self) {
    auto* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& vx = self.parents[0]->value;
    for (std::size_t i = 0; i < n; ++i) (*gx)[i] += bwd(vx[i], self.value[i]) * self.grad[i];
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return std::pair{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return std::pair{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair{y, x}; });
}

Tensor scale(const Tensor& x, double s) {
  return unary_elementwise(
      "scale", x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Tensor relu(const Tensor& x) {
  return unary_elementwise(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_elementwise(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log_clamped(const Tensor& x, double eps) {
  return unary_elementwise(
      "log", x, [eps](double v) { return std::log(std::max(v, eps)); },
      [eps](double v, double) { return v > eps ? 1.0 / v : 0.0; });
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double s = 0.0;
  for (double v : x.values()) s += v;
  const std::size_t n = x.size();
  return make_op("sum", {}, {s}, {x.node()}, [n](Node& self) {
    if (auto* gx = grad_of(self, 0))
      for (std::size_t i = 0; i < n; ++i) (*gx)[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  require(x.size() > 0, "mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const std::size_t n = x.dim(0), m = x.dim(1);
  Buffer out(n * m);
  MutMap(out.data(), m, n) = ConstMap(x.values().data(), n, m).transpose();
  return make_op("transpose", {m, n}, std::move(out), {x.node()}, [n, m](Node& self) {
    if (auto* gx = grad_of(self, 0))
      MutMap(gx->data(), n, m) += ConstMap(self.grad.data(), m, n).transpose();
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  require(shape_size(shape) == x.size(), "reshape: cannot view " + shape_string(x.shape()) +
                                             " as " + shape_string(shape));
  Buffer out(x.values().begin(), x.values().end());
  const std::size_t n = x.size();
  return make_op("reshape", std::move(shape), std::move(out), {x.node()}, [n](Node& self) {
    if (auto* gx = grad_of(self, 0))
      for (std::size_t i = 0; i < n; ++i) (*gx)[i] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
  require(!xs.empty(), "concat: no inputs");
  for (const auto& t : xs) require_defined(t, "concat");
  const Shape& first = xs.front().shape();
  require(axis < first.size(), "concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& t : xs) {
    require(t.rank() == first.size(), "concat: rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d)
      if (d != axis)
        require(t.shape()[d] == first[d], "concat: shape mismatch " +
                                              shape_string(t.shape()) + " vs " +
                                              shape_string(first));
    out_shape[axis] += t.shape()[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<std::size_t> chunk(xs.size());
  std::size_t total_chunk = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    chunk[i] = xs[i].shape()[axis] * inner;
    total_chunk += chunk[i];
  }
  Buffer out(outer * total_chunk);
  std::vector<NodePtr> parents;
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t offset = o * total_chunk;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double* src = xs[i].values().data() + o * chunk[i];
      std::copy(src, src + chunk[i], out.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += chunk[i];
    }
  }
  for (const auto& t : xs) parents.push_back(t.node());
  return make_op("concat", std::move(out_shape), std::move(out), std::move(parents),
                 [outer, chunk, total_chunk](Node& self) {
                   for (std::size_t o = 0; o < outer; ++o) {
                     std::size_t offset = o * total_chunk;
                     for (std::size_t i = 0; i < chunk.size(); ++i) {
                       if (auto* g = grad_of(self, i))
                         for (std::size_t j = 0; j < chunk[i]; ++j)
                           (*g)[o * chunk[i] + j] += self.grad[offset + j];
                       offset += chunk[i];
                     }
                   }
                 });
}

Tensor max_pool(const Tensor& x, std::size_t axis) {
  require_defined(x, "max_pool");
  require(axis < x.rank(), "max_pool: axis out of range");
  const Shape& s = x.shape();
  const std::size_t len = s[axis];
  require(len > 0, "max_pool: empty axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  Shape out_shape;
  for (std::size_t d = 0; d < s.size(); ++d)
    if (d != axis) out_shape.push_back(s[d]);

  Buffer out(outer * inner);
  std::vector<std::size_t> argmax(outer * inner);
  const auto v = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      std::size_t best = o * len * inner + i;
      for (std::size_t j = 1; j < len; ++j) {
        const std::size_t idx = (o * len + j) * inner + i;
        if (v[idx] > v[best]) best = idx;
      }
      out[o * inner + i] = v[best];
      argmax[o * inner + i] = best;
    }
  return make_op("max_pool", std::move(out_shape), std::move(out), {x.node()},
                 [argmax = std::move(argmax)](Node& self) {
                   if (auto* gx = grad_of(self, 0))
                     for (std::size_t i = 0; i < argmax.size(); ++i)
                       (*gx)[argmax[i]] += self.grad[i];
                 });
}

Tensor segment_max(const Tensor& x, std::span<const std::size_t> offsets) {
  require_rank2(x, "segment_max");
  require(!offsets.empty(), "segment_max: offsets must hold at least one entry");
  const std::size_t n = x.dim(0), k = x.dim(1);
  const std::size_t segs = offsets.size() - 1;
  require(offsets.back() <= n, "segment_max: offsets exceed row count");
  Buffer out(segs * k, 0.0);
  std::vector<std::size_t> argmax(segs * k, kZeroRow);
  const auto v = x.values();
  for (std::size_t s = 0; s < segs; ++s) {
    require(offsets[s] <= offsets[s + 1], "segment_max: offsets must be nondecreasing");
    if (offsets[s] == offsets[s + 1]) continue;
    for (std::size_t c = 0; c < k; ++c) {
      std::size_t best = offsets[s] * k + c;
      for (std::size_t r = offsets[s] + 1; r < offsets[s + 1]; ++r)
        if (v[r * k + c] > v[best]) best = r * k + c;
      out[s * k + c] = v[best];
      argmax[s * k + c] = best;
    }
  }
  return make_op("segment_max", {segs, k}, std::move(out), {x.node()},
                 [argmax = std::move(argmax)](Node& self) {
                   if (auto* gx = grad_of(self, 0))
                     for (std::size_t i = 0; i < argmax.size(); ++i)
                       if (argmax[i] != kZeroRow) (*gx)[argmax[i]] += self.grad[i];
                 });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_rows");
  require(begin <= end && end <= x.dim(0), "slice_rows: range out of bounds");
  const std::size_t width = x.dim(1);
  Buffer out(x.values().begin() + static_cast<std::ptrdiff_t>(begin * width),
                          x.values().begin() + static_cast<std::ptrdiff_t>(end * width));
  return make_op("slice_rows", {end - begin, width}, std::move(out), {x.node()},
                 [begin, width](Node& self) {
                   auto* gx = grad_of(self, 0);
                   if (!gx) return;
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     (*gx)[begin * width + i] += self.grad[i];
                 });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_defined(x, "gather_rows");
  require(x.rank() >= 1, "gather_rows: scalar input");
  const std::size_t n = x.dim(0);
  const std::size_t width = n == 0 ? shape_size(Shape(x.shape().begin() + 1, x.shape().end()))
                                   : x.size() / n;
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  Buffer out(rows.size() * width, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] == kZeroRow) continue;
    require(rows[i] < n, "gather_rows: row index out of range");
    std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>(rows[i] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_op("gather_rows", std::move(out_shape), std::move(out), {x.node()},
                 [idx = std::move(idx), width](Node& self) {
                   auto* gx = grad_of(self, 0);
                   if (!gx) return;
                   for (std::size_t i = 0; i < idx.size(); ++i) {
                     if (idx[i] == kZeroRow) continue;
                     for (std::size_t c = 0; c < width; ++c)
                       (*gx)[idx[i] * width + c] += self.grad[i * width + c];
                   }
                 });
}

Tensor row_norm(const Tensor& x) {
  require_rank2(x, "row_norm");
  const std::size_t n = x.dim(0), k = x.dim(1);
  Buffer out(n);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += x[r * k + c] * x[r * k + c];
    out[r] = std::sqrt(s);
  }
  return make_op("row_norm", {n}, std::move(out), {x.node()}, [n, k](Node& self) {
    auto* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& vx = self.parents[0]->value;
    for (std::size_t r = 0; r < n; ++r) {
      if (self.value[r] == 0.0) continue;
      const double f = self.grad[r] / self.value[r];
      for (std::size_t c = 0; c < k; ++c) (*gx)[r * k + c] += f * vx[r * k + c];
    }
  });
}

Tensor add_to_rows(const Tensor& x, const Tensor& row, std::span<const std::size_t> rows) {
  require_rank2(x, "add_to_rows");
  require_defined(row, "add_to_rows");
  const std::size_t n = x.dim(0), k = x.dim(1);
  require(row.size() == k, "add_to_rows: row width mismatch");
  Buffer out(x.values().begin(), x.values().end());
  for (std::size_t r : rows) {
    require(r < n, "add_to_rows: row index out of range");
    for (std::size_t c = 0; c < k; ++c) out[r * k + c] += row[c];
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_op("add_to_rows", x.shape(), std::move(out), {x.node(), row.node()},
                 [idx = std::move(idx), n, k](Node& self) {
                   if (auto* gx = grad_of(self, 0))
                     for (std::size_t i = 0; i < n * k; ++i) (*gx)[i] += self.grad[i];
                   if (auto* gr = grad_of(self, 1))
                     for (std::size_t r : idx)
                       for (std::size_t c = 0; c < k; ++c) (*gr)[c] += self.grad[r * k + c];
                 });
}

namespace {

// Masked softmax of one row in place; returns false when no entry is valid.
bool softmax_row(double* row, std::size_t m, const std::uint8_t* mask) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < m; ++j)
    if (!mask || mask[j]) mx = std::max(mx, row[j]);
  if (mx == -std::numeric_limits<double>::infinity()) {
    std::fill_n(row, m, 0.0);
    return false;
  }
  double z = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    row[j] = (!mask || mask[j]) ? std::exp(row[j] - mx) : 0.0;
    z += row[j];
  }
  for (std::size_t j = 0; j < m; ++j) row[j] /= z;
  return true;
}

}  // namespace

Tensor softmax(const Tensor& x, std::span<const std::uint8_t> mask) {
  require_defined(x, "softmax");
  require(x.rank() == 1 || x.rank() == 2, "softmax: expected 1-D or 2-D input");
  const std::size_t n = x.rank() == 1 ? 1 : x.dim(0);
  const std::size_t m = x.rank() == 1 ? x.dim(0) : x.dim(1);
  require(mask.empty() || mask.size() == m || mask.size() == n * m,
          "softmax: mask length mismatch");
  Buffer out(x.values().begin(), x.values().end());
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* mrow = mask.empty()         ? nullptr
                               : mask.size() == m   ? mask.data()
                                                    : mask.data() + r * m;
    softmax_row(out.data() + r * m, m, mrow);
  }
  return make_op("softmax", x.shape(), std::move(out), {x.node()}, [n, m](Node& self) {
    auto* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < n; ++r) {
      const double* y = self.value.data() + r * m;
      const double* dy = self.grad.data() + r * m;
      double dotp = 0.0;
      for (std::size_t j = 0; j < m; ++j) dotp += y[j] * dy[j];
      for (std::size_t j = 0; j < m; ++j) (*gx)[r * m + j] += y[j] * (dy[j] - dotp);
    }
  });
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng* rng) {
  require_defined(x, "dropout");
  if (!training || rate <= 0.0) return x;
  require(rate < 1.0, "dropout: rate must be < 1");
  require(rng != nullptr, "dropout: training mode needs an rng");
  const std::size_t n = x.size();
  const double keep_scale = 1.0 / (1.0 - rate);
  Buffer factor(n);
  Buffer out(n);
  for (std::size_t i = 0; i < n; ++i) {
    factor[i] = rng->uniform() < rate ? 0.0 : keep_scale;
    out[i] = x[i] * factor[i];
  }
  return make_op("dropout", x.shape(), std::move(out), {x.node()},
                 [factor = std::move(factor)](Node& self) {
                   if (auto* gx = grad_of(self, 0))
                     for (std::size_t i = 0; i < factor.size(); ++i)
                       (*gx)[i] += factor[i] * self.grad[i];
                 });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank2(x, "layer_norm");
  const std::size_t n = x.dim(0), k = x.dim(1);
  require(gamma.size() == k && beta.size() == k, "layer_norm: affine width mismatch");
  Buffer xhat(n * k), inv_std(n), out(n * k);
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < k; ++c) mu += x[r * k + c];
    mu /= static_cast<double>(k);
    double var = 0.0;
    for (std::size_t c = 0; c < k; ++c) var += (x[r * k + c] - mu) * (x[r * k + c] - mu);
    var /= static_cast<double>(k);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < k; ++c) {
      xhat[r * k + c] = (x[r * k + c] - mu) * inv_std[r];
      out[r * k + c] = xhat[r * k + c] * gamma[c] + beta[c];
    }
  }
  return make_op("layer_norm", x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
                 [n, k, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                   const auto& g = self.parents[1]->value;
                   auto* gx = grad_of(self, 0);
                   auto* gg = grad_of(self, 1);
                   auto* gb = grad_of(self, 2);
                   for (std::size_t r = 0; r < n; ++r) {
                     const double* dy = self.grad.data() + r * k;
                     const double* xh = xhat.data() + r * k;
                     double s1 = 0.0, s2 = 0.0;
                     for (std::size_t c = 0; c < k; ++c) {
                       if (gg) (*gg)[c] += dy[c] * xh[c];
                       if (gb) (*gb)[c] += dy[c];
                       const double dxh = dy[c] * g[c];
                       s1 += dxh;
                       s2 += dxh * xh[c];
                     }
                     if (!gx) continue;
                     const double kk = static_cast<double>(k);
                     for (std::size_t c = 0; c < k; ++c) {
                       const double dxh = dy[c] * g[c];
                       (*gx)[r * k + c] += inv_std[r] * (dxh - s1 / kk - xh[c] * s2 / kk);
                     }
                   }
                 });
}

Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                         std::span<const AttentionGroup> groups,
                         std::span<const std::uint8_t> key_valid,
                         std::size_t* score_entries) {
  require_rank2(q, "attention");
  require_rank2(k, "attention");
  require_rank2(v, "attention");
  const std::size_t d = q.dim(1);
  require(d > 0, "attention: feature dimension D must be > 0");
  require(k.dim(1) == d, "attention: Q and K widths differ");
  require(v.dim(0) == k.dim(0), "attention: K and V row counts differ");
  require(key_valid.empty() || key_valid.size() == k.dim(0),
          "attention: key mask length mismatch");
  const std::size_t dv = v.dim(1);
  const std::size_t nq = q.dim(0);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  Buffer out(nq * dv, 0.0);
  std::vector<RowMat> probs(groups.size());
  const ConstMap Q(q.values().data(), nq, d);
  const ConstMap K(k.values().data(), k.dim(0), d);
  const ConstMap V(v.values().data(), v.dim(0), dv);
  MutMap O(out.data(), nq, dv);
  std::size_t entries = 0;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    require(g.q_begin <= g.q_end && g.q_end <= nq && g.k_begin <= g.k_end &&
                g.k_end <= k.dim(0),
            "attention: group range out of bounds");
    const std::size_t gq = g.q_end - g.q_begin;
    const std::size_t gk = g.k_end - g.k_begin;
    entries += gq * gk;
    RowMat& a = probs[gi];
    a = (Q.middleRows(g.q_begin, gq) * K.middleRows(g.k_begin, gk).transpose()) * inv_sqrt_d;
    const std::uint8_t* mask = key_valid.empty() ? nullptr : key_valid.data() + g.k_begin;
    for (std::size_t r = 0; r < gq; ++r) softmax_row(a.data() + r * gk, gk, mask);
    if (gk > 0) O.middleRows(g.q_begin, gq).noalias() = a * V.middleRows(g.k_begin, gk);
  }
  if (score_entries) *score_entries += entries;

  std::vector<AttentionGroup> gs(groups.begin(), groups.end());
  return make_op("attention", {nq, dv}, std::move(out), {q.node(), k.node(), v.node()},
                 [gs = std::move(gs), probs = std::move(probs), d, dv, inv_sqrt_d](Node& self) {
                   const Node& pq = *self.parents[0];
                   const Node& pk = *self.parents[1];
                   const Node& pv = *self.parents[2];
                   const std::size_t nq = pq.shape[0], nk = pk.shape[0];
                   const ConstMap dO(self.grad.data(), nq, dv);
                   const ConstMap Q(pq.value.data(), nq, d);
                   const ConstMap K(pk.value.data(), nk, d);
                   const ConstMap V(pv.value.data(), nk, dv);
                   auto* gq = grad_of(self, 0);
                   auto* gk = grad_of(self, 1);
                   auto* gv = grad_of(self, 2);
                   for (std::size_t gi = 0; gi < gs.size(); ++gi) {
                     const auto& g = gs[gi];
                     const std::size_t rq = g.q_end - g.q_begin;
                     const std::size_t rk = g.k_end - g.k_begin;
                     if (rq == 0 || rk == 0) continue;
                     const RowMat& a = probs[gi];
                     const auto dOg = dO.middleRows(g.q_begin, rq);
                     if (gv)
                       MutMap(gv->data(), nk, dv).middleRows(g.k_begin, rk).noalias() +=
                           a.transpose() * dOg;
                     if (!gq && !gk) continue;
                     RowMat da = dOg * V.middleRows(g.k_begin, rk).transpose();
                     RowMat ds(rq, rk);
                     for (std::size_t r = 0; r < rq; ++r) {
                       const double dotp = a.row(r).dot(da.row(r));
                       ds.row(r) = a.row(r).cwiseProduct(da.row(r).array().matrix()) -
                                   dotp * a.row(r);
                     }
                     ds *= inv_sqrt_d;
                     if (gq)
                       MutMap(gq->data(), nq, d).middleRows(g.q_begin, rq).noalias() +=
                           ds * K.middleRows(g.k_begin, rk);
                     if (gk)
                       MutMap(gk->data(), nk, d).middleRows(g.k_begin, rk).noalias() +=
                           ds.transpose() * Q.middleRows(g.q_begin, rq);
                   }
                 });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::span<const std::uint8_t> key_valid) {
  require_rank2(q, "attention");
  require_rank2(k, "attention");
  const AttentionGroup all{0, q.dim(0), 0, k.dim(0)};
  return grouped_attention(q, k, v, std::span(&all, 1), key_valid);
}

Tensor mse_loss(const Tensor& pred, const Tensor& target, std::span<const std::uint8_t> mask) {
  require_defined(pred, "mse_loss");
  require_defined(target, "mse_loss");
  require(pred.size() == target.size(), "mse_loss: size mismatch");
  require(mask.empty() || mask.size() == pred.size(), "mse_loss: mask length mismatch");
  const std::size_t n = pred.size();
  std::size_t count = 0;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double d = pred[i] - target[i];
    s += d * d;
    ++count;
  }
  if (count == 0) fail(ErrorKind::usage, "mse_loss: empty mask");
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return make_op("mse_loss", {}, {s / static_cast<double>(count)}, {pred.node(), target.node()},
                 [m = std::move(m), n, count](Node& self) {
                   const auto& p = self.parents[0]->value;
                   const auto& t = self.parents[1]->value;
                   auto* gp = grad_of(self, 0);
                   auto* gt = grad_of(self, 1);
                   const double f = 2.0 * self.grad[0] / static_cast<double>(count);
                   for (std::size_t i = 0; i < n; ++i) {
                     if (!m.empty() && !m[i]) continue;
                     const double g = f * (p[i] - t[i]);
                     if (gp) (*gp)[i] += g;
                     if (gt) (*gt)[i] -= g;
                   }
                 });
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target) {
  require_defined(pred, "smooth_l1");
  require_defined(target, "smooth_l1");
  require(pred.size() == target.size(), "smooth_l1: size mismatch");
  const std::size_t n = pred.size();
  require(n > 0, "smooth_l1: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred[i] - target[i];
    s += std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
  }
  return make_op("smooth_l1", {}, {s / static_cast<double>(n)}, {pred.node(), target.node()},
                 [n](Node& self) {
                   const auto& p = self.parents[0]->value;
                   const auto& t = self.parents[1]->value;
                   auto* gp = grad_of(self, 0);
                   auto* gt = grad_of(self, 1);
                   const double f = self.grad[0] / static_cast<double>(n);
                   for (std::size_t i = 0; i < n; ++i) {
                     const double d = p[i] - t[i];
                     const double g = f * (std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0));
                     if (gp) (*gp)[i] += g;
                     if (gt) (*gt)[i] -= g;
                   }
                 });
}

Tensor cross_entropy_probs(const Tensor& probs, std::span<const std::size_t> targets,
                           double eps) {
  require_defined(probs, "cross_entropy");
  require(probs.rank() == 1 || probs.rank() == 2, "cross_entropy: expected 1-D or 2-D input");
  const std::size_t n = probs.rank() == 1 ? 1 : probs.dim(0);
  const std::size_t c = probs.rank() == 1 ? probs.dim(0) : probs.dim(1);
  require(targets.size() == n, "cross_entropy: one target per row required");
  require(n > 0, "cross_entropy: empty batch");
  double s = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    require(targets[r] < c, "cross_entropy: target class out of range");
    s -= std::log(std::max(probs[r * c + targets[r]], eps));
  }
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return make_op("cross_entropy", {}, {s / static_cast<double>(n)}, {probs.node()},
                 [tg = std::move(tg), n, c, eps](Node& self) {
                   auto* gp = grad_of(self, 0);
                   if (!gp) return;
                   const auto& p = self.parents[0]->value;
                   const double f = self.grad[0] / static_cast<double>(n);
                   for (std::size_t r = 0; r < n; ++r) {
                     const double pv = p[r * c + tg[r]];
                     if (pv > eps) (*gp)[r * c + tg[r]] -= f / pv;
                   }
                 });
}

Tensor cross_entropy_logits(const Tensor& logits, std::span<const std::size_t> targets) {
  require_defined(logits, "cross_entropy");
  require(logits.rank() == 1 || logits.rank() == 2, "cross_entropy: expected 1-D or 2-D input");
  const std::size_t n = logits.rank() == 1 ? 1 : logits.dim(0);
  const std::size_t c = logits.rank() == 1 ? logits.dim(0) : logits.dim(1);
  require(targets.size() == n, "cross_entropy: one target per row required");
  require(n > 0 && c > 0, "cross_entropy: empty input");
  Buffer p(logits.values().begin(), logits.values().end());
  double s = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    require(targets[r] < c, "cross_entropy: target class out of range");
    double* row = p.data() + r * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    s -= row[targets[r]] - mx - std::log(z);
    softmax_row(row, c, nullptr);
  }
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return make_op("cross_entropy", {}, {s / static_cast<double>(n)}, {logits.node()},
                 [tg = std::move(tg), p = std::move(p), n, c](Node& self) {
                   auto* gl = grad_of(self, 0);
                   if (!gl) return;
                   const double f = self.grad[0] / static_cast<double>(n);
                   for (std::size_t r = 0; r < n; ++r)
                     for (std::size_t j = 0; j < c; ++j)
                       (*gl)[r * c + j] += f * (p[r * c + j] - (j == tg[r] ? 1.0 : 0.0));
                 });
}

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.size() != 1)
    fail(ErrorKind::usage, "backward: loss must be a scalar, got " + shape_string(loss.shape()));
  Node* root = loss.node().get();
  if (root->released)
    fail(ErrorKind::usage, "backward: graph already consumed; run the forward pass again");
  if (!root->requires_grad)
    fail(ErrorKind::usage, "backward: loss does not depend on any trainable tensor");
  if (root->leaf) {
    root->grad_buffer()[0] += 1.0;
    return;
  }

  // Iterative post-order DFS over interior nodes.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (!p->leaf && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->released)
      fail(ErrorKind::usage, "backward: graph already consumed; run the forward pass again");
    if (!n->grad.empty() && n->backward) n->backward(*n);
  }
  for (Node* n : order) {
    n->backward = nullptr;
    n->parents.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
    n->released = true;
  }
}

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double eps) {
  for (auto& t : inputs) {
    require(t.defined() && t.requires_grad(), "grad_check: inputs must require grad");
    t.zero_grad();
  }
  backward(f());
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) analytic.push_back(t.grad());

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto vals = inputs[i].mutable_values();
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double saved = vals[j];
      vals[j] = saved + eps;
      const double fp = f().item();
      vals[j] = saved - eps;
      const double fm = f().item();
      vals[j] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double err = std::abs(analytic[i][j] - numeric) / std::max(1e-8, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace pgsu
