#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tdlab/rng.hpp"
#include "tdlab/tokens.hpp"

namespace tdlab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
};
}  // namespace detail

/// Dense row-major f64 array. Copies share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  /// Direct write access. Intended for leaves (parameters, perturbation in tests).
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool is_leaf() const { return impl_->is_leaf; }

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient; a zero-filled buffer is allocated on first access.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  Tensor clone() const;
  Tensor detach() const;  // deep copy, no grad participation

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  // Internal handle used by the op layer and the tape.
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered record of differentiable operations executed while the tape is active on
/// the current thread. Ops whose inputs do not require grad are not recorded.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;

  struct Entry {
    std::shared_ptr<detail::TensorImpl> output;
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    BackwardFn backward;
    const char* name;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Tape active on this thread, or nullptr (inference mode).
  static Tape* active();

  void record(Entry entry);

  /// Propagates d(loss)/d(.) back through the entries that precede `loss`.
  /// Leaf gradients accumulate across calls; intermediate gradients are recomputed.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

 private:
  std::vector<Entry> entries_;
};

/// Makes `tape` the active tape for the current thread for the guard's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Disables recording for the current thread for the guard's lifetime.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

/// backward() on the active tape. Throws if `loss` is not a scalar or no tape is active.
void backward(const Tensor& loss);

/// Builds an op output. If a tape is active and any input requires grad, the output
/// is recorded with `backward_fn`; otherwise `backward_fn` is discarded.
Tensor make_op_output(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                      const char* name, Tape::BackwardFn backward_fn);

/// Adds `values` into the gradient of `t` if it participates in differentiation.
void accumulate_grad(const Tensor& t, std::span<const double> values);
/// Gradient buffer of `t` for in-place accumulation, or an empty span if `t` needs none.
std::span<double> grad_sink(const Tensor& t);

// ---------------------------------------------------------------------------
// Operations. All are pure functions of their inputs (and rng where given).

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// Sum of all elements -> [1]
Tensor sum(const Tensor& a);
/// 0.5 * sum(a^2) -> [1]
Tensor half_sum_squares(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// Row-wise softmax over the last dimension.
Tensor softmax(const Tensor& a);

/// Rows of `table` selected by `ids` -> [ids.size(), d]
Tensor embedding(const Tensor& table, std::span<const TokenId> ids);

/// x / rms(x) * gain over the last dimension, rms = sqrt(mean(x^2) + eps).
Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps);

/// silu(gate) * up, elementwise.
Tensor swiglu(const Tensor& gate, const Tensor& up);

/// Rotary embedding on x viewed as [rows, n_heads, head_dim] where the position of
/// row r is r % seq_len. Pairs (i, i + head_dim/2) are rotated by pos * base^(-2i/head_dim).
Tensor rope(const Tensor& x, std::size_t seq_len, std::size_t n_heads, std::size_t head_dim, double base);

struct AttentionShape {
  std::size_t batch = 1;
  std::size_t seq = 1;
  std::size_t n_heads = 1;
  std::size_t n_kv_groups = 1;
  std::size_t head_dim = 1;
  bool causal = true;
};

/// Scaled dot-product attention with grouped K/V heads.
/// q: [batch*seq, n_heads*head_dim], k/v: [batch*seq, n_kv_groups*head_dim].
/// When `dropout_p > 0` and `rng` is given, dropout is applied to the softmax
/// probabilities before they multiply V.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& shape,
                 double dropout_p = 0.0, Rng* rng = nullptr);

/// Feature-wise dropout: each element zeroed with probability p, survivors scaled by 1/(1-p).
Tensor feature_dropout(const Tensor& h, double p, Rng& rng);

/// Multiplies row r of x (viewed as [keep.size(), numel/keep.size()]) by keep[r] (0 or 1).
/// No rescaling of surviving rows.
Tensor mask_rows(const Tensor& x, std::span<const std::uint8_t> keep);

/// sum_i mask_i * w_i * (-log softmax(logits_i)[target_i]) -> [1].
/// Positions with mask_i == 0 contribute exactly zero loss and zero gradient.
/// If `nll_out` is given it receives the unweighted per-position NLL (0 where unmasked).
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const TokenId> targets,
                             std::span<const std::uint8_t> position_mask, std::span<const double> weights,
                             std::vector<double>* nll_out = nullptr);

}  // namespace tdlab
