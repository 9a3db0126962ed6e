#include "tdlab/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace tdlab {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size())
    throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match " +
                                std::to_string(data.size()) + " values");
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

std::span<double> Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

std::span<const double> Tensor::grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

Tensor Tensor::clone() const {
  Tensor out(impl_->shape, impl_->data, impl_->requires_grad);
  out.impl_->grad = impl_->grad;
  return out;
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

// ---------------------------------------------------------------------------

Tape* Tape::active() { return g_active_tape; }

void Tape::record(Entry entry) { entries_.push_back(std::move(entry)); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined tensor");
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));

  const auto& target = loss.impl();
  std::size_t end = entries_.size();
  while (end > 0 && entries_[end - 1].output != target) --end;
  if (end == 0) {
    if (target->requires_grad && target->is_leaf) {
      accumulate_grad(loss, std::vector<double>{1.0});
      return;
    }
    throw std::invalid_argument("backward: loss was not produced on this tape");
  }

  // Intermediate gradients are scratch space for this pass only.
  for (std::size_t i = 0; i < end; ++i) {
    auto& out = entries_[i].output;
    out->grad.assign(out->data.size(), 0.0);
  }
  target->grad[0] = 1.0;
  for (std::size_t i = end; i-- > 0;) {
    const Entry& e = entries_[i];
    e.backward(e.output->grad);
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (tape == nullptr) throw std::logic_error("backward: no active tape on this thread");
  tape->backward(loss);
}

Tensor make_op_output(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                      const char* name, Tape::BackwardFn backward_fn) {
  Tensor out(std::move(shape), std::move(data), false);
  Tape* tape = Tape::active();
  if (tape == nullptr) return out;
  bool needs = false;
  for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  if (!needs) return out;

  out.impl()->requires_grad = true;
  out.impl()->is_leaf = false;
  Tape::Entry entry{out.impl(), {}, std::move(backward_fn), name};
  entry.inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) entry.inputs.push_back(t.impl());
  tape->record(std::move(entry));
  return out;
}

std::span<double> grad_sink(const Tensor& t) {
  auto& impl = *t.impl();
  if (!impl.requires_grad) return {};
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
  return impl.grad;
}

void accumulate_grad(const Tensor& t, std::span<const double> values) {
  std::span<double> g = grad_sink(t);
  if (g.empty()) return;
  if (g.size() != values.size()) throw std::logic_error("accumulate_grad: size mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += values[i];
}

}  // namespace tdlab
