#include "simic/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace simic {

namespace {
std::atomic<std::uint64_t> g_seq{1};
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor shape dims must be positive, got " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int> shape, double fill, bool requires_grad) {
  impl_ = std::make_shared<TensorImpl>();
  const std::size_t n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->data.assign(n, fill);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  if (values.size() != n)
    throw std::invalid_argument("from_data: " + std::to_string(values.size()) +
                                " values for shape " + shape_str(shape));
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(values);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_data({1}, {v}, requires_grad);
}

const std::vector<int>& Tensor::shape() const { return impl_->shape; }

int Tensor::dim(int i) const { return impl_->shape.at(static_cast<std::size_t>(i)); }

int Tensor::ndim() const { return static_cast<int>(impl_->shape.size()); }

std::size_t Tensor::numel() const { return impl_->data.size(); }

double* Tensor::data() { return impl_->data.data(); }
const double* Tensor::data() const { return impl_->data.data(); }

double Tensor::value() const {
  if (numel() != 1) throw std::invalid_argument("value(): tensor has shape " + shape_str(impl_->shape));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool rg) {
  impl_->requires_grad = rg;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

void ensure_grad(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
}

double* Tensor::grad() {
  ensure_grad(*impl_);
  return impl_->grad.data();
}

const std::vector<double>& Tensor::grad_vec() const {
  ensure_grad(*impl_);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  return t;
}

void record(Tensor& out, const std::vector<Tensor>& ins,
            std::function<void(const TensorImpl&)> fn) {
  if (!g_grad_enabled) return;
  bool any = false;
  for (const Tensor& t : ins) any = any || t.requires_grad();
  if (!any) return;

  auto node = std::make_shared<TapeNode>();
  node->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  node->inputs.reserve(ins.size());
  for (const Tensor& t : ins) node->inputs.push_back(t.impl());
  node->output = out.impl().get();
  node->backward = std::move(fn);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
}

Tape Tape::trace(const Tensor& root) {
  Tape tape;
  if (!root.defined() || !root.impl()->node) return tape;

  std::unordered_set<const TapeNode*> seen;
  std::vector<std::shared_ptr<TapeNode>> stack{root.impl()->node};
  seen.insert(root.impl()->node.get());
  while (!stack.empty()) {
    std::shared_ptr<TapeNode> n = std::move(stack.back());
    stack.pop_back();
    for (const auto& parent : n->inputs) {
      if (parent->node && seen.insert(parent->node.get()).second) stack.push_back(parent->node);
    }
    tape.keepalive_.push_back(std::move(n));
  }
  tape.nodes_.reserve(tape.keepalive_.size());
  for (const auto& n : tape.keepalive_) tape.nodes_.push_back(n.get());
  std::sort(tape.nodes_.begin(), tape.nodes_.end(),
            [](const TapeNode* a, const TapeNode* b) { return a->seq < b->seq; });
  return tape;
}

void Tape::run_backward() {
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    TapeNode* n = *it;
    ensure_grad(*n->output);
    n->backward(*n->output);
  }
}

void Tensor::backward() const {
  if (!defined() || numel() != 1)
    throw std::invalid_argument("backward: loss must be a defined scalar tensor");
  if (!impl_->requires_grad)
    throw std::invalid_argument("backward: loss is not on the tape (requires_grad is false)");
  ensure_grad(*impl_);
  impl_->grad[0] += 1.0;
  Tape::trace(*this).run_backward();
}

}  // namespace simic
