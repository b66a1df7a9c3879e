#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace simic {

class Tensor;
struct TensorImpl;

// One recorded operation: the tensors it consumed and a rule that pushes the
// output gradient back into them.
struct TapeNode {
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  TensorImpl* output = nullptr;  // owned by the tensor this node produced
  std::function<void(const TensorImpl&)> backward;
};

struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first needed, then same length as data
  bool requires_grad = false;
  std::shared_ptr<TapeNode> node;  // producer op, null for leaves
};

// Linearized view of the operations reachable from one tensor, in recording
// order. Recording order is topological by construction: an op can only
// consume tensors that already exist.
class Tape {
 public:
  static Tape trace(const Tensor& root);

  // Reverse sweep; each node runs exactly once.
  void run_backward();

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<TapeNode*> nodes_;
  std::vector<std::shared_ptr<TapeNode>> keepalive_;
};

bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense row-major double tensor with reverse-mode autodiff. Cheap to copy:
// copies share the underlying buffers.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0, bool requires_grad = false);

  static Tensor from_data(std::vector<int> shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const;
  int dim(int i) const;
  int ndim() const;
  std::size_t numel() const;

  double* data();
  const double* data() const;
  double value() const;  // scalar convenience accessor

  bool requires_grad() const;
  Tensor& set_requires_grad(bool rg);

  bool has_grad() const;
  double* grad();                        // allocates a zeroed buffer on demand
  const std::vector<double>& grad_vec() const;
  void zero_grad();

  // Reverse sweep from a scalar loss. Gradients accumulate additively into
  // any existing buffers; call zero_grad between optimizer steps.
  void backward() const;

  // Deep copy of data (grad and tape state are not carried over).
  Tensor clone() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Attach a TapeNode recording `out = f(ins)`. No-op when gradients are
// globally disabled or no input requires them; otherwise the output is
// marked as requiring grad.
void record(Tensor& out, const std::vector<Tensor>& ins,
            std::function<void(const TensorImpl&)> fn);

void ensure_grad(TensorImpl& t);

std::size_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

}  // namespace simic
