#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bcsnet/tensor.hpp"

namespace bcsnet::ag {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One node of the reverse-mode tape. `backward_fn` reads `grad` and
/// accumulates into the parents' grads.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool has_grad = false;
  std::string name;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad();
  void accumulate(const Tensor& g);
};

/// Handle to a tape node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : n_(std::move(n)) {}

  static Var leaf(Tensor value, bool requires_grad = true, std::string name = "");
  static Var constant(Tensor value);
  static Var constant_scalar(double v);

  bool defined() const { return static_cast<bool>(n_); }
  const Tensor& value() const { return n_->value; }
  Tensor& mutable_value() { return n_->value; }
  const Tensor& grad() const { return n_->grad; }
  bool has_grad() const { return n_->has_grad; }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  const std::string& name() const { return n_->name; }
  NodePtr node() const { return n_; }

  /// Scalar convenience for {1}-shaped values.
  double item() const { return n_->value[0]; }

  void zero_grad();

 private:
  NodePtr n_;
};

/// Global tape switch. With gradients disabled, ops produce value-only
/// nodes and intermediates are freed as they go out of scope.
bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Runs reverse-mode accumulation from a scalar root.
void backward(const Var& root);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var affine(const Var& a, double scale, double shift);  // scale*a + shift
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var log(const Var& a);
Var clamp(const Var& a, double lo, double hi);

// ---- reductions / shape ----
Var sum(const Var& a);   // -> {1}
Var mean(const Var& a);  // -> {1}
Var reshape(const Var& a, std::vector<std::int64_t> shape);
Var slice_batch(const Var& a, std::int64_t index);  // NCHW -> 1CHW view copy
Var concat_channels(const Var& a, const Var& b);

// ---- broadcast helpers ----
/// Multiplies NCHW features by an N1HW map, broadcasting over channels.
Var mul_bcast_c(const Var& x, const Var& m);
/// Scales a tensor by a {1}-shaped variable (learnable scalar gain).
Var scale(const Var& x, const Var& s);

// ---- spatial ops ----
/// 2-D convolution, NCHW, stride 1, zero padding (K-1)/2 (odd K), so the
/// spatial size is preserved. w is (Cout, Cin, K, K); b is (Cout).
Var conv2d(const Var& x, const Var& w, const Var& b);
Var maxpool2(const Var& x);  // 2x2 stride 2
Var avgpool2(const Var& x);  // 2x2 stride 2
Var bilinear_resize(const Var& x, std::int64_t out_h, std::int64_t out_w);

/// Channel statistics used by the spatial-attention descriptor.
Var channel_mean(const Var& x);  // NCHW -> N1HW
Var channel_max(const Var& x);   // NCHW -> N1HW

/// Per-location unit L2 normalization along the channel axis. Zero
/// channel vectors are left at zero.
Var l2_normalize_channels(const Var& x);

/// Dense self-attention over spatial locations: with A the C×(h·w) view of
/// each batch element, computes A · rowsoftmax(AᵀA) and reshapes back.
/// Rows of the attention matrix sum to 1. With gradients disabled the
/// attention matrix is streamed in row blocks instead of materialized.
Var attention_context(const Var& x);

enum class BnMode {
  kTrain,        // batch statistics, update running stats
  kTrainFrozen,  // batch statistics, leave running stats untouched
  kEval,         // running statistics
};

/// Per-channel batch normalization over (N, H, W). running_mean/var belong
/// to the caller and are only written in kTrain mode.
Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
                Tensor& running_var, BnMode mode, double momentum = 0.1, double eps = 1e-5);

}  // namespace bcsnet::ag
