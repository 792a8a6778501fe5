#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "persemon/tensor.hpp"

namespace persemon::ad {

// Persistent trainable tensor. Lives outside any one graph; leaves bind to it
// so backward() can deposit gradients here and the optimizer can read them.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;      // same shape, zeroed by zero_grad()
  Tensor momentum;  // optimizer state, same shape

  Param(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), momentum(value.shape()) {}
};

using ParamPtr = std::shared_ptr<Param>;

void zero_grad(const std::vector<ParamPtr>& params);

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One recorded operation (or leaf) in a dynamically built DAG.
struct Node {
  Tensor value;
  Tensor grad;  // allocated zeros iff requires_grad
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backprop;  // accumulates into parents' grad
  Param* bound = nullptr;               // leaf bound to a persistent Param
  bool requires_grad = false;
  const char* op = "";
};

// Cheap value handle; copying shares the node.
class Value {
 public:
  Value() = default;
  explicit Value(NodePtr n) : node_(std::move(n)) {}

  const Tensor& tensor() const { return node_->value; }
  const std::vector<int>& shape() const { return node_->value.shape(); }
  double item() const { return node_->value.item(); }
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  NodePtr node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  NodePtr node_;
};

// Leaves.
Value constant(Tensor t);            // no gradient ever
Value leaf(Tensor t);                // gradient kept on the node (for tests/inputs)
Value param(const ParamPtr& p);      // copies p->value, backward adds into p->grad
Value detach(const Value& v);        // constant snapshot of v's current value

// Arithmetic (same shape unless noted).
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& a, double c);

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }
inline Value operator*(const Value& a, const Value& b) { return mul(a, b); }
inline Value operator*(double c, const Value& a) { return scale(a, c); }

// Reductions.
Value sum(const Value& a);       // -> [1]
Value mean_all(const Value& a);  // -> [1]
Value mean_axis0(const Value& a);  // [K,M] -> [M]
Value max_axis0(const Value& a);   // [K,M] -> [M], first max wins ties

// Activations. softmax/log_softmax act over the last axis.
Value relu(const Value& a);
Value prelu(const Value& a, const Value& slope);  // slope [C], a [N,C,...]
Value sigmoid(const Value& a);
Value tanh_act(const Value& a);
Value softmax(const Value& a);
Value log_softmax(const Value& a);

// Layers.
Value fully_connected(const Value& x, const Value& w, const Value& b);  // [N,D]x[D,M]+[M]
Value conv2d(const Value& x, const Value& w, int stride);  // [N,C,H,W], [F,C,k,k]
Value average_pool(const Value& x);                        // [N,C,H,W] -> [N,C]

// Pre-activation residual unit: x + conv(act(conv(act(x)))), stride 1,
// channel preserving. The prelu overload threads learnable slopes.
Value residual_unit(const Value& x, const Value& w1, const Value& w2);
Value residual_unit(const Value& x, const Value& w1, const Value& slope1, const Value& w2,
                    const Value& slope2);

// Shape plumbing.
Value reshape(const Value& x, std::vector<int> new_shape);
Value flatten_rows(const Value& x);                      // [N,...] -> [N,rest]
Value slice_rows(const Value& x, int start, int count);  // along axis 0

// Margin smooth-l1 applied elementwise (no reduction).
enum class SmoothL1Variant { kContinuous, kPaperLiteral };
Value smooth_l1_each(const Value& x, double margin, SmoothL1Variant variant);

// Custom elementwise op from a function and its derivative. Mainly a test
// hook (lets a suite inject a wrong derivative on purpose).
Value apply_elementwise(const Value& x, const std::function<double(double)>& f,
                        const std::function<double(double)>& dfdx);

// Reverse-mode sweep from a scalar loss. Every node is visited exactly once
// in reverse topological order; leaves bound to Params get their gradient
// accumulated into Param::grad.
void backward(const Value& loss);

// All Params bound under this value's graph (deduplicated, discovery order).
std::vector<Param*> collect_bound_params(const Value& v);

}  // namespace persemon::ad
