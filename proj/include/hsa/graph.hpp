#pragma once

// Static computation graph with reverse-mode adjoints.
//
// Nodes are appended in construction order, which is also a valid
// topological order. Shapes are inferred when a node is created, so shape
// errors surface while the graph is being built. forward() evaluates every
// node; backward() propagates adjoints from a scalar node to every
// gradient-requiring ancestor.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hsa/tensor.hpp"

namespace hsa {

enum class Mode { train, eval };

/// Named tensors. Trainable entries are optimized; the rest are buffers
/// (batchnorm running statistics, input standardization).
template <class T>
class ParamStore {
 public:
  struct Entry {
    Tensor<T> value;
    bool trainable = true;
  };

  void add(const std::string& name, Tensor<T> value, bool trainable = true);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T>& get(const std::string& name);
  const Tensor<T>& get(const std::string& name) const;
  bool trainable(const std::string& name) const;

  /// Names in insertion order.
  const std::vector<std::string>& names() const noexcept { return order_; }
  std::size_t size() const noexcept { return order_.size(); }
  std::size_t trainable_count() const;

  /// True when both stores hold the same names with the same shapes and flags.
  bool isomorphic(const ParamStore& other) const;

  bool operator==(const ParamStore& other) const;

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Entry> index_;
};

struct NodeId {
  std::uint32_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
  friend auto operator<=>(NodeId, NodeId) = default;
};

enum class OpKind {
  input,
  parameter,
  conv2d,
  batchnorm2d,
  relu,
  global_avg_pool,
  linear,
  l2_normalize,
  dot,
  scale,
  add,
  mul,
  log,
  exp,
  sum,
  softmax_cross_entropy,
  contrast_log_prob,
  slice_rows,
};

std::string_view op_name(OpKind kind);

template <class T>
using Bindings = std::map<std::string, Tensor<T>>;

/// Gradients keyed by parameter or input name.
template <class T>
using Gradients = std::map<std::string, Tensor<T>>;

struct ForwardOptions {
  /// Fold batch statistics into batchnorm running statistics (train mode only).
  bool update_running_stats = true;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kNormalizeEps = 1e-12;

template <class T>
class Graph {
 public:
  struct Node {
    OpKind kind = OpKind::input;
    std::string name;
    std::vector<NodeId> inputs;
    Shape shape;
    bool requires_grad = false;
    // attributes
    std::size_t stride = 1;
    std::size_t begin = 0;
    std::size_t end = 0;
    double scalar = 1.0;
    std::string prefix;
    std::vector<int> labels;
    // forward results
    Tensor<T> value;
    std::vector<T> cache;
    std::vector<T> cache2;
  };

  explicit Graph(ParamStore<T>* params = nullptr, Mode mode = Mode::train)
      : params_(params), mode_(mode) {}

  Mode mode() const noexcept { return mode_; }
  void set_mode(Mode m) { mode_ = m; evaluated_ = false; }
  ParamStore<T>* params() const noexcept { return params_; }

  // -- construction ---------------------------------------------------------
  NodeId input(const std::string& name, Shape shape, bool requires_grad = false);
  /// Node reading a ParamStore entry; repeated calls return the same node.
  NodeId parameter(const std::string& name);

  /// Square-kernel convolution, zero padding kernel/2, no bias.
  NodeId conv2d(NodeId x, NodeId weight, std::size_t stride = 1);
  /// Uses <prefix>.gamma / <prefix>.beta and buffers <prefix>.running_mean / .running_var.
  NodeId batchnorm2d(NodeId x, const std::string& prefix);
  NodeId relu(NodeId x);
  NodeId global_avg_pool(NodeId x);
  /// x[N,I] * w[O,I]^T (+ b[O]).
  NodeId linear(NodeId x, NodeId weight, std::optional<NodeId> bias = std::nullopt);
  /// Row-wise, guarded: rows with norm <= kNormalizeEps map to zero.
  NodeId l2_normalize(NodeId x);
  /// Row-wise dot product of two [N,D] tensors -> [N].
  NodeId dot(NodeId a, NodeId b);
  NodeId scale(NodeId x, double factor);
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId log(NodeId x);
  NodeId exp(NodeId x);
  /// Sum of all elements -> shape {1}.
  NodeId sum(NodeId x);
  /// Mean cross entropy of softmax(logits[N,C]) against fixed labels -> {1}.
  NodeId softmax_cross_entropy(NodeId logits, std::vector<int> labels);
  /// pos[N], neg[N,K] -> pos - logsumexp(pos, neg...) per row, i.e. the log of
  /// the softmax ratio of the positive logit. Stable for any logit scale.
  NodeId contrast_log_prob(NodeId pos, NodeId neg);
  /// Rows [begin, end) of the leading axis.
  NodeId slice_rows(NodeId x, std::size_t begin, std::size_t end);

  void set_name(NodeId id, std::string name) { nodes_.at(id.index).name = std::move(name); }
  std::optional<NodeId> find(const std::string& name) const;

  // -- evaluation -----------------------------------------------------------
  void bind(const Bindings<T>& bindings);
  void bind(const std::string& name, Tensor<T> value);
  /// Evaluates every node using the current bindings.
  void evaluate(ForwardOptions options = {});
  void forward(const Bindings<T>& bindings, ForwardOptions options = {}) {
    bind(bindings);
    evaluate(options);
  }
  bool evaluated() const noexcept { return evaluated_; }

  const Tensor<T>& value(NodeId id) const;
  /// Values of the named nodes.
  Bindings<T> values(const std::vector<std::string>& names) const;

  /// Reverse pass from a scalar node. Returns gradients for every trainable
  /// parameter in the graph (zeros when the loss does not depend on it) and
  /// for every input declared with requires_grad.
  Gradients<T> backward(NodeId loss);
  bool has_adjoint(NodeId id) const { return id.index < adjoints_.size() && !adjoints_[id.index].empty(); }
  const Tensor<T>& adjoint(NodeId id) const { return adjoints_.at(id.index); }
  /// Nodes that received an adjoint in the last backward().
  std::vector<NodeId> adjoint_nodes() const;

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id.index); }
  std::string label(NodeId id) const;

 private:
  NodeId push(Node node);
  const Node& checked(NodeId id) const;
  const Tensor<T>& val(NodeId id) const;
  void eval_node(Node& n, ForwardOptions options);
  void backprop_node(const Node& n, const Tensor<T>& dy);
  Tensor<T>& grad_slot(NodeId id);

  ParamStore<T>* params_ = nullptr;
  Mode mode_ = Mode::train;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, NodeId> by_name_;
  std::unordered_map<std::string, NodeId> param_nodes_;
  std::vector<Tensor<T>> adjoints_;
  bool evaluated_ = false;
};

}  // namespace hsa
