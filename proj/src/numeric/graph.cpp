#include "hsa/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "hsa/kernels.hpp"

namespace hsa {

std::size_t numel(const Shape& shape) {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::size_t(1), std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::input: return "input";
    case OpKind::parameter: return "parameter";
    case OpKind::conv2d: return "conv2d";
    case OpKind::batchnorm2d: return "batchnorm2d";
    case OpKind::relu: return "relu";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::linear: return "linear";
    case OpKind::l2_normalize: return "l2_normalize";
    case OpKind::dot: return "dot";
    case OpKind::scale: return "scale";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::log: return "log";
    case OpKind::exp: return "exp";
    case OpKind::sum: return "sum";
    case OpKind::softmax_cross_entropy: return "softmax_cross_entropy";
    case OpKind::contrast_log_prob: return "contrast_log_prob";
    case OpKind::slice_rows: return "slice_rows";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// ParamStore

template <class T>
void ParamStore<T>::add(const std::string& name, Tensor<T> value, bool trainable) {
  if (contains(name)) throw std::invalid_argument("parameter '" + name + "' already exists");
  order_.push_back(name);
  index_.emplace(name, Entry{std::move(value), trainable});
}

template <class T>
Tensor<T>& ParamStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second.value;
}

template <class T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second.value;
}

template <class T>
bool ParamStore<T>::trainable(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second.trainable;
}

template <class T>
std::size_t ParamStore<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& name : order_) {
    const auto& e = index_.at(name);
    if (e.trainable) n += e.value.size();
  }
  return n;
}

template <class T>
bool ParamStore<T>::isomorphic(const ParamStore& other) const {
  if (order_ != other.order_) return false;
  for (const auto& name : order_) {
    const auto& a = index_.at(name);
    const auto& b = other.index_.at(name);
    if (a.trainable != b.trainable || a.value.shape() != b.value.shape()) return false;
  }
  return true;
}

template <class T>
bool ParamStore<T>::operator==(const ParamStore& other) const {
  if (!isomorphic(other)) return false;
  for (const auto& name : order_)
    if (!(index_.at(name).value == other.index_.at(name).value)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Graph construction

template <class T>
NodeId Graph<T>::push(Node node) {
  NodeId id{static_cast<std::uint32_t>(nodes_.size())};
  if (node.kind != OpKind::input && node.kind != OpKind::parameter) {
    node.requires_grad = false;
    for (auto in : node.inputs) node.requires_grad = node.requires_grad || nodes_[in.index].requires_grad;
  }
  if (!node.name.empty()) by_name_[node.name] = id;
  nodes_.push_back(std::move(node));
  evaluated_ = false;
  return id;
}

template <class T>
const typename Graph<T>::Node& Graph<T>::checked(NodeId id) const {
  if (id.index >= nodes_.size()) throw std::out_of_range("node id " + std::to_string(id.index) + " out of range");
  return nodes_[id.index];
}

template <class T>
std::string Graph<T>::label(NodeId id) const {
  const auto& n = checked(id);
  std::string s = std::string(op_name(n.kind)) + "#" + std::to_string(id.index);
  if (!n.name.empty()) s += " '" + n.name + "'";
  return s;
}

namespace {

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw std::invalid_argument("shape mismatch in " + op + ": " + detail);
}

}  // namespace

template <class T>
NodeId Graph<T>::input(const std::string& name, Shape shape, bool requires_grad) {
  if (name.empty()) throw std::invalid_argument("graph inputs must be named");
  if (by_name_.count(name)) throw std::invalid_argument("duplicate node name '" + name + "'");
  Node n;
  n.kind = OpKind::input;
  n.name = name;
  n.shape = std::move(shape);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::parameter(const std::string& name) {
  if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return it->second;
  if (!params_) throw std::logic_error("graph has no parameter store; cannot reference '" + name + "'");
  const auto& t = params_->get(name);
  Node n;
  n.kind = OpKind::parameter;
  n.name = name;
  n.shape = t.shape();
  n.requires_grad = params_->trainable(name);
  const NodeId id = push(std::move(n));
  param_nodes_[name] = id;
  return id;
}

template <class T>
NodeId Graph<T>::conv2d(NodeId x, NodeId weight, std::size_t stride) {
  const Shape xs = checked(x).shape;
  const Shape ws = checked(weight).shape;
  const std::string op = "conv2d(" + label(x) + ", " + label(weight) + ")";
  if (xs.size() != 4) shape_error(op, "input must be NCHW, got " + to_string(xs));
  if (ws.size() != 4 || ws[2] != ws[3]) shape_error(op, "weight must be [O,C,k,k], got " + to_string(ws));
  if (ws[1] != xs[1]) shape_error(op, "weight expects " + std::to_string(ws[1]) + " channels, input has " + std::to_string(xs[1]));
  if (ws[2] != 1 && ws[2] != 3) shape_error(op, "kernel must be 1x1 or 3x3");
  if (stride != 1 && stride != 2) shape_error(op, "stride must be 1 or 2");
  kernels::ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[2], stride, ws[2] / 2};
  Node n;
  n.kind = OpKind::conv2d;
  n.inputs = {x, weight};
  n.stride = stride;
  n.shape = {xs[0], ws[0], g.out_height(), g.out_width()};
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::batchnorm2d(NodeId x, const std::string& prefix) {
  const Shape xs = checked(x).shape;
  const std::string op = "batchnorm2d '" + prefix + "'";
  if (xs.size() != 4) shape_error(op, "input must be NCHW, got " + to_string(xs));
  if (!params_) throw std::logic_error(op + " needs a parameter store");
  const NodeId gamma = parameter(prefix + ".gamma");
  const NodeId beta = parameter(prefix + ".beta");
  for (const char* buf : {".running_mean", ".running_var"})
    if (params_->get(prefix + buf).shape() != Shape{xs[1]}) shape_error(op, std::string(buf) + " size");
  if (checked(gamma).shape != Shape{xs[1]} || checked(beta).shape != Shape{xs[1]})
    shape_error(op, "affine parameters must have " + std::to_string(xs[1]) + " entries");
  Node n;
  n.kind = OpKind::batchnorm2d;
  n.inputs = {x, gamma, beta};
  n.prefix = prefix;
  n.shape = xs;
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::relu(NodeId x) {
  Node n;
  n.kind = OpKind::relu;
  n.inputs = {x};
  n.shape = checked(x).shape;
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::global_avg_pool(NodeId x) {
  const Shape xs = checked(x).shape;
  if (xs.size() != 4) shape_error("global_avg_pool(" + label(x) + ")", "input must be NCHW");
  Node n;
  n.kind = OpKind::global_avg_pool;
  n.inputs = {x};
  n.shape = {xs[0], xs[1]};
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::linear(NodeId x, NodeId weight, std::optional<NodeId> bias) {
  const Shape xs = checked(x).shape;
  const Shape ws = checked(weight).shape;
  const std::string op = "linear(" + label(x) + ", " + label(weight) + ")";
  if (xs.size() != 2) shape_error(op, "input must be [N,I], got " + to_string(xs));
  if (ws.size() != 2 || ws[1] != xs[1]) shape_error(op, "weight " + to_string(ws) + " incompatible with input " + to_string(xs));
  Node n;
  n.kind = OpKind::linear;
  n.inputs = {x, weight};
  if (bias) {
    if (checked(*bias).shape != Shape{ws[0]}) shape_error(op, "bias must have " + std::to_string(ws[0]) + " entries");
    n.inputs.push_back(*bias);
  }
  n.shape = {xs[0], ws[0]};
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::l2_normalize(NodeId x) {
  if (checked(x).shape.size() != 2) shape_error("l2_normalize(" + label(x) + ")", "input must be [N,D]");
  Node n;
  n.kind = OpKind::l2_normalize;
  n.inputs = {x};
  n.shape = checked(x).shape;
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::dot(NodeId a, NodeId b) {
  const Shape as = checked(a).shape;
  if (as.size() != 2 || as != checked(b).shape)
    shape_error("dot(" + label(a) + ", " + label(b) + ")", to_string(as) + " vs " + to_string(checked(b).shape));
  Node n;
  n.kind = OpKind::dot;
  n.inputs = {a, b};
  n.shape = {as[0]};
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::scale(NodeId x, double factor) {
  Node n;
  n.kind = OpKind::scale;
  n.inputs = {x};
  n.scalar = factor;
  n.shape = checked(x).shape;
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::add(NodeId a, NodeId b) {
  if (checked(a).shape != checked(b).shape)
    shape_error("add(" + label(a) + ", " + label(b) + ")", to_string(checked(a).shape) + " vs " + to_string(checked(b).shape));
  Node n;
  n.kind = OpKind::add;
  n.inputs = {a, b};
  n.shape = checked(a).shape;
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::mul(NodeId a, NodeId b) {
  if (checked(a).shape != checked(b).shape)
    shape_error("mul(" + label(a) + ", " + label(b) + ")", to_string(checked(a).shape) + " vs " + to_string(checked(b).shape));
  Node n;
  n.kind = OpKind::mul;
  n.inputs = {a, b};
  n.shape = checked(a).shape;
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::log(NodeId x) {
  Node n;
  n.kind = OpKind::log;
  n.inputs = {x};
  n.shape = checked(x).shape;
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::exp(NodeId x) {
  Node n;
  n.kind = OpKind::exp;
  n.inputs = {x};
  n.shape = checked(x).shape;
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::sum(NodeId x) {
  Node n;
  n.kind = OpKind::sum;
  n.inputs = {x};
  n.shape = {1};
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::softmax_cross_entropy(NodeId logits, std::vector<int> labels) {
  const Shape ls = checked(logits).shape;
  const std::string op = "softmax_cross_entropy(" + label(logits) + ")";
  if (ls.size() != 2) shape_error(op, "logits must be [N,C]");
  if (labels.size() != ls[0]) shape_error(op, std::to_string(labels.size()) + " labels for " + std::to_string(ls[0]) + " rows");
  for (int y : labels)
    if (y < 0 || std::size_t(y) >= ls[1]) throw std::invalid_argument(op + ": label " + std::to_string(y) + " out of range");
  Node n;
  n.kind = OpKind::softmax_cross_entropy;
  n.inputs = {logits};
  n.labels = std::move(labels);
  n.shape = {1};
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::contrast_log_prob(NodeId pos, NodeId neg) {
  const Shape ps = checked(pos).shape;
  const Shape ns = checked(neg).shape;
  const std::string op = "contrast_log_prob(" + label(pos) + ", " + label(neg) + ")";
  if (ps.size() != 1) shape_error(op, "positive logits must be [N]");
  if (ns.size() != 2 || ns[0] != ps[0]) shape_error(op, "negative logits must be [N,K], got " + to_string(ns));
  Node n;
  n.kind = OpKind::contrast_log_prob;
  n.inputs = {pos, neg};
  n.shape = ps;
  return push(std::move(n));
}

template <class T>
NodeId Graph<T>::slice_rows(NodeId x, std::size_t begin, std::size_t end) {
  const Shape xs = checked(x).shape;
  if (xs.empty() || begin >= end || end > xs[0])
    shape_error("slice_rows(" + label(x) + ")", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " + to_string(xs));
  Node n;
  n.kind = OpKind::slice_rows;
  n.inputs = {x};
  n.begin = begin;
  n.end = end;
  n.shape = xs;
  n.shape[0] = end - begin;
  return push(std::move(n));
}

template <class T>
std::optional<NodeId> Graph<T>::find(const std::string& name) const {
  if (auto it = by_name_.find(name); it != by_name_.end()) return it->second;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Forward

template <class T>
void Graph<T>::bind(const Bindings<T>& bindings) {
  for (const auto& [name, t] : bindings) bind(name, t);
}

template <class T>
void Graph<T>::bind(const std::string& name, Tensor<T> value) {
  auto it = by_name_.find(name);
  if (it == by_name_.end() || nodes_[it->second.index].kind != OpKind::input)
    throw std::invalid_argument("no graph input named '" + name + "'");
  Node& n = nodes_[it->second.index];
  if (value.shape() != n.shape)
    throw std::invalid_argument("shape mismatch binding input '" + name + "': expected " + to_string(n.shape) + ", got " + to_string(value.shape()));
  n.value = std::move(value);
  evaluated_ = false;
}

template <class T>
const Tensor<T>& Graph<T>::val(NodeId id) const {
  const Node& n = nodes_[id.index];
  if (n.kind == OpKind::parameter) return params_->get(n.name);
  return n.value;
}

template <class T>
const Tensor<T>& Graph<T>::value(NodeId id) const {
  if (!evaluated_) throw std::logic_error("graph has not been evaluated");
  checked(id);
  return val(id);
}

template <class T>
Bindings<T> Graph<T>::values(const std::vector<std::string>& names) const {
  Bindings<T> out;
  for (const auto& name : names) {
    auto id = find(name);
    if (!id) throw std::invalid_argument("no node named '" + name + "'");
    out.emplace(name, value(*id));
  }
  return out;
}

template <class T>
void Graph<T>::evaluate(ForwardOptions options) {
  for (const auto& n : nodes_)
    if (n.kind == OpKind::input && n.value.shape() != n.shape)
      throw std::invalid_argument("unbound graph input '" + n.name + "'");
  for (auto& n : nodes_) {
    if (n.kind == OpKind::parameter && params_->get(n.name).shape() != n.shape)
      throw std::invalid_argument("parameter '" + n.name + "' changed shape after graph construction");
    eval_node(n, options);
  }
  evaluated_ = true;
  adjoints_.clear();
}

template <class T>
void Graph<T>::eval_node(Node& n, ForwardOptions options) {
  using kernels::Transpose;
  const auto in = [&](std::size_t i) -> const Tensor<T>& { return val(n.inputs[i]); };
  if (n.value.shape() != n.shape) n.value = Tensor<T>(n.shape);
  auto y = n.value.data();

  switch (n.kind) {
    case OpKind::input:
    case OpKind::parameter:
      break;

    case OpKind::conv2d: {
      const auto& x = in(0);
      const auto& w = in(1);
      kernels::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(2), n.stride, w.dim(2) / 2};
      std::vector<T> col(g.col_rows() * g.col_cols());
      kernels::im2col<T>(g, x.data(), col);
      std::vector<T> out2(w.dim(0) * g.col_cols());
      kernels::gemm<T>(Transpose::no, Transpose::no, w.dim(0), g.col_cols(), g.col_rows(), w.data(), col, out2);
      kernels::cnhw_to_nchw<T>(g.batch, w.dim(0), g.out_height() * g.out_width(), out2, y);
      break;
    }

    case OpKind::batchnorm2d: {
      const auto& x = in(0);
      const auto& gamma = in(1);
      const auto& beta = in(2);
      const std::size_t nb = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
      auto& rm = params_->get(n.prefix + ".running_mean");
      auto& rv = params_->get(n.prefix + ".running_var");
      std::vector<T> mean(c), var(c);
      if (mode_ == Mode::train) {
        kernels::channel_moments<T>(nb, c, hw, x.data(), mean, var);
        if (options.update_running_stats) {
          const double m = double(nb * hw);
          const double unbias = m > 1 ? m / (m - 1) : 1.0;
          for (std::size_t k = 0; k < c; ++k) {
            rm[k] = T(kBatchNormMomentum * rm[k] + (1 - kBatchNormMomentum) * mean[k]);
            rv[k] = T(kBatchNormMomentum * rv[k] + (1 - kBatchNormMomentum) * var[k] * unbias);
          }
        }
      } else {
        std::copy(rm.data().begin(), rm.data().end(), mean.begin());
        std::copy(rv.data().begin(), rv.data().end(), var.begin());
      }
      n.cache.assign(x.size(), T(0));  // normalized input
      n.cache2.assign(c, T(0));         // inverse std
      for (std::size_t k = 0; k < c; ++k) n.cache2[k] = T(1.0 / std::sqrt(double(var[k]) + kBatchNormEps));
      const auto planes = static_cast<std::ptrdiff_t>(nb * c);
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t p = 0; p < planes; ++p) {
        const std::size_t k = std::size_t(p) % c;
        const T mu = mean[k], is = n.cache2[k], ga = gamma[k], be = beta[k];
        const std::size_t off = std::size_t(p) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const T xh = (x[off + i] - mu) * is;
          n.cache[off + i] = xh;
          y[off + i] = ga * xh + be;
        }
      }
      break;
    }

    case OpKind::relu: {
      const auto& x = in(0);
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    }

    case OpKind::global_avg_pool: {
      const auto& x = in(0);
      const std::size_t planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
      for (std::size_t p = 0; p < planes; ++p) {
        T s = 0;
        for (std::size_t i = 0; i < hw; ++i) s += x[p * hw + i];
        y[p] = s / T(hw);
      }
      break;
    }

    case OpKind::linear: {
      const auto& x = in(0);
      const auto& w = in(1);
      const std::size_t nr = x.dim(0), ni = x.dim(1), no = w.dim(0);
      kernels::gemm<T>(Transpose::no, Transpose::yes, nr, no, ni, x.data(), w.data(), y);
      if (n.inputs.size() > 2) {
        const auto& b = in(2);
        for (std::size_t r = 0; r < nr; ++r)
          for (std::size_t o = 0; o < no; ++o) y[r * no + o] += b[o];
      }
      break;
    }

    case OpKind::l2_normalize: {
      const auto& x = in(0);
      const std::size_t nr = x.dim(0), d = x.dim(1);
      n.cache.assign(nr, T(0));  // row norms
      for (std::size_t r = 0; r < nr; ++r) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += double(x[r * d + j]) * double(x[r * d + j]);
        const double norm = std::sqrt(s);
        n.cache[r] = T(norm);
        for (std::size_t j = 0; j < d; ++j) y[r * d + j] = norm > kNormalizeEps ? T(double(x[r * d + j]) / norm) : T(0);
      }
      break;
    }

    case OpKind::dot: {
      const auto& a = in(0);
      const auto& b = in(1);
      const std::size_t nr = a.dim(0), d = a.dim(1);
      for (std::size_t r = 0; r < nr; ++r) {
        T s = 0;
        for (std::size_t j = 0; j < d; ++j) s += a[r * d + j] * b[r * d + j];
        y[r] = s;
      }
      break;
    }

    case OpKind::scale: {
      const auto& x = in(0);
      const T f = T(n.scalar);
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = f * x[i];
      break;
    }

    case OpKind::add: {
      const auto& a = in(0);
      const auto& b = in(1);
      for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
      break;
    }

    case OpKind::mul: {
      const auto& a = in(0);
      const auto& b = in(1);
      for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] * b[i];
      break;
    }

    case OpKind::log: {
      const auto& x = in(0);
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::log(x[i]);
      break;
    }

    case OpKind::exp: {
      const auto& x = in(0);
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::exp(x[i]);
      break;
    }

    case OpKind::sum: {
      const auto& x = in(0);
      double s = 0;
      for (std::size_t i = 0; i < x.size(); ++i) s += double(x[i]);
      y[0] = T(s);
      break;
    }

    case OpKind::softmax_cross_entropy: {
      const auto& z = in(0);
      const std::size_t nr = z.dim(0), c = z.dim(1);
      n.cache.assign(z.size(), T(0));  // softmax probabilities
      double total = 0;
      for (std::size_t r = 0; r < nr; ++r) {
        const T* zr = z.raw() + r * c;
        const T mx = *std::max_element(zr, zr + c);
        double s = 0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(double(zr[j] - mx));
        const double lse = double(mx) + std::log(s);
        for (std::size_t j = 0; j < c; ++j) n.cache[r * c + j] = T(std::exp(double(zr[j]) - lse));
        total += lse - double(zr[std::size_t(n.labels[r])]);
      }
      y[0] = T(total / double(nr));
      break;
    }

    case OpKind::contrast_log_prob: {
      const auto& pos = in(0);
      const auto& neg = in(1);
      const std::size_t nr = pos.dim(0), k = neg.dim(1);
      n.cache.assign(nr * (k + 1), T(0));  // softmax over [pos, neg...]
      for (std::size_t r = 0; r < nr; ++r) {
        const T* nrow = neg.raw() + r * k;
        T mx = pos[r];
        for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, nrow[j]);
        double s = std::exp(double(pos[r] - mx));
        for (std::size_t j = 0; j < k; ++j) s += std::exp(double(nrow[j] - mx));
        const double lse = double(mx) + std::log(s);
        y[r] = T(double(pos[r]) - lse);
        T* p = n.cache.data() + r * (k + 1);
        p[0] = T(std::exp(double(pos[r]) - lse));
        for (std::size_t j = 0; j < k; ++j) p[j + 1] = T(std::exp(double(nrow[j]) - lse));
      }
      break;
    }

    case OpKind::slice_rows: {
      const auto& x = in(0);
      const std::size_t stride = x.row_stride();
      std::copy(x.raw() + n.begin * stride, x.raw() + n.end * stride, y.begin());
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Backward

template <class T>
Tensor<T>& Graph<T>::grad_slot(NodeId id) {
  auto& g = adjoints_[id.index];
  if (g.empty()) g = Tensor<T>(nodes_[id.index].shape);
  return g;
}

template <class T>
std::vector<NodeId> Graph<T>::adjoint_nodes() const {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < adjoints_.size(); ++i)
    if (!adjoints_[i].empty()) out.push_back(NodeId{static_cast<std::uint32_t>(i)});
  return out;
}

template <class T>
Gradients<T> Graph<T>::backward(NodeId loss) {
  const Node& ln = checked(loss);
  if (!evaluated_) throw std::logic_error("backward called before forward");
  if (numel(ln.shape) != 1) throw std::invalid_argument("backward needs a scalar loss, got " + label(loss) + " with shape " + to_string(ln.shape));

  // Ancestors of the loss that carry gradient.
  std::vector<char> live(nodes_.size(), 0);
  live[loss.index] = ln.requires_grad;
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    if (!live[i]) continue;
    for (auto in : nodes_[i].inputs)
      if (nodes_[in.index].requires_grad) live[in.index] = 1;
  }

  adjoints_.assign(nodes_.size(), Tensor<T>());
  if (live[loss.index]) grad_slot(loss)[0] = T(1);
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    if (!live[i] || adjoints_[i].empty()) continue;
    const Node& n = nodes_[i];
    if (n.kind == OpKind::input || n.kind == OpKind::parameter) continue;
    backprop_node(n, adjoints_[i]);
  }

  Gradients<T> grads;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    const bool wants = (n.kind == OpKind::parameter && n.requires_grad) || (n.kind == OpKind::input && n.requires_grad);
    if (!wants) continue;
    grads[n.name] = adjoints_[i].empty() ? Tensor<T>(n.shape) : adjoints_[i];
  }
  return grads;
}

template <class T>
void Graph<T>::backprop_node(const Node& n, const Tensor<T>& dy) {
  using kernels::Transpose;
  const auto in = [&](std::size_t i) -> const Tensor<T>& { return val(n.inputs[i]); };
  const auto needs = [&](std::size_t i) { return nodes_[n.inputs[i].index].requires_grad; };

  switch (n.kind) {
    case OpKind::input:
    case OpKind::parameter:
      break;

    case OpKind::conv2d: {
      const auto& x = in(0);
      const auto& w = in(1);
      kernels::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(2), n.stride, w.dim(2) / 2};
      const std::size_t o = w.dim(0), hw_out = g.out_height() * g.out_width();
      std::vector<T> dout2(o * g.col_cols());
      kernels::nchw_to_cnhw<T>(g.batch, o, hw_out, dy.data(), dout2);
      if (needs(1)) {
        std::vector<T> col(g.col_rows() * g.col_cols());
        kernels::im2col<T>(g, x.data(), col);
        kernels::gemm<T>(Transpose::no, Transpose::yes, o, g.col_rows(), g.col_cols(), dout2, col,
                         grad_slot(n.inputs[1]).data(), true);
      }
      if (needs(0)) {
        std::vector<T> dcol(g.col_rows() * g.col_cols());
        kernels::gemm<T>(Transpose::yes, Transpose::no, g.col_rows(), g.col_cols(), o, w.data(), dout2, dcol);
        std::vector<T> dx(x.size());
        kernels::col2im<T>(g, dcol, dx);
        auto gx = grad_slot(n.inputs[0]).data();
        for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += dx[i];
      }
      break;
    }

    case OpKind::batchnorm2d: {
      const auto& x = in(0);
      const auto& gamma = in(1);
      const std::size_t nb = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
      const double m = double(nb * hw);
      std::vector<double> sum_dy(c, 0.0), sum_dy_xh(c, 0.0);
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t k = 0; k < c; ++k) {
          const std::size_t off = (b * c + k) * hw;
          double s = 0, sx = 0;
          for (std::size_t i = 0; i < hw; ++i) {
            s += double(dy[off + i]);
            sx += double(dy[off + i]) * double(n.cache[off + i]);
          }
          sum_dy[k] += s;
          sum_dy_xh[k] += sx;
        }
      if (needs(1)) {
        auto& gg = grad_slot(n.inputs[1]);
        for (std::size_t k = 0; k < c; ++k) gg[k] += T(sum_dy_xh[k]);
      }
      if (needs(2)) {
        auto& gb = grad_slot(n.inputs[2]);
        for (std::size_t k = 0; k < c; ++k) gb[k] += T(sum_dy[k]);
      }
      if (needs(0)) {
        auto gx = grad_slot(n.inputs[0]).data();
        const bool train = mode_ == Mode::train;
        const auto planes = static_cast<std::ptrdiff_t>(nb * c);
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t p = 0; p < planes; ++p) {
          const std::size_t k = std::size_t(p) % c;
          const std::size_t off = std::size_t(p) * hw;
          const double scale = double(gamma[k]) * double(n.cache2[k]);
          if (train) {
            const double mean_dy = sum_dy[k] / m, mean_dy_xh = sum_dy_xh[k] / m;
            for (std::size_t i = 0; i < hw; ++i)
              gx[off + i] += T(scale * (double(dy[off + i]) - mean_dy - double(n.cache[off + i]) * mean_dy_xh));
          } else {
            for (std::size_t i = 0; i < hw; ++i) gx[off + i] += T(scale * double(dy[off + i]));
          }
        }
      }
      break;
    }

    case OpKind::relu: {
      const auto& x = in(0);
      auto gx = grad_slot(n.inputs[0]).data();
      for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] > T(0)) gx[i] += dy[i];
      break;
    }

    case OpKind::global_avg_pool: {
      const auto& x = in(0);
      const std::size_t planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
      auto gx = grad_slot(n.inputs[0]).data();
      for (std::size_t p = 0; p < planes; ++p) {
        const T g = dy[p] / T(hw);
        for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += g;
      }
      break;
    }

    case OpKind::linear: {
      const auto& x = in(0);
      const auto& w = in(1);
      const std::size_t nr = x.dim(0), ni = x.dim(1), no = w.dim(0);
      if (needs(0))
        kernels::gemm<T>(Transpose::no, Transpose::no, nr, ni, no, dy.data(), w.data(), grad_slot(n.inputs[0]).data(), true);
      if (needs(1))
        kernels::gemm<T>(Transpose::yes, Transpose::no, no, ni, nr, dy.data(), x.data(), grad_slot(n.inputs[1]).data(), true);
      if (n.inputs.size() > 2 && needs(2)) {
        auto& gb = grad_slot(n.inputs[2]);
        for (std::size_t r = 0; r < nr; ++r)
          for (std::size_t o = 0; o < no; ++o) gb[o] += dy[r * no + o];
      }
      break;
    }

    case OpKind::l2_normalize: {
      const std::size_t nr = n.shape[0], d = n.shape[1];
      const auto& y = n.value;
      auto gx = grad_slot(n.inputs[0]).data();
      for (std::size_t r = 0; r < nr; ++r) {
        const double norm = double(n.cache[r]);
        if (norm <= kNormalizeEps) continue;
        double ydy = 0;
        for (std::size_t j = 0; j < d; ++j) ydy += double(y[r * d + j]) * double(dy[r * d + j]);
        for (std::size_t j = 0; j < d; ++j)
          gx[r * d + j] += T((double(dy[r * d + j]) - double(y[r * d + j]) * ydy) / norm);
      }
      break;
    }

    case OpKind::dot: {
      const auto& a = in(0);
      const auto& b = in(1);
      const std::size_t nr = a.dim(0), d = a.dim(1);
      if (needs(0)) {
        auto ga = grad_slot(n.inputs[0]).data();
        for (std::size_t r = 0; r < nr; ++r)
          for (std::size_t j = 0; j < d; ++j) ga[r * d + j] += dy[r] * b[r * d + j];
      }
      if (needs(1)) {
        auto gb = grad_slot(n.inputs[1]).data();
        for (std::size_t r = 0; r < nr; ++r)
          for (std::size_t j = 0; j < d; ++j) gb[r * d + j] += dy[r] * a[r * d + j];
      }
      break;
    }

    case OpKind::scale: {
      auto gx = grad_slot(n.inputs[0]).data();
      const T f = T(n.scalar);
      for (std::size_t i = 0; i < dy.size(); ++i) gx[i] += f * dy[i];
      break;
    }

    case OpKind::add: {
      for (std::size_t s = 0; s < 2; ++s) {
        if (!needs(s)) continue;
        auto g = grad_slot(n.inputs[s]).data();
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i];
      }
      break;
    }

    case OpKind::mul: {
      const auto& a = in(0);
      const auto& b = in(1);
      if (needs(0)) {
        auto g = grad_slot(n.inputs[0]).data();
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * b[i];
      }
      if (needs(1)) {
        auto g = grad_slot(n.inputs[1]).data();
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * a[i];
      }
      break;
    }

    case OpKind::log: {
      const auto& x = in(0);
      auto g = grad_slot(n.inputs[0]).data();
      for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] / x[i];
      break;
    }

    case OpKind::exp: {
      auto g = grad_slot(n.inputs[0]).data();
      for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * n.value[i];
      break;
    }

    case OpKind::sum: {
      auto g = grad_slot(n.inputs[0]).data();
      for (auto& v : g) v += dy[0];
      break;
    }

    case OpKind::softmax_cross_entropy: {
      const std::size_t nr = n.labels.size();
      const std::size_t c = n.cache.size() / nr;
      auto g = grad_slot(n.inputs[0]).data();
      const T s = dy[0] / T(nr);
      for (std::size_t r = 0; r < nr; ++r)
        for (std::size_t j = 0; j < c; ++j) {
          const T onehot = j == std::size_t(n.labels[r]) ? T(1) : T(0);
          g[r * c + j] += s * (n.cache[r * c + j] - onehot);
        }
      break;
    }

    case OpKind::contrast_log_prob: {
      const std::size_t nr = n.shape[0];
      const std::size_t k = n.cache.size() / nr - 1;
      if (needs(0)) {
        auto g = grad_slot(n.inputs[0]).data();
        for (std::size_t r = 0; r < nr; ++r) g[r] += dy[r] * (T(1) - n.cache[r * (k + 1)]);
      }
      if (needs(1)) {
        auto g = grad_slot(n.inputs[1]).data();
        for (std::size_t r = 0; r < nr; ++r)
          for (std::size_t j = 0; j < k; ++j) g[r * k + j] -= dy[r] * n.cache[r * (k + 1) + j + 1];
      }
      break;
    }

    case OpKind::slice_rows: {
      auto& gx = grad_slot(n.inputs[0]);
      const std::size_t stride = gx.row_stride();
      auto g = gx.data();
      for (std::size_t i = 0; i < dy.size(); ++i) g[n.begin * stride + i] += dy[i];
      break;
    }
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace hsa
