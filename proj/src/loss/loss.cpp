#include "hsa/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace hsa {

namespace {

void check_tau(double tau) {
  if (!(tau > 0)) throw std::invalid_argument("temperature must be > 0, got " + std::to_string(tau));
}

template <class T>
NodeId batch_mean(Graph<T>& g, NodeId rows) {
  return g.scale(g.sum(rows), 1.0 / double(g.node(rows).shape.at(0)));
}

template <class T>
Tensor<T> lambda_tensor(std::span<const double> lambda) {
  Tensor<T> t({lambda.size()});
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    if (!(lambda[i] >= 0 && lambda[i] <= 1))
      throw std::invalid_argument("lambda must lie in [0, 1], got " + std::to_string(lambda[i]));
    t[i] = T(lambda[i]);
  }
  return t;
}

template <class T>
void check_batch(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& neg) {
  if (q.rank() != 2 || k.shape() != q.shape() || neg.rank() != 2 || neg.dim(1) != q.dim(1))
    throw std::invalid_argument("loss inputs: queries " + to_string(q.shape()) + ", keys " + to_string(k.shape()) +
                                ", negatives " + to_string(neg.shape()) + " do not align");
}

template <class T>
double run_scalar(Graph<T>& g, NodeId out, const Bindings<T>& b) {
  g.forward(b);
  return double(g.value(out)[0]);
}

}  // namespace

LossWeights LossWeights::from(std::span<const double> w) {
  if (w.size() != 3) throw std::invalid_argument("loss weights: expected 3 values, got " + std::to_string(w.size()));
  return {w[0], w[1], w[2]};
}

LossWeights effective_weights(const LossWeights& w, const LossTerms& terms) {
  const double a = w.anchor, p = terms.positive ? w.positive : 0.0, m = terms.mixed ? w.mixed : 0.0;
  const double s = a + p + m;
  if (!(s > 0) || a < 0 || p < 0 || m < 0) throw std::invalid_argument("loss weights must be >= 0 with a positive sum");
  return {a / s, p / s, m / s};
}

template <class T>
NodeId build_info_nce_rows(Graph<T>& g, NodeId q, NodeId k, NodeId neg, double tau) {
  check_tau(tau);
  const NodeId pos = g.scale(g.dot(q, k), 1.0 / tau);
  const NodeId negs = g.scale(g.linear(q, neg), 1.0 / tau);
  return g.scale(g.contrast_log_prob(pos, negs), -1.0);
}

template <class T>
HeadLossNodes build_head_loss(Graph<T>& g, const std::string& prefix, const HeadQueries& q, std::size_t num_negatives,
                              double tau, const LossWeights& weights, const LossTerms& terms) {
  check_tau(tau);
  const LossWeights w = effective_weights(weights, terms);
  const Shape qs = g.node(q.q_a).shape;
  if (qs.size() != 2) throw std::invalid_argument("build_head_loss: queries must be [B, D]");
  const std::size_t b = qs[0], d = qs[1];
  if (terms.positive && !q.q_p) throw std::invalid_argument("build_head_loss: positive term needs q_p");
  if (terms.mixed && !q.q_mix) throw std::invalid_argument("build_head_loss: mixed term needs q_mix");

  HeadLossNodes h;
  h.k_a = g.input(prefix + ".k_a", {b, d});
  h.neg = g.input(prefix + ".neg", {num_negatives, d});
  const bool pair = terms.positive || terms.mixed;
  if (pair) h.k_p = g.input(prefix + ".k_p", {b, d});

  // Anchor term: plain InfoNCE without a mined positive, the pair form otherwise.
  auto pair_rows = [&](NodeId query) {
    const NodeId a = build_info_nce_rows(g, query, h.k_a, h.neg, tau);
    const NodeId p = build_info_nce_rows(g, query, *h.k_p, h.neg, tau);
    return g.scale(g.add(a, p), 0.5);
  };
  h.anchor_term = batch_mean(g, pair ? pair_rows(q.q_a) : build_info_nce_rows(g, q.q_a, h.k_a, h.neg, tau));
  NodeId total = g.scale(h.anchor_term, w.anchor);
  if (terms.positive) {
    h.positive_term = batch_mean(g, pair_rows(*q.q_p));
    total = g.add(total, g.scale(*h.positive_term, w.positive));
  }
  if (terms.mixed) {
    h.lambda = g.input(prefix + ".lambda", {b});
    const NodeId la = g.mul(build_info_nce_rows(g, *q.q_mix, h.k_a, h.neg, tau), *h.lambda);
    // (1 - lambda) * l_p = l_p - lambda * l_p
    const NodeId lp = build_info_nce_rows(g, *q.q_mix, *h.k_p, h.neg, tau);
    const NodeId rows = g.add(la, g.add(lp, g.scale(g.mul(lp, *h.lambda), -1.0)));
    h.mixed_term = batch_mean(g, rows);
    total = g.add(total, g.scale(*h.mixed_term, w.mixed));
  }
  h.total = total;
  g.set_name(h.total, prefix + ".loss");
  return h;
}

template <class T>
double info_nce(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& negatives, double tau) {
  check_tau(tau);
  check_batch(q, k, negatives);
  Graph<T> g;
  const auto qn = g.input("q", q.shape()), kn = g.input("k", k.shape()), nn = g.input("n", negatives.shape());
  const auto out = batch_mean(g, build_info_nce_rows(g, qn, kn, nn, tau));
  return run_scalar(g, out, {{"q", q}, {"k", k}, {"n", negatives}});
}

template <class T>
double pair_loss(const Tensor<T>& q, const Tensor<T>& k_a, const Tensor<T>& k_p, const Tensor<T>& negatives,
                 double tau) {
  check_tau(tau);
  check_batch(q, k_a, negatives);
  check_batch(q, k_p, negatives);
  Graph<T> g;
  const auto qn = g.input("q", q.shape());
  const auto an = g.input("ka", k_a.shape()), pn = g.input("kp", k_p.shape()), nn = g.input("n", negatives.shape());
  const auto rows = g.scale(g.add(build_info_nce_rows(g, qn, an, nn, tau), build_info_nce_rows(g, qn, pn, nn, tau)), 0.5);
  return run_scalar(g, batch_mean(g, rows), {{"q", q}, {"ka", k_a}, {"kp", k_p}, {"n", negatives}});
}

template <class T>
double mixed_loss(const Tensor<T>& q, const Tensor<T>& k_a, const Tensor<T>& k_p, const Tensor<T>& negatives,
                  double tau, std::span<const double> lambda) {
  check_tau(tau);
  check_batch(q, k_a, negatives);
  check_batch(q, k_p, negatives);
  if (lambda.size() != q.dim(0)) throw std::invalid_argument("mixed_loss: one lambda per query row is required");
  Graph<T> g;
  HeadQueries hq{g.input("q", q.shape()), std::nullopt, std::nullopt};
  hq.q_mix = hq.q_a;
  const auto h = build_head_loss(g, "h", hq, negatives.dim(0), tau, {0.0, 0.0, 1.0}, {false, true});
  g.forward({{"q", q}, {"h.k_a", k_a}, {"h.k_p", k_p}, {"h.neg", negatives}, {"h.lambda", lambda_tensor<T>(lambda)}});
  return double(g.value(*h.mixed_term)[0]);
}

namespace {

template <class T>
std::array<double, 3> head_terms(const ContrastInputs<T>& in, double tau, const LossWeights& w, const LossTerms& terms,
                                 double& total) {
  check_batch(in.q_a, in.k_a, in.negatives);
  const bool pair = terms.positive || terms.mixed;
  Graph<T> g;
  HeadQueries hq{g.input("qa", in.q_a.shape()), std::nullopt, std::nullopt};
  Bindings<T> b{{"qa", in.q_a}, {"h.k_a", in.k_a}, {"h.neg", in.negatives}};
  if (terms.positive) {
    hq.q_p = g.input("qp", in.q_p.shape());
    b["qp"] = in.q_p;
  }
  if (terms.mixed) {
    hq.q_mix = g.input("qm", in.q_mix.shape());
    b["qm"] = in.q_mix;
    b["h.lambda"] = lambda_tensor<T>(in.lambda);
  }
  if (pair) b["h.k_p"] = in.k_p;
  const auto h = build_head_loss(g, "h", hq, in.negatives.dim(0), tau, w, terms);
  g.forward(b);
  total = double(g.value(h.total)[0]);
  return {double(g.value(h.anchor_term)[0]), h.positive_term ? double(g.value(*h.positive_term)[0]) : 0.0,
          h.mixed_term ? double(g.value(*h.mixed_term)[0]) : 0.0};
}

}  // namespace

template <class T>
double stage_loss(const ContrastInputs<T>& in, double tau, const LossTerms& terms) {
  double total = 0;
  head_terms(in, tau, LossWeights{}, terms, total);
  return total;
}

template <class T>
LossBreakdown total_loss(const ContrastInputs<T>& main, const std::map<int, ContrastInputs<T>>& stages, double tau,
                         const LossWeights& weights, const LossTerms& terms) {
  LossBreakdown out;
  out.main_terms = head_terms(main, tau, weights, terms, out.main);
  out.total = out.main;
  for (const auto& [l, in] : stages) {
    if (in.q_a.dim(0) != main.q_a.dim(0)) throw std::invalid_argument("total_loss: stage " + std::to_string(l) + " batch differs");
    double v = 0;
    out.stage_terms[l] = head_terms(in, tau, LossWeights{}, terms, v);
    out.stages[l] = v;
    out.total += v;
  }
  return out;
}

#define HSA_INSTANTIATE(T)                                                                                         \
  template NodeId build_info_nce_rows<T>(Graph<T>&, NodeId, NodeId, NodeId, double);                               \
  template HeadLossNodes build_head_loss<T>(Graph<T>&, const std::string&, const HeadQueries&, std::size_t, double, \
                                            const LossWeights&, const LossTerms&);                                 \
  template double info_nce<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);                       \
  template double pair_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);    \
  template double mixed_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double,    \
                                std::span<const double>);                                                          \
  template double stage_loss<T>(const ContrastInputs<T>&, double, const LossTerms&);                               \
  template LossBreakdown total_loss<T>(const ContrastInputs<T>&, const std::map<int, ContrastInputs<T>>&, double,  \
                                       const LossWeights&, const LossTerms&);
HSA_INSTANTIATE(float)
HSA_INSTANTIATE(double)
#undef HSA_INSTANTIATE

}  // namespace hsa
