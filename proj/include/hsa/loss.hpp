#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hsa/graph.hpp"

namespace hsa {

struct LossWeights {
  double anchor = 1.0 / 3.0;
  double positive = 1.0 / 3.0;
  double mixed = 1.0 / 3.0;

  /// Exactly three weights (anchor, positive, mixed).
  static LossWeights from(std::span<const double> w);
  bool operator==(const LossWeights&) const = default;
};

/// Which query terms are present. The weights of the active terms are
/// rescaled to sum to one.
struct LossTerms {
  bool positive = true;  // q_p pulled to k_a and k_p
  bool mixed = true;     // mixed query
  bool operator==(const LossTerms&) const = default;
};

LossWeights effective_weights(const LossWeights& w, const LossTerms& terms);

/// Graph nodes of one head. Queries carry gradients; keys, negatives and
/// lambda are constant inputs created by the builder. With `terms.positive`
/// off, q_p is unused and k_p may be omitted (anchor term is plain InfoNCE).
struct HeadQueries {
  NodeId q_a;
  std::optional<NodeId> q_p;
  std::optional<NodeId> q_mix;
};

struct HeadLossNodes {
  NodeId k_a, neg;
  std::optional<NodeId> k_p, lambda;
  NodeId anchor_term;  // mean over the batch
  std::optional<NodeId> positive_term, mixed_term;
  NodeId total;
};

/// Appends the loss of one head. Input names are prefixed with `prefix`:
/// <prefix>.k_a, .k_p, .neg [K, D], .lambda [B].
template <class T>
HeadLossNodes build_head_loss(Graph<T>& g, const std::string& prefix, const HeadQueries& q, std::size_t num_negatives,
                              double tau, const LossWeights& weights, const LossTerms& terms);

/// Per-row -log(exp(q.k/tau) / (exp(q.k/tau) + sum_i exp(q.n_i/tau))) -> [B].
template <class T>
NodeId build_info_nce_rows(Graph<T>& g, NodeId q, NodeId k, NodeId neg, double tau);

// -- scalar evaluation --------------------------------------------------------
// Batched inputs: q, k [B, D]; negatives [K, D]. Results are batch means.

template <class T>
double info_nce(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& negatives, double tau);

/// 1/2 [info_nce(q, k_a) + info_nce(q, k_p)].
template <class T>
double pair_loss(const Tensor<T>& q, const Tensor<T>& k_a, const Tensor<T>& k_p, const Tensor<T>& negatives,
                 double tau);

/// -[lambda log s(q, k_a) + (1 - lambda) log s(q, k_p)], lambda per row.
template <class T>
double mixed_loss(const Tensor<T>& q, const Tensor<T>& k_a, const Tensor<T>& k_p, const Tensor<T>& negatives,
                  double tau, std::span<const double> lambda);

template <class T>
struct ContrastInputs {
  Tensor<T> q_a, q_p, q_mix;
  Tensor<T> k_a, k_p;
  Tensor<T> negatives;
  std::vector<double> lambda;
};

/// Equal-weight combination of the three query terms for one stage head.
template <class T>
double stage_loss(const ContrastInputs<T>& in, double tau, const LossTerms& terms = {});

struct LossBreakdown {
  double total = 0;
  double main = 0;
  std::array<double, 3> main_terms{};  // anchor, positive, mixed
  std::map<int, double> stages;
  std::map<int, std::array<double, 3>> stage_terms;
};

/// Main head with `weights`, plus every stage head at equal weights.
template <class T>
LossBreakdown total_loss(const ContrastInputs<T>& main, const std::map<int, ContrastInputs<T>>& stages, double tau,
                         const LossWeights& weights = {}, const LossTerms& terms = {});

}  // namespace hsa
