#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "hsa/graph.hpp"

namespace hsa {

inline constexpr double kDefaultSgdMomentum = 0.9;
inline constexpr double kDefaultWeightDecay = 1e-4;

template <class T>
struct OptimState {
  std::map<std::string, Tensor<T>> velocity;
  std::uint64_t step = 0;
};

/// Momentum SGD with coupled weight decay over every parameter named in
/// `grads`: v <- momentum*v + g + weight_decay*theta; theta <- theta - lr*v.
template <class T>
void sgd_update(ParamStore<T>& params, const Gradients<T>& grads, OptimState<T>& state, double lr,
                double momentum = kDefaultSgdMomentum, double weight_decay = kDefaultWeightDecay);

/// base_lr * 0.5 * (1 + cos(pi * step / total_steps)).
double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr);

/// base_lr * factor^(floor(epoch / every)).
double step_lr(std::int64_t epoch, std::int64_t every, double factor, double base_lr);

}  // namespace hsa
