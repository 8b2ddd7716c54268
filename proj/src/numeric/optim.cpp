#include "hsa/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace hsa {

template <class T>
void sgd_update(ParamStore<T>& params, const Gradients<T>& grads, OptimState<T>& state, double lr,
                double momentum, double weight_decay) {
  if (!(lr >= 0)) throw std::invalid_argument("sgd_update: learning rate must be >= 0");
  for (const auto& [name, g] : grads) {
    auto& theta = params.get(name);
    if (g.shape() != theta.shape())
      throw std::invalid_argument("sgd_update: gradient shape " + to_string(g.shape()) + " does not match parameter '" + name + "' " + to_string(theta.shape()));
    for (T v : g.data())
      if (!std::isfinite(v)) throw std::domain_error("sgd_update: non-finite gradient for parameter '" + name + "'");
  }
  for (const auto& [name, g] : grads) {
    auto& theta = params.get(name);
    auto [it, fresh] = state.velocity.try_emplace(name, theta.shape());
    auto& v = it->second;
    if (v.shape() != theta.shape())
      throw std::invalid_argument("sgd_update: velocity for '" + name + "' has shape " + to_string(v.shape()));
    const T mu = T(momentum), wd = T(weight_decay), eta = T(lr);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = mu * v[i] + g[i] + wd * theta[i];
      theta[i] -= eta * v[i];
    }
  }
  ++state.step;
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr) {
  if (total_steps <= 0) throw std::invalid_argument("cosine_lr: total_steps must be positive");
  if (step < 0 || step > total_steps)
    throw std::out_of_range("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * double(step) / double(total_steps)));
}

double step_lr(std::int64_t epoch, std::int64_t every, double factor, double base_lr) {
  if (every <= 0) throw std::invalid_argument("step_lr: period must be positive");
  return base_lr * std::pow(factor, double(epoch / every));
}

template void sgd_update<float>(ParamStore<float>&, const Gradients<float>&, OptimState<float>&, double, double, double);
template void sgd_update<double>(ParamStore<double>&, const Gradients<double>&, OptimState<double>&, double, double, double);

}  // namespace hsa
