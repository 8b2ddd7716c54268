#include "hsa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <type_traits>

namespace hsa {

namespace {

template <class T>
std::vector<std::vector<std::int8_t>> relu_signs(const Graph<T>& g) {
  std::vector<std::vector<std::int8_t>> out;
  for (std::uint32_t i = 0; i < g.size(); ++i) {
    const auto& n = g.node(NodeId{i});
    if (n.kind != OpKind::relu) continue;
    const auto& x = g.value(n.inputs[0]);
    std::vector<std::int8_t> s(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) s[j] = x[j] > 0 ? 1 : (x[j] < 0 ? -1 : 0);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

template <class T>
GradCheckReport finite_diff_check(Graph<T>& graph, NodeId loss, double epsilon) {
  if constexpr (!std::is_same_v<T, double>) {
    (void)graph;
    (void)loss;
    (void)epsilon;
    throw std::invalid_argument("finite_diff_check requires a double-precision graph");
  } else {
    if (!(epsilon > 0 && epsilon <= 1e-2)) throw std::invalid_argument("finite_diff_check: epsilon must lie in (0, 1e-2]");
    const ForwardOptions frozen{.update_running_stats = false};
    graph.evaluate(frozen);
    const auto base_signs = relu_signs(graph);
    const Gradients<T> analytic = graph.backward(loss);

    auto loss_at = [&](std::vector<std::vector<std::int8_t>>& signs) {
      graph.evaluate(frozen);
      signs = relu_signs(graph);
      return double(graph.value(loss)[0]);
    };

    GradCheckReport report;
    for (const auto& [name, grad] : analytic) {
      const auto id = graph.find(name);
      const bool is_param = id && graph.node(*id).kind == OpKind::parameter;
      Tensor<T> input_copy;
      if (!is_param) input_copy = graph.value(*id);
      auto target = [&]() -> Tensor<T>& { return is_param ? graph.params()->get(name) : input_copy; };
      double worst = 0;
      for (std::size_t i = 0; i < grad.size(); ++i) {
        const T orig = target()[i];
        std::vector<std::vector<std::int8_t>> s_plus, s_minus;
        target()[i] = orig + T(epsilon);
        if (!is_param) graph.bind(name, input_copy);
        const double lp = loss_at(s_plus);
        target()[i] = orig - T(epsilon);
        if (!is_param) graph.bind(name, input_copy);
        const double lm = loss_at(s_minus);
        target()[i] = orig;
        if (!is_param) graph.bind(name, input_copy);

        bool kink = false;
        for (std::size_t r = 0; r < base_signs.size() && !kink; ++r)
          for (std::size_t j = 0; j < base_signs[r].size(); ++j)
            if (s_plus[r][j] != base_signs[r][j] || s_minus[r][j] != base_signs[r][j]) {
              kink = true;
              break;
            }
        if (kink) {
          ++report.excluded;
          continue;
        }
        const double numeric = (lp - lm) / (2 * epsilon);
        const double a = double(grad[i]);
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(a - numeric) / denom);
        ++report.checked;
      }
      if (!is_param) graph.evaluate(frozen);
      report.max_rel_error[name] = worst;
      report.worst = std::max(report.worst, worst);
    }
    graph.evaluate(frozen);
    return report;
  }
}

template GradCheckReport finite_diff_check<float>(Graph<float>&, NodeId, double);
template GradCheckReport finite_diff_check<double>(Graph<double>&, NodeId, double);

}  // namespace hsa
