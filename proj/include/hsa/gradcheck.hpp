#pragma once

#include <map>
#include <string>

#include "hsa/graph.hpp"

namespace hsa {

struct GradCheckReport {
  /// Worst relative error per parameter / input name.
  std::map<std::string, double> max_rel_error;
  double worst = 0.0;
  std::size_t checked = 0;
  /// Elements skipped because a perturbation moved some relu input across 0.
  std::size_t excluded = 0;
};

/// Compares backward() against central differences for every element of
/// every trainable parameter and gradient-requiring input. Relative error is
/// |a - n| / max(|a|, |n|, 1e-8). Only defined at double precision; a float
/// graph is rejected. Batchnorm running statistics are left untouched.
template <class T>
GradCheckReport finite_diff_check(Graph<T>& graph, NodeId loss, double epsilon);

}  // namespace hsa
