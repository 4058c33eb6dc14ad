#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "magic/autodiff.hpp"

namespace magic {

struct FiniteDiffOptions {
  double eps = 1e-4;
  /// 0 checks every element; otherwise a seeded random subset per parameter.
  std::size_t max_elements_per_param = 0;
  std::uint64_t seed = 0;
  /// Denominator floor for the relative error, so exact zeros compare sanely.
  double denom_floor = 1e-6;
};

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Elements whose +-eps probe changed a ReLU/clamp/pool decision.
  std::size_t skipped_nonsmooth = 0;
  std::string worst;
};

/// Compares reverse-mode gradients against central differences for every
/// (or a sampled subset of every) element of `params`. `build_loss` must
/// bind the parameters with `Graph::param` and return a scalar node.
inline FiniteDiffReport finite_diff_check(const std::function<NodeId(Graph<double>&)>& build_loss,
                                          std::span<Parameter<double>* const> params,
                                          const FiniteDiffOptions& opt = {}) {
  for (Parameter<double>* p : params) {
    p->tensor.ensure_grad();
    p->tensor.zero_grad();
  }
  std::uint64_t base_signature = 0;
  {
    Graph<double> g;
    g.track_nonsmooth(true);
    NodeId loss = build_loss(g);
    g.backward(loss);
    base_signature = g.nonsmooth_signature();
  }
  auto evaluate = [&](std::uint64_t& signature) {
    Graph<double> g(false);
    g.track_nonsmooth(true);
    NodeId loss = build_loss(g);
    signature = g.nonsmooth_signature();
    return g.value(loss).values()[0];
  };

  FiniteDiffReport report;
  std::mt19937_64 rng(opt.seed);
  for (Parameter<double>* p : params) {
    const Eigen::Index n = p->tensor.values().size();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    if (opt.max_elements_per_param != 0 && idx.size() > opt.max_elements_per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_elements_per_param);
    }
    const auto analytic = p->tensor.grad();
    for (Eigen::Index i : idx) {
      double& v = p->tensor.values()[i];
      const double saved = v;
      std::uint64_t sig_plus = 0, sig_minus = 0;
      v = saved + opt.eps;
      const double f_plus = evaluate(sig_plus);
      v = saved - opt.eps;
      const double f_minus = evaluate(sig_minus);
      v = saved;
      if (sig_plus != base_signature || sig_minus != base_signature) {
        ++report.skipped_nonsmooth;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * opt.eps);
      const double a = analytic[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.denom_floor});
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = p->name + "[" + std::to_string(i) + "] analytic=" + std::to_string(a) +
                       " numeric=" + std::to_string(numeric);
      }
    }
  }
  return report;
}

}  // namespace magic
