#pragma once

// Central finite-difference verification of analytic gradients. Runs the
// caller-supplied loss builder on fresh graphs; intended for the 64-bit
// instantiation (the 1e-3 tolerance is not reachable in 32-bit).

#include <algorithm>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "mapclip/graph.hpp"
#include "mapclip/nn.hpp"
#include "mapclip/rng.hpp"

namespace mapclip::numerics {

struct GradCheckEntry {
  std::string param;
  int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool all_pass = true;
  double max_rel_err = 0.0;

  const GradCheckEntry* worst() const {
    const GradCheckEntry* w = nullptr;
    for (const auto& e : entries)
      if (w == nullptr || e.rel_err > w->rel_err) w = &e;
    return w;
  }
};

inline double grad_rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// build must construct the loss from the *current* parameter values each
// time it is called. sample_fraction picks that share of each parameter's
// entries (at least min_per_param, at most all of them).
template <typename R>
GradCheckReport finite_diff_check(const std::function<Var<R>(Graph<R>&)>& build,
                                  const std::vector<std::shared_ptr<Parameter<R>>>& params,
                                  double sample_fraction, double step, double tol,
                                  SeededStream& rng, int min_per_param = 1) {
  for (auto& p : params) p->zero_grad();
  std::vector<Tensor<R>> analytic;
  {
    Graph<R> g;
    Var<R> loss = build(g);
    require(loss.val().numel() == 1, "finite_diff_check: loss must be scalar");
    g.backward(loss);
  }
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p->grad);

  auto eval_loss = [&]() -> double {
    Graph<R> g;
    g.set_recording(false);
    return static_cast<double>(build(g).val().data[0]);
  };

  GradCheckReport report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter<R>& p = *params[pi];
    const int64_t n = p.value.numel();
    int64_t want = std::max<int64_t>(min_per_param,
                                     static_cast<int64_t>(std::llround(sample_fraction * static_cast<double>(n))));
    want = std::min(want, n);
    std::set<int64_t> picked;
    while (static_cast<int64_t>(picked.size()) < want)
      picked.insert(rng.uniform_int(0, n - 1));
    for (int64_t idx : picked) {
      const R orig = p.value.data[static_cast<size_t>(idx)];
      p.value.data[static_cast<size_t>(idx)] = orig + static_cast<R>(step);
      const double lp = eval_loss();
      p.value.data[static_cast<size_t>(idx)] = orig - static_cast<R>(step);
      const double lm = eval_loss();
      p.value.data[static_cast<size_t>(idx)] = orig;
      GradCheckEntry e;
      e.param = p.name;
      e.index = idx;
      e.analytic = static_cast<double>(analytic[pi].data[static_cast<size_t>(idx)]);
      e.numeric = (lp - lm) / (2.0 * step);
      e.rel_err = grad_rel_err(e.analytic, e.numeric);
      e.pass = e.rel_err <= tol;
      report.all_pass = report.all_pass && e.pass;
      report.max_rel_err = std::max(report.max_rel_err, e.rel_err);
      report.entries.push_back(std::move(e));
    }
  }
  return report;
}

}  // namespace mapclip::numerics
