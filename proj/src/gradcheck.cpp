#include "dsre/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dsre {

GradCheckReport finite_diff_check(const Objective& objective, std::span<ag::Parameter* const> params,
                                  double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");

  for (ag::Parameter* p : params) p->zero_grad();
  std::vector<std::int32_t> base_trace;
  {
    ag::Graph g(ag::Mode::Train);
    ag::Var out = objective(g);
    g.backward(out);
    base_trace = g.argmax_trace();
  }

  auto probe = [&](std::vector<std::int32_t>& trace) {
    ag::Graph g(ag::Mode::Frozen);
    const double v = objective(g).value().item();
    trace = g.argmax_trace();
    return v;
  };

  GradCheckReport report;
  std::vector<std::int32_t> trace_plus, trace_minus;
  for (ag::Parameter* p : params) {
    const Tensor analytic = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double f_plus = probe(trace_plus);
      p->value[i] = saved - h;
      const double f_minus = probe(trace_minus);
      p->value[i] = saved;

      if (trace_plus != base_trace || trace_minus != base_trace) {
        report.skipped.push_back({p->name, i});
        continue;
      }
      const double central = (f_plus - f_minus) / (2.0 * h);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(central), 1e-8});
      const double rel = std::abs(a - central) / denom;
      ++report.checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_parameter = p->name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace dsre
