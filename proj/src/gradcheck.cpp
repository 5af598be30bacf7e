#include "sos/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "sos/errors.hpp"

namespace sos {

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h) {
  if (!(h > 0.0)) throw UsageError("finite_difference_check: h must be positive");
  const bool had_grad = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor out = f(x);
  if (out.has_record()) out.backward();
  std::vector<double> analytic(x.grad().begin(), x.grad().end());

  NoGradGuard no_grad;
  auto values = x.mutable_data();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double plus = f(x).item();
    values[i] = saved - h;
    const double minus = f(x).item();
    values[i] = saved;
    const double numeric = (plus - minus) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(numeric)));
  }
  x.set_requires_grad(had_grad);
  return worst;
}

}  // namespace sos
