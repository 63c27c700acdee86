#include "enclab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "enclab/rng.hpp"

namespace enclab {

double grad_check(const std::function<Tensor()>& f, Tensor& x, float step,
                  int64_t max_coords, uint64_t seed) {
  if (step <= 0) throw std::invalid_argument("grad_check: step must be > 0");

  std::vector<float> analytic;
  {
    GradTape tape;
    x.set_requires_grad(true);
    Tensor y = f();
    tape.backward(y);
    analytic = x.has_grad()
                   ? std::vector<float>(x.grad().begin(), x.grad().end())
                   : std::vector<float>(static_cast<size_t>(x.numel()), 0.0f);
  }

  std::vector<int64_t> coords;
  const int64_t n = x.numel();
  if (max_coords > 0 && n > max_coords) {
    Rng rng(seed);
    std::vector<int64_t> all(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
    for (int64_t i = 0; i < max_coords; ++i) {
      int64_t j = i + rng.uniform_int(n - i);
      std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(j)]);
    }
    coords.assign(all.begin(), all.begin() + max_coords);
  } else {
    coords.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
  }

  double worst = 0.0;
  float* data = x.data();
  // The numeric side evaluates f with 64-bit shadows so the comparison is
  // not dominated by float32 rounding of intermediates.
  PreciseEval precise;
  for (int64_t c : coords) {
    const float orig = data[c];
    const float xp = orig + step;
    const float xm = orig - step;
    data[c] = xp;
    const double fp = f().item64();
    data[c] = xm;
    const double fm = f().item64();
    data[c] = orig;
    // denominator uses the difference of the perturbations actually stored
    const double numeric = (fp - fm) / (double(xp) - double(xm));
    const double a = analytic[static_cast<size_t>(c)];
    const double rel =
        std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-8);
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace enclab
