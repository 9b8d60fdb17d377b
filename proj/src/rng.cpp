#include "cvs/rng.hpp"

#include <cmath>
#include <numbers>

namespace cvs {

double standard_normal(Rng& rng) {
  // Box-Muller; the second variate is discarded so the stream position stays predictable.
  double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace cvs
