#include "dedupkit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/students_t.hpp>

#include "dedupkit/error.hpp"

namespace dedupkit {

PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ValidationError("paired t-test needs equal-length samples");
  }
  if (a.size() < 2) throw ValidationError("paired t-test needs at least 2 pairs");
  PairedTTest r;
  r.n = a.size();
  const double n = static_cast<double>(r.n);
  double sum = 0.0;
  for (std::size_t i = 0; i < r.n; ++i) sum += a[i] - b[i];
  r.mean_diff = sum / n;
  double ss = 0.0;
  for (std::size_t i = 0; i < r.n; ++i) {
    const double e = (a[i] - b[i]) - r.mean_diff;
    ss += e * e;
  }
  r.sd_diff = std::sqrt(ss / (n - 1.0));
  // Differences that agree up to rounding count as identical.
  double scale = 0.0;
  for (std::size_t i = 0; i < r.n; ++i) scale = std::max(scale, std::abs(a[i] - b[i]));
  if (r.sd_diff <= 1e-12 * scale || r.sd_diff == 0.0) {
    r.degenerate = true;
    if (r.mean_diff == 0.0) {
      r.t = 0.0;
      r.p_two_sided = 1.0;
      r.p_greater = 0.5;
    } else {
      r.t = std::copysign(std::numeric_limits<double>::infinity(), r.mean_diff);
      r.p_two_sided = 0.0;
      r.p_greater = r.mean_diff > 0.0 ? 0.0 : 1.0;
    }
    return r;
  }
  r.t = r.mean_diff * std::sqrt(n) / r.sd_diff;
  const boost::math::students_t dist(n - 1.0);
  const double upper = boost::math::cdf(boost::math::complement(dist, r.t));
  const double tail = boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  r.p_two_sided = std::min(1.0, 2.0 * tail);
  r.p_greater = upper;
  return r;
}

}  // namespace dedupkit
