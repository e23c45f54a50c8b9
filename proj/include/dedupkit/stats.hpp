#pragma once

#include <cstddef>
#include <span>

namespace dedupkit {

struct PairedTTest {
  std::size_t n = 0;
  double mean_diff = 0.0;  // mean of a[i] - b[i]
  double sd_diff = 0.0;    // sample standard deviation (n - 1)
  double t = 0.0;
  double p_two_sided = 1.0;
  double p_greater = 0.5;  // H1: mean(a - b) > 0
  // All differences identical: t is +-inf (or 0 when they are all zero).
  bool degenerate = false;
};

// Paired Student t-test. Throws ValidationError on mismatched lengths or
// fewer than two pairs.
PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b);

}  // namespace dedupkit
