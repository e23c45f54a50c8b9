#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace dedupkit {

// Cosine similarity kernels. Accumulation is sequential in double so that
// every caller (including test oracles) sees bit-identical similarities.
inline double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return acc;
}

inline double dot(std::span<const float> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += static_cast<double>(a[i]) * b[i];
  }
  return acc;
}

template <typename T>
double norm(std::span<const T> a) {
  double acc = 0.0;
  for (T v : a) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

}  // namespace dedupkit
