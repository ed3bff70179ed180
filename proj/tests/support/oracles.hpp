#pragma once

// Brute-force reference implementations used only by tests.

#include <cmath>
#include <map>
#include <vector>

namespace mgdpr::testing {

// Shannon entropy of integer-valued data from an explicit histogram.
inline double histogram_entropy(const std::vector<long long>& xs) {
  std::map<long long, int> hist;
  for (long long x : xs) ++hist[x];
  double h = 0.0;
  for (const auto& [value, count] : hist) {
    const double p = static_cast<double>(count) / static_cast<double>(xs.size());
    h += -p * std::log(p);
  }
  return h;
}

inline double squared_sum(const std::vector<long long>& xs) {
  double s = 0.0;
  for (long long x : xs) s += static_cast<double>(x) * static_cast<double>(x);
  return s;
}

inline double edge_weight_oracle(const std::vector<long long>& from, const std::vector<long long>& to) {
  return squared_sum(from) / squared_sum(to) * std::exp(histogram_entropy(from) - histogram_entropy(to));
}

}  // namespace mgdpr::testing
