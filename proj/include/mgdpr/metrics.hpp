#pragma once

// Binary classification metrics with "up" (label 1) as the positive class.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mgdpr/error.hpp"

namespace mgdpr {

struct Confusion {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }

  void add(int predicted, int truth) {
    if (predicted == 1 && truth == 1) ++tp;
    else if (predicted == 0 && truth == 0) ++tn;
    else if (predicted == 1 && truth == 0) ++fp;
    else ++fn;
  }

  // Counts are additive, so partial confusions merge in any order.
  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }

  friend bool operator==(const Confusion&, const Confusion&) = default;
};

inline void check_binary(std::span<const int> v, const char* what) {
  for (int x : v) {
    if (x != 0 && x != 1) throw DataError(std::string(what) + " must be 0 or 1, got " + std::to_string(x));
  }
}

inline Confusion confusion(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) {
    throw UsageError("confusion: " + std::to_string(predicted.size()) + " predictions for " +
                     std::to_string(truth.size()) + " labels");
  }
  check_binary(predicted, "predictions");
  check_binary(truth, "labels");
  Confusion c;
  for (std::size_t i = 0; i < predicted.size(); ++i) c.add(predicted[i], truth[i]);
  return c;
}

inline double accuracy(const Confusion& c) {
  return c.total() ? static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total()) : 0.0;
}

inline double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  return accuracy(confusion(predicted, truth));
}

// Per-day prediction vectors against per-day truth vectors.
inline double accuracy(const std::vector<std::vector<int>>& predicted, const std::vector<std::vector<int>>& truth) {
  if (predicted.size() != truth.size()) throw UsageError("accuracy: day counts differ");
  Confusion c;
  for (std::size_t t = 0; t < predicted.size(); ++t) c += confusion(predicted[t], truth[t]);
  return accuracy(c);
}

// Matthews correlation; 0 when any marginal is empty.
inline double mcc(const Confusion& c) {
  const double tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
  const double fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (denom == 0.0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(denom);
}

inline double f1(const Confusion& c) {
  const std::uint64_t denom = 2 * c.tp + c.fp + c.fn;
  return denom ? 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom) : 0.0;
}

}  // namespace mgdpr
