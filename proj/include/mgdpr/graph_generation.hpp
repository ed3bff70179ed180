#pragma once

// Per-day multi-relational stock graphs from signal energy and information
// entropy of raw indicator windows.
//
//   E(x) = sum_o x[o]^2
//   H(x) = -sum_m p_m ln p_m,  p_m = (occurrences of the m-th distinct value) / tau
//   a_ij = E(x_i) / E(x_j) * exp(H(x_i) - H(x_j))
//
// a_ij weighs the directed edge from stock i to stock j. The matrix has a
// unit diagonal and a_ij * a_ji = 1.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgdpr/error.hpp"
#include "mgdpr/io.hpp"
#include "mgdpr/market_data.hpp"
#include "mgdpr/tensor.hpp"

namespace mgdpr {

inline constexpr double kMinSignalEnergy = 1e-12;

// Values equal after rounding to this many decimals count as one symbol.
inline constexpr double kEntropyQuantum = 1e9;

inline double signal_energy(std::span<const double> x) {
  if (x.empty()) throw UsageError("signal_energy: empty sequence");
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

inline double information_entropy(std::span<const double> x) {
  if (x.empty()) return 0.0;
  std::vector<double> keys(x.size());
  std::transform(x.begin(), x.end(), keys.begin(), [](double v) { return std::round(v * kEntropyQuantum); });
  std::sort(keys.begin(), keys.end());
  const double n = static_cast<double>(keys.size());
  double h = 0.0;
  for (std::size_t i = 0; i < keys.size();) {
    std::size_t j = i;
    while (j < keys.size() && keys[j] == keys[i]) ++j;
    const double p = static_cast<double>(j - i) / n;
    h -= p * std::log(p);
    i = j;
  }
  return h;
}

// `window` is N x tau (one raw series per row); returns the N x N adjacency.
inline Tensor build_adjacency(const Tensor& window) {
  if (window.rank() != 2) throw DimensionError("build_adjacency: expected N x tau, got " + shape_str(window.shape()));
  const std::size_t N = window.dim(0), tau = window.dim(1);
  std::vector<double> energy(N), entropy(N);
  for (std::size_t i = 0; i < N; ++i) {
    auto row = window.values().subspan(i * tau, tau);
    energy[i] = signal_energy(row);
    if (energy[i] < kMinSignalEnergy) {
      throw DegenerateSeriesError("stock " + std::to_string(i) + " has signal energy " +
                                  io::format_double(energy[i]) + " below " + io::format_double(kMinSignalEnergy));
    }
    entropy[i] = information_entropy(row);
  }
  Tensor a(Shape{N, N}, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      a.at(i, j) = i == j ? 1.0 : energy[i] / energy[j] * std::exp(entropy[i] - entropy[j]);
    }
  }
  return a;
}

// Divides each row by its sum.
inline Tensor row_normalize(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("row_normalize: expected a matrix, got " + shape_str(a.shape()));
  Tensor out = a;
  const std::size_t n = a.dim(0), m = a.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += a.at(i, j);
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) = a.at(i, j) / s;
  }
  return out;
}

struct MultiRelAdjacency {
  std::size_t end_day = 0;
  std::vector<Tensor> raw;         // one N x N matrix per indicator
  std::vector<Tensor> normalized;  // row-normalized copies of `raw`

  const std::vector<Tensor>& select(bool use_normalized) const { return use_normalized ? normalized : raw; }
};

// Graphs for the window of `window` days ending at `end_day`, built from the
// panel's raw (unscaled) values.
inline MultiRelAdjacency build_day_graphs(const MarketPanel& panel, std::size_t end_day, std::size_t window) {
  if (window == 0 || end_day + 1 < window || end_day >= panel.num_days()) {
    throw GraphError("day " + std::to_string(end_day) + " is outside [" + std::to_string(window ? window - 1 : 0) +
                     ", " + std::to_string(panel.num_days() - 1) + "] for window " + std::to_string(window));
  }
  const std::size_t N = panel.num_stocks();
  const std::size_t start = end_day + 1 - window;
  MultiRelAdjacency g;
  g.end_day = end_day;
  for (std::size_t r = 0; r < kNumIndicators; ++r) {
    Tensor x(Shape{N, window}, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t o = 0; o < window; ++o) x.at(i, o) = panel.value(i, r, start + o);
    }
    try {
      g.raw.push_back(build_adjacency(x));
    } catch (const DegenerateSeriesError&) {
      std::string who;
      for (std::size_t i = 0; i < N; ++i) {
        if (signal_energy(x.values().subspan(i * window, window)) < kMinSignalEnergy) who = panel.tickers[i];
      }
      throw DegenerateSeriesError("degenerate " + std::string(kIndicatorNames[r]) + " series for stock " + who +
                                  " on day " + std::to_string(end_day) + " (" + panel.calendar[end_day].str() + ")");
    }
    g.normalized.push_back(row_normalize(g.raw.back()));
  }
  return g;
}

// Same construction from a sample's raw window (indicators x N x tau).
inline MultiRelAdjacency build_sample_graphs(const Tensor& raw_window, std::size_t end_day) {
  if (raw_window.rank() != 3) throw DimensionError("expected indicators x N x tau window");
  const std::size_t R = raw_window.dim(0), N = raw_window.dim(1), tau = raw_window.dim(2);
  MultiRelAdjacency g;
  g.end_day = end_day;
  for (std::size_t r = 0; r < R; ++r) {
    Tensor x(Shape{N, tau}, std::vector<double>(raw_window.values().begin() + static_cast<std::ptrdiff_t>(r * N * tau),
                                                 raw_window.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * N * tau)));
    g.raw.push_back(build_adjacency(x));
    g.normalized.push_back(row_normalize(g.raw.back()));
  }
  return g;
}

// ---- graph cache -----------------------------------------------------------
// One CSV per (day, relation) with header i,j,weight and 17 significant
// digits, for both the raw and the row-normalized matrix, plus index.json.

inline std::string adjacency_csv(const Tensor& a) {
  std::string out = "i,j,weight\n";
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < a.dim(1); ++j) {
      out += std::to_string(i) + "," + std::to_string(j) + "," + io::format_double(a.at(i, j)) + "\n";
    }
  }
  return out;
}

inline Tensor parse_adjacency_csv(const std::string& text, std::size_t n, const std::string& where) {
  Tensor a(Shape{n, n}, 0.0);
  std::vector<bool> seen(n * n, false);
  std::size_t line_no = 0, start = 0;
  bool header = true;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + start, end - start);
    start = end + 1;
    ++line_no;
    if (io::trim(line).empty()) continue;
    if (header) {
      if (io::trim(line) != "i,j,weight") throw FormatError(where + ":1: expected header i,j,weight");
      header = false;
      continue;
    }
    auto f = io::split(line);
    auto i = f.size() == 3 ? io::parse_int(f[0]) : std::nullopt;
    auto j = f.size() == 3 ? io::parse_int(f[1]) : std::nullopt;
    auto w = f.size() == 3 ? io::parse_double(f[2]) : std::nullopt;
    if (!i || !j || !w || *i < 0 || *j < 0 || static_cast<std::size_t>(*i) >= n || static_cast<std::size_t>(*j) >= n) {
      throw FormatError(where + ":" + std::to_string(line_no) + ": malformed edge row");
    }
    const std::size_t idx = static_cast<std::size_t>(*i) * n + static_cast<std::size_t>(*j);
    a[idx] = *w;
    seen[idx] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw FormatError(where + ": adjacency is missing edges");
  }
  return a;
}

inline std::string graph_file_name(std::size_t day, std::size_t relation, bool normalized) {
  return "day" + std::to_string(day) + "_" + std::string(kIndicatorNames[relation]) + (normalized ? "_norm" : "") +
         ".csv";
}

inline void write_day_graphs(const MultiRelAdjacency& g, const std::filesystem::path& dir) {
  for (std::size_t r = 0; r < g.raw.size(); ++r) {
    io::write_file(dir / graph_file_name(g.end_day, r, false), adjacency_csv(g.raw[r]));
    io::write_file(dir / graph_file_name(g.end_day, r, true), adjacency_csv(g.normalized[r]));
  }
}

inline nlohmann::ordered_json graph_index(const MarketPanel& panel, std::size_t window,
                                          const std::vector<std::size_t>& days) {
  nlohmann::ordered_json idx;
  idx["window"] = window;
  idx["num_stocks"] = panel.num_stocks();
  idx["tickers"] = panel.tickers;
  std::vector<std::string> rel(kIndicatorNames.begin(), kIndicatorNames.end());
  idx["relations"] = rel;
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  for (std::size_t d : days) {
    nlohmann::ordered_json e;
    e["day"] = d;
    e["date"] = panel.calendar[d].str();
    std::vector<std::string> raw, norm;
    for (std::size_t r = 0; r < kNumIndicators; ++r) {
      raw.push_back(graph_file_name(d, r, false));
      norm.push_back(graph_file_name(d, r, true));
    }
    e["raw"] = raw;
    e["normalized"] = norm;
    entries.push_back(e);
  }
  idx["days"] = entries;
  return idx;
}

inline MultiRelAdjacency read_day_graphs(const std::filesystem::path& dir, std::size_t day, std::size_t n) {
  MultiRelAdjacency g;
  g.end_day = day;
  for (std::size_t r = 0; r < kNumIndicators; ++r) {
    for (bool norm : {false, true}) {
      const auto path = dir / graph_file_name(day, r, norm);
      if (!std::filesystem::exists(path)) throw ConfigError("missing graph file " + path.string());
      (norm ? g.normalized : g.raw).push_back(parse_adjacency_csv(io::read_file(path), n, path.string()));
    }
  }
  return g;
}

}  // namespace mgdpr
