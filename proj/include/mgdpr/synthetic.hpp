#pragma once

// Synthetic OHLCV markets with a planted next-day rule, for demos and
// learning sanity checks.
//
// Each stock's close follows a trend-reverting walk: the direction of day t+1
// is the sign of  f(x) + xi,  where x is the raw close window ending at t,
//   f(x) = sum_o (c - o) x[o],  c = (tau - 1) / 2
// and xi ~ N(0, (noise * sd(f))^2) with sd(f) the spread f would have on
// i.i.d. values of the window's spread. f is zero on constant windows and keeps
// its sign under any positive affine rescaling of x, so the rule survives
// per-window standardization. Step sizes are random; open/high/low/volume are
// nuisance channels.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mgdpr/io.hpp"
#include "mgdpr/market_data.hpp"

namespace mgdpr::synthetic {

struct PlantedMarketConfig {
  std::size_t stocks = 12;
  std::size_t days = 60;
  std::size_t window = 21;
  double noise = 0.05;
  std::uint64_t seed = 7;
  Date start{2020, 1, 1};
};

// Weekdays from `start` on.
inline std::vector<Date> business_days(Date start, std::size_t count) {
  using namespace std::chrono;
  std::vector<Date> out;
  sys_days d{start.ymd()};
  while (out.size() < count) {
    const weekday wd{d};
    if (wd != Saturday && wd != Sunday) out.emplace_back(year_month_day(d));
    d += days{1};
  }
  return out;
}

// Minus the least-squares slope numerator: sum_o (center - o) x[o].
inline double planted_signal(std::span<const double> window) {
  const double center = 0.5 * static_cast<double>(window.size() - 1);
  double f = 0.0;
  for (std::size_t o = 0; o < window.size(); ++o) f += (center - static_cast<double>(o)) * window[o];
  return f;
}

inline std::vector<InstrumentSeries> planted_market(const PlantedMarketConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto calendar = business_days(cfg.start, cfg.days);
  std::vector<InstrumentSeries> out;
  for (std::size_t i = 0; i < cfg.stocks; ++i) {
    std::vector<double> close(cfg.days);
    close[0] = 20.0 + 80.0 * uni(rng);
    for (std::size_t t = 0; t + 1 < cfg.days; ++t) {
      const double step = 0.003 + 0.017 * uni(rng);
      double dir;
      if (t + 1 < cfg.window) {
        dir = uni(rng) < 0.5 ? -1.0 : 1.0;
      } else {
        std::span<const double> win(close.data() + t + 1 - cfg.window, cfg.window);
        double mean = 0.0, sq = 0.0;
        for (double v : win) mean += v;
        mean /= static_cast<double>(win.size());
        for (double v : win) sq += (v - mean) * (v - mean);
        const double sd = std::sqrt(sq / static_cast<double>(win.size()));
        double ramp = 0.0;
        for (std::size_t o = 0; o < win.size(); ++o) {
          const double c = 0.5 * static_cast<double>(win.size() - 1) - static_cast<double>(o);
          ramp += c * c;
        }
        dir = planted_signal(win) + cfg.noise * sd * std::sqrt(ramp) * gauss(rng) > 0.0 ? 1.0 : -1.0;
      }
      close[t + 1] = close[t] * (1.0 + dir * step);
    }
    InstrumentSeries s;
    s.ticker = "S" + std::string(i < 10 ? "0" : "") + std::to_string(i);
    s.dates = calendar;
    for (std::size_t t = 0; t < cfg.days; ++t) {
      const double prev = t ? close[t - 1] : close[t];
      const double open = prev * (1.0 + 0.004 * gauss(rng));
      const double high = std::max(open, close[t]) * (1.0 + 0.01 * uni(rng));
      const double low = std::min(open, close[t]) * (1.0 - 0.01 * uni(rng));
      const double volume = std::round(1e5 * std::exp(0.5 * gauss(rng)));
      s.bars.push_back({open, high, low, close[t], volume});
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string series_csv(const InstrumentSeries& s) {
  std::string out = "date,open,high,low,close,volume\n";
  for (std::size_t t = 0; t < s.dates.size(); ++t) {
    out += s.dates[t].str();
    for (double v : s.bars[t]) out += "," + io::format_double(v);
    out += "\n";
  }
  return out;
}

inline void write_market(const std::vector<InstrumentSeries>& market, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& s : market) io::write_file(dir / (s.ticker + ".csv"), series_csv(s));
}

}  // namespace mgdpr::synthetic
