#pragma once

// OHLCV ingestion, calendar alignment and windowing into labelled samples.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgdpr/error.hpp"
#include "mgdpr/io.hpp"
#include "mgdpr/tensor.hpp"

namespace mgdpr {

// Calendar day, ISO-8601 on the wire.
class Date {
 public:
  Date() = default;
  explicit Date(std::chrono::year_month_day ymd) : ymd_(ymd) {}
  Date(int y, unsigned m, unsigned d)
      : ymd_(std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}) {}

  static std::optional<Date> parse(std::string_view s) {
    s = io::trim(s);
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
    auto y = io::parse_int(s.substr(0, 4));
    auto m = io::parse_int(s.substr(5, 2));
    auto d = io::parse_int(s.substr(8, 2));
    if (!y || !m || !d || *m < 1 || *d < 1) return std::nullopt;
    Date out(static_cast<int>(*y), static_cast<unsigned>(*m), static_cast<unsigned>(*d));
    if (!out.ymd_.ok()) return std::nullopt;
    return out;
  }

  static Date parse_or_throw(std::string_view s) {
    auto d = parse(s);
    if (!d) throw ConfigError("invalid date '" + std::string(s) + "', expected YYYY-MM-DD");
    return *d;
  }

  std::string str() const {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd_.year()),
                  static_cast<unsigned>(ymd_.month()), static_cast<unsigned>(ymd_.day()));
    return buf;
  }

  std::chrono::year_month_day ymd() const { return ymd_; }

  friend auto operator<=>(const Date&, const Date&) = default;

 private:
  std::chrono::year_month_day ymd_{};
};

// The five indicators, in the order they are stacked as relations.
enum class Indicator : std::size_t { Open = 0, High, Low, Close, Volume };
inline constexpr std::size_t kNumIndicators = 5;
inline constexpr std::array<std::string_view, kNumIndicators> kIndicatorNames = {"open", "high", "low",
                                                                               "close", "volume"};

using Bar = std::array<double, kNumIndicators>;

struct InstrumentSeries {
  std::string ticker;
  std::vector<Date> dates;  // strictly increasing
  std::vector<Bar> bars;    // one per date
};

struct LoadResult {
  std::vector<InstrumentSeries> series;
  std::size_t dropped_rows = 0;
  std::vector<std::string> warnings;  // "<file>:<line>: <reason>"
};

namespace detail {

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace detail

// Parses one CSV with header date,open,high,low,close,volume and an optional
// ticker column (long format). Without a ticker column the file stem names
// the instrument. Rows with a missing or unparsable field, nonpositive
// price, negative volume or a repeated date are dropped and counted.
inline LoadResult load_csv(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  const std::string file = path.string();
  std::vector<std::string_view> lines;
  {
    std::string_view rest = text;
    while (!rest.empty()) {
      auto nl = rest.find('\n');
      lines.push_back(rest.substr(0, nl));
      if (nl == std::string_view::npos) break;
      rest.remove_prefix(nl + 1);
    }
  }
  while (!lines.empty() && io::trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw FormatError(file + ":1: missing header");

  std::string_view header_line = lines[0];
  if (header_line.size() >= 3 && header_line.substr(0, 3) == "\xEF\xBB\xBF") header_line.remove_prefix(3);
  const auto header = io::split(header_line);
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[detail::lower(header[i])] = i;
  std::vector<std::string> missing;
  for (std::string_view name : {std::string_view("date"), std::string_view("open"), std::string_view("high"),
                                std::string_view("low"), std::string_view("close"), std::string_view("volume")}) {
    if (!column.count(std::string(name))) missing.emplace_back(name);
  }
  if (!missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw FormatError(file + ":1: header is missing column(s) " + names);
  }
  const std::optional<std::size_t> ticker_col =
      column.count("ticker") ? std::optional<std::size_t>(column["ticker"]) : std::nullopt;

  LoadResult result;
  std::map<std::string, std::map<Date, Bar>> rows;
  const std::string stem = path.stem().string();
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (io::trim(lines[ln]).empty()) continue;
    const auto fields = io::split(lines[ln]);
    auto drop = [&](const std::string& why) {
      ++result.dropped_rows;
      result.warnings.push_back(file + ":" + std::to_string(ln + 1) + ": " + why);
    };
    if (fields.size() != header.size()) {
      drop("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
      continue;
    }
    auto date = Date::parse(fields[column["date"]]);
    if (!date) {
      drop("unparsable date");
      continue;
    }
    Bar bar{};
    bool ok = true;
    for (std::size_t r = 0; r < kNumIndicators && ok; ++r) {
      auto v = io::parse_double(fields[column[std::string(kIndicatorNames[r])]]);
      if (!v || !std::isfinite(*v)) {
        drop("unparsable " + std::string(kIndicatorNames[r]));
        ok = false;
      } else if (r != static_cast<std::size_t>(Indicator::Volume) && *v <= 0.0) {
        drop("nonpositive " + std::string(kIndicatorNames[r]));
        ok = false;
      } else if (*v < 0.0) {
        drop("negative volume");
        ok = false;
      } else {
        bar[r] = *v;
      }
    }
    if (!ok) continue;
    std::string ticker = ticker_col ? std::string(fields[*ticker_col]) : stem;
    if (ticker.empty()) {
      drop("empty ticker");
      continue;
    }
    auto& by_date = rows[ticker];
    if (!by_date.emplace(*date, bar).second) drop("duplicate date " + date->str());
  }
  if (rows.empty()) throw EmptyInputError(file + ": no valid rows");

  for (auto& [ticker, by_date] : rows) {
    InstrumentSeries s;
    s.ticker = ticker;
    for (const auto& [d, b] : by_date) {
      s.dates.push_back(d);
      s.bars.push_back(b);
    }
    result.series.push_back(std::move(s));
  }
  return result;
}

// Loads every *.csv in a directory (sorted by file name).
inline LoadResult load_csv_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError(dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw EmptyInputError(dir.string() + ": no .csv files");
  LoadResult all;
  std::set<std::string> seen;
  for (const auto& f : files) {
    LoadResult part = load_csv(f);
    all.dropped_rows += part.dropped_rows;
    all.warnings.insert(all.warnings.end(), part.warnings.begin(), part.warnings.end());
    for (auto& s : part.series) {
      if (!seen.insert(s.ticker).second) {
        throw FormatError(f.string() + ": ticker " + s.ticker + " already loaded from another file");
      }
      all.series.push_back(std::move(s));
    }
  }
  std::sort(all.series.begin(), all.series.end(),
            [](const auto& a, const auto& b) { return a.ticker < b.ticker; });
  return all;
}

struct DroppedTicker {
  std::string ticker;
  double presence = 0.0;
};

// Stocks x indicators x days, all on one trading calendar.
struct MarketPanel {
  std::vector<std::string> tickers;
  std::vector<Date> calendar;
  std::vector<double> data;  // [stock][indicator][day]
  std::vector<std::size_t> fill_counts;  // filled days per stock
  std::vector<DroppedTicker> dropped;

  std::size_t num_stocks() const { return tickers.size(); }
  std::size_t num_days() const { return calendar.size(); }

  double value(std::size_t stock, Indicator r, std::size_t day) const {
    return data[(stock * kNumIndicators + static_cast<std::size_t>(r)) * calendar.size() + day];
  }
  double& value(std::size_t stock, Indicator r, std::size_t day) {
    return data[(stock * kNumIndicators + static_cast<std::size_t>(r)) * calendar.size() + day];
  }
  double value(std::size_t stock, std::size_t r, std::size_t day) const {
    return value(stock, static_cast<Indicator>(r), day);
  }

  friend bool operator==(const MarketPanel&, const MarketPanel&) = default;
};

inline bool operator==(const DroppedTicker& a, const DroppedTicker& b) {
  return a.ticker == b.ticker && a.presence == b.presence;
}

// Aligns series onto the calendar of dates present in at least half of them,
// drops stocks observed on fewer than `coverage` of those days and fills the
// remaining gaps: prices forward (leading gaps backward), volume with 0.
// Volume is then floored to 1 everywhere.
inline MarketPanel align_panel(const std::vector<InstrumentSeries>& series, double coverage = 0.98) {
  if (series.size() < 2) {
    throw DataError("align_panel: need at least 2 series, got " + std::to_string(series.size()));
  }
  std::map<Date, std::size_t> counts;
  for (const auto& s : series) {
    for (const auto& d : s.dates) ++counts[d];
  }
  MarketPanel panel;
  for (const auto& [d, c] : counts) {
    if (2 * c >= series.size()) panel.calendar.push_back(d);
  }
  const std::size_t T = panel.calendar.size();

  struct Kept {
    const InstrumentSeries* s;
    std::vector<std::optional<Bar>> obs;
    std::size_t present;
  };
  std::vector<Kept> kept;
  for (const auto& s : series) {
    std::vector<std::optional<Bar>> obs(T);
    std::size_t present = 0;
    std::size_t j = 0;
    for (std::size_t t = 0; t < T; ++t) {
      while (j < s.dates.size() && s.dates[j] < panel.calendar[t]) ++j;
      if (j < s.dates.size() && s.dates[j] == panel.calendar[t]) {
        obs[t] = s.bars[j];
        ++present;
      }
    }
    const double presence = T ? static_cast<double>(present) / static_cast<double>(T) : 0.0;
    if (present > 0 && static_cast<double>(present) >= coverage * static_cast<double>(T) - 1e-9) {
      kept.push_back({&s, std::move(obs), present});
    } else {
      panel.dropped.push_back({s.ticker, presence});
    }
  }
  if (kept.size() < 2) {
    std::string report;
    for (const auto& s : series) {
      std::size_t present = 0;
      for (const auto& d : s.dates) present += std::binary_search(panel.calendar.begin(), panel.calendar.end(), d);
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.4f", T ? static_cast<double>(present) / static_cast<double>(T) : 0.0);
      report += " " + s.ticker + "=" + buf;
    }
    throw CoverageError("align_panel: fewer than 2 stocks meet coverage " + io::format_double(coverage) +
                        "; presence:" + report);
  }

  panel.data.assign(kept.size() * kNumIndicators * T, 0.0);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    panel.tickers.push_back(kept[i].s->ticker);
    panel.fill_counts.push_back(T - kept[i].present);
    const auto& obs = kept[i].obs;
    std::size_t first = 0;
    while (!obs[first]) ++first;
    Bar last = *obs[first];
    for (std::size_t t = 0; t < T; ++t) {
      Bar bar;
      if (obs[t]) {
        bar = *obs[t];
        last = bar;
      } else {
        bar = last;
        bar[static_cast<std::size_t>(Indicator::Volume)] = 0.0;
      }
      bar[static_cast<std::size_t>(Indicator::Volume)] =
          std::max(1.0, bar[static_cast<std::size_t>(Indicator::Volume)]);
      for (std::size_t r = 0; r < kNumIndicators; ++r) panel.value(i, static_cast<Indicator>(r), t) = bar[r];
    }
  }
  return panel;
}

// 1 when the close strictly rises, 0 otherwise (ties included).
inline int gen_label(double close_today, double close_next) {
  if (!(close_today > 0.0) || !(close_next > 0.0)) {
    throw DataError("gen_label: prices must be positive, got " + io::format_double(close_today) + " and " +
                    io::format_double(close_next));
  }
  return close_next > close_today ? 1 : 0;
}

struct WindowSample {
  std::size_t end_day = 0;  // index t of the last day in the window
  Tensor raw;               // indicators x stocks x window, as in the panel
  Tensor features;          // same layout, z-scored per (indicator, stock)
  std::vector<int> labels;  // per stock, trend from day t to t+1
};

// z-score of one window; a flat window maps to zeros.
inline void zscore(std::span<const double> in, std::span<double> out) {
  const double n = static_cast<double>(in.size());
  double mean = 0.0;
  for (double v : in) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : in) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = sd > 1e-12 * std::max(1.0, std::abs(mean)) ? (in[i] - mean) / sd : 0.0;
}

inline WindowSample make_window(const MarketPanel& panel, std::size_t end_day, std::size_t window) {
  const std::size_t N = panel.num_stocks();
  if (window == 0 || end_day + 1 < window || end_day >= panel.num_days()) {
    throw UsageError("make_window: day " + std::to_string(end_day) + " has no full window of " +
                     std::to_string(window));
  }
  WindowSample s;
  s.end_day = end_day;
  s.raw = Tensor(Shape{kNumIndicators, N, window}, 0.0);
  s.features = Tensor(Shape{kNumIndicators, N, window}, 0.0);
  const std::size_t start = end_day + 1 - window;
  for (std::size_t r = 0; r < kNumIndicators; ++r) {
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t o = 0; o < window; ++o) s.raw.at(r, i, o) = panel.value(i, r, start + o);
      const std::size_t off = (r * N + i) * window;
      zscore(s.raw.values().subspan(off, window), s.features.values().subspan(off, window));
    }
  }
  if (end_day + 1 < panel.num_days()) {
    for (std::size_t i = 0; i < N; ++i) {
      s.labels.push_back(gen_label(panel.value(i, Indicator::Close, end_day),
                                   panel.value(i, Indicator::Close, end_day + 1)));
    }
  }
  return s;
}

// One sample per end day t in [window-1, T-2], i.e. T - window samples.
inline std::vector<WindowSample> make_windows(const MarketPanel& panel, std::size_t window) {
  const std::size_t T = panel.num_days();
  if (window == 0 || T < window + 1) {
    throw InsufficientDataError("make_windows: " + std::to_string(T) + " trading days cannot fill a window of " +
                                std::to_string(window) + " plus a label day");
  }
  std::vector<WindowSample> out;
  out.reserve(T - window);
  for (std::size_t t = window - 1; t + 1 < T; ++t) out.push_back(make_window(panel, t, window));
  return out;
}

inline double label_balance(const std::vector<WindowSample>& samples) {
  std::size_t ones = 0, total = 0;
  for (const auto& s : samples) {
    for (int l : s.labels) {
      ones += static_cast<std::size_t>(l == 1);
      ++total;
    }
  }
  return total ? static_cast<double>(ones) / static_cast<double>(total) : 0.0;
}

// Inclusive date interval.
struct DateRange {
  Date first;
  Date last;
  bool contains(const Date& d) const { return first <= d && d <= last; }
};

struct SplitSamples {
  std::vector<WindowSample> train, val, test;
};

// Assigns each sample to the range containing both its end day and its label
// day; samples straddling a boundary go nowhere.
inline SplitSamples split_periods(const std::vector<WindowSample>& samples, const std::vector<Date>& calendar,
                                  const std::optional<DateRange>& train, const std::optional<DateRange>& val,
                                  const std::optional<DateRange>& test) {
  std::vector<std::pair<const char*, DateRange>> ranges;
  for (auto [name, r] : {std::pair{"train", train}, std::pair{"val", val}, std::pair{"test", test}}) {
    if (!r) continue;
    if (r->last < r->first) throw ConfigError(std::string(name) + " range ends before it starts");
    ranges.emplace_back(name, *r);
  }
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (!(ranges[i - 1].second.last < ranges[i].second.first)) {
      throw ConfigError(std::string("split ranges must be disjoint and chronological: ") + ranges[i - 1].first +
                        " ends " + ranges[i - 1].second.last.str() + ", " + ranges[i].first + " starts " +
                        ranges[i].second.first.str());
    }
  }
  SplitSamples out;
  for (const auto& s : samples) {
    if (s.end_day + 1 >= calendar.size()) continue;
    const Date& d0 = calendar[s.end_day];
    const Date& d1 = calendar[s.end_day + 1];
    auto inside = [&](const std::optional<DateRange>& r) { return r && r->contains(d0) && r->contains(d1); };
    if (inside(train)) out.train.push_back(s);
    else if (inside(val)) out.val.push_back(s);
    else if (inside(test)) out.test.push_back(s);
  }
  return out;
}

// ---- panel cache: <dir>/<ticker>.csv + <dir>/manifest.json ---------------

inline nlohmann::ordered_json panel_manifest(const MarketPanel& panel, std::size_t dropped_rows) {
  nlohmann::ordered_json m;
  m["tickers"] = panel.tickers;
  std::vector<std::string> cal;
  for (const auto& d : panel.calendar) cal.push_back(d.str());
  m["calendar"] = cal;
  nlohmann::ordered_json fills = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < panel.tickers.size(); ++i) fills[panel.tickers[i]] = panel.fill_counts[i];
  m["fill_counts"] = fills;
  nlohmann::ordered_json dropped = nlohmann::ordered_json::array();
  for (const auto& d : panel.dropped) dropped.push_back({{"ticker", d.ticker}, {"presence", d.presence}});
  m["dropped_tickers"] = dropped;
  m["dropped_rows"] = dropped_rows;
  return m;
}

inline std::string panel_csv(const MarketPanel& panel, std::size_t stock) {
  std::string out = "date,open,high,low,close,volume\n";
  for (std::size_t t = 0; t < panel.num_days(); ++t) {
    out += panel.calendar[t].str();
    for (std::size_t r = 0; r < kNumIndicators; ++r) out += "," + io::format_double(panel.value(stock, r, t));
    out += "\n";
  }
  return out;
}

// Returns the manifest text that was written.
inline std::string write_panel_cache(const MarketPanel& panel, const std::filesystem::path& dir,
                                     std::size_t dropped_rows = 0) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < panel.num_stocks(); ++i) {
    io::write_file(dir / (panel.tickers[i] + ".csv"), panel_csv(panel, i));
  }
  std::string manifest = panel_manifest(panel, dropped_rows).dump(2) + "\n";
  io::write_file(dir / "manifest.json", manifest);
  return manifest;
}

inline MarketPanel read_panel_cache(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw ConfigError("panel cache not found at " + dir.string() + " (run `mgdpr ingest` first)");
  }
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(io::read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  MarketPanel panel;
  panel.tickers = m.at("tickers").get<std::vector<std::string>>();
  for (const auto& d : m.at("calendar")) panel.calendar.push_back(Date::parse_or_throw(d.get<std::string>()));
  for (const auto& t : panel.tickers) panel.fill_counts.push_back(m.at("fill_counts").at(t).get<std::size_t>());
  for (const auto& d : m.at("dropped_tickers")) {
    panel.dropped.push_back({d.at("ticker").get<std::string>(), d.at("presence").get<double>()});
  }
  const std::size_t T = panel.calendar.size();
  panel.data.assign(panel.tickers.size() * kNumIndicators * T, 0.0);
  for (std::size_t i = 0; i < panel.tickers.size(); ++i) {
    const auto path = dir / (panel.tickers[i] + ".csv");
    LoadResult part = load_csv(path);
    if (part.dropped_rows || part.series.size() != 1 || part.series[0].dates != panel.calendar) {
      throw FormatError(path.string() + ": cached series does not match the manifest calendar");
    }
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t r = 0; r < kNumIndicators; ++r) panel.value(i, static_cast<Indicator>(r), t) = part.series[0].bars[t][r];
    }
  }
  return panel;
}

}  // namespace mgdpr
