#pragma once

// The four batch commands behind the `mgdpr` executable.
//
//   <cache>/panel/   aligned panel (<ticker>.csv + manifest.json)
//   <cache>/graphs/  per-day adjacency CSVs + index.json
//   <output>/        checkpoint_seed<s>.bin, loss_trace_seed<s>.csv,
//                    resolved_config.json, metrics.json

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgdpr/checkpoint.hpp"
#include "mgdpr/config.hpp"
#include "mgdpr/error.hpp"
#include "mgdpr/graph_generation.hpp"
#include "mgdpr/io.hpp"
#include "mgdpr/market_data.hpp"
#include "mgdpr/metrics.hpp"
#include "mgdpr/model.hpp"
#include "mgdpr/training.hpp"

namespace mgdpr {

// Exit status for each error family.
inline int exit_code(const std::exception& e) {
  if (dynamic_cast<const DataError*>(&e)) return 2;
  if (dynamic_cast<const GraphError*>(&e)) return 3;
  if (dynamic_cast<const DivergenceError*>(&e)) return 4;
  if (dynamic_cast<const CheckpointError*>(&e)) return 6;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
      dynamic_cast<const UsageError*>(&e)) {
    return 5;
  }
  return 1;
}

struct CommandOptions {
  std::optional<std::uint64_t> seed;   // run this seed only
  std::optional<std::size_t> seeds;    // run this many seeds from the first configured one
  std::optional<std::size_t> day;      // graph: single day
  std::optional<std::size_t> epochs;   // train: override train.epochs
};

inline void apply_options(RunConfig& c, const CommandOptions& o) {
  if (o.seed && o.seeds) throw ConfigError("--seed and --seeds are mutually exclusive");
  if (o.seed) c.seeds = {*o.seed};
  if (o.seeds) {
    if (*o.seeds == 0) throw ConfigError("--seeds must be positive");
    const std::uint64_t first = c.seeds.front();
    c.seeds.clear();
    for (std::uint64_t s = 0; s < *o.seeds; ++s) c.seeds.push_back(first + s);
  }
  if (o.epochs) c.train.epochs = *o.epochs;
}

inline std::filesystem::path panel_dir(const RunConfig& c) { return c.cache_dir / "panel"; }
inline std::filesystem::path graph_dir(const RunConfig& c) { return c.cache_dir / "graphs"; }
inline std::filesystem::path checkpoint_path(const RunConfig& c, std::uint64_t seed) {
  return c.output_dir / ("checkpoint_seed" + std::to_string(seed) + ".bin");
}
inline std::filesystem::path trace_path(const RunConfig& c, std::uint64_t seed) {
  return c.output_dir / ("loss_trace_seed" + std::to_string(seed) + ".csv");
}

// ---- ingest -----------------------------------------------------------------

inline MarketPanel cmd_ingest(const RunConfig& c, std::ostream& out, std::ostream& err) {
  if (!std::filesystem::is_directory(c.data_dir)) {
    throw ConfigError("paths.data_dir " + c.data_dir.string() + " does not exist");
  }
  LoadResult loaded = load_csv_directory(c.data_dir);
  for (const auto& w : loaded.warnings) err << "warning: " << w << "\n";
  MarketPanel panel = align_panel(loaded.series, c.coverage);
  write_panel_cache(panel, panel_dir(c), loaded.dropped_rows);
  out << "stocks N=" << panel.num_stocks() << ", days T=" << panel.num_days()
      << ", dropped tickers=" << panel.dropped.size() << "\n";
  return panel;
}

// ---- graph ------------------------------------------------------------------

// End days that have both a full window and a next-day label.
inline std::pair<std::size_t, std::size_t> sample_day_range(const MarketPanel& panel, std::size_t window) {
  if (panel.num_days() <= window) {
    throw InsufficientDataError("need more than " + std::to_string(window) + " trading days for window " +
                                std::to_string(window) + ", panel has " + std::to_string(panel.num_days()));
  }
  return {window - 1, panel.num_days() - 2};
}

inline std::vector<std::size_t> cmd_graph(const RunConfig& c, const CommandOptions& o, std::ostream& out) {
  const MarketPanel panel = read_panel_cache(panel_dir(c));
  const std::size_t window = c.model.window;
  const auto [first, last] = sample_day_range(panel, window);
  std::vector<std::size_t> days;
  if (o.day) {
    if (*o.day < first || *o.day > last) {
      throw GraphError("--day " + std::to_string(*o.day) + " is outside the sample days [" + std::to_string(first) +
                       ", " + std::to_string(last) + "]");
    }
    days.push_back(*o.day);
  } else {
    for (std::size_t d = first; d <= last; ++d) days.push_back(d);
  }
  const auto dir = graph_dir(c);
  std::set<std::size_t> indexed(days.begin(), days.end());
  const auto index_path = dir / "index.json";
  if (std::filesystem::exists(index_path)) {
    // keep days written by earlier runs over the same panel and window
    try {
      auto old = nlohmann::json::parse(io::read_file(index_path));
      if (old.at("window").get<std::size_t>() == window &&
          old.at("tickers").get<std::vector<std::string>>() == panel.tickers) {
        for (const auto& e : old.at("days")) {
          const auto d = e.at("day").get<std::size_t>();
          if (d <= last && e.at("date").get<std::string>() == panel.calendar[d].str()) indexed.insert(d);
        }
      }
    } catch (const nlohmann::json::exception&) {
    }
  }
  for (std::size_t d : days) write_day_graphs(build_day_graphs(panel, d, window), dir);
  const std::vector<std::size_t> all(indexed.begin(), indexed.end());
  io::write_file(index_path, graph_index(panel, window, all).dump(2) + "\n");
  out << "graphs for " << days.size() << " day(s) written to " << dir.string() << "\n";
  return days;
}

// ---- shared by train and eval -----------------------------------------------

struct Dataset {
  MarketPanel panel;
  ModelConfig model;
  std::vector<Example> train, val, test;
};

inline std::vector<Example> load_examples(const RunConfig& c, const MarketPanel& panel,
                                          const std::vector<WindowSample>& samples) {
  std::vector<Example> out;
  for (const auto& s : samples) {
    try {
      out.push_back(make_example(s, read_day_graphs(graph_dir(c), s.end_day, panel.num_stocks()),
                                 c.model.normalized_adjacency));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + " (run `mgdpr graph` first)");
    }
  }
  return out;
}

inline Dataset load_dataset(const RunConfig& c, bool need_train, bool need_test) {
  Dataset ds;
  ds.panel = read_panel_cache(panel_dir(c));
  const auto index_path = graph_dir(c) / "index.json";
  if (!std::filesystem::exists(index_path)) {
    throw ConfigError("graph cache not found at " + graph_dir(c).string() + " (run `mgdpr graph` first)");
  }
  try {
    auto idx = nlohmann::json::parse(io::read_file(index_path));
    if (idx.at("window").get<std::size_t>() != c.model.window ||
        idx.at("tickers").get<std::vector<std::string>>() != ds.panel.tickers) {
      throw ConfigError("graph cache at " + graph_dir(c).string() +
                        " was built for a different panel or window (rerun `mgdpr graph`)");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(index_path.string() + ": unreadable graph index (" + e.what() + "); rerun `mgdpr graph`");
  }
  ds.model = c.model;
  ds.model.num_stocks = ds.panel.num_stocks();
  ds.model.num_relations = kNumIndicators;
  const auto split =
      split_periods(make_windows(ds.panel, c.model.window), ds.panel.calendar, c.train_period, c.val_period,
                    c.test_period);
  if (need_train && split.train.empty()) {
    throw ConfigError("no training samples between " + c.train_period.first.str() + " and " +
                      c.train_period.last.str());
  }
  if (need_test && split.test.empty()) {
    throw UsageError("no test samples between " + c.test_period.first.str() + " and " + c.test_period.last.str());
  }
  if (need_train) {
    ds.train = load_examples(c, ds.panel, split.train);
    ds.val = load_examples(c, ds.panel, split.val);
  }
  if (need_test) ds.test = load_examples(c, ds.panel, split.test);
  return ds;
}

// ---- train ------------------------------------------------------------------

inline std::string trace_csv(const std::vector<EpochRecord>& trace) {
  std::string out = "epoch,loss,val_acc\n";
  for (const auto& r : trace) {
    out += std::to_string(r.epoch) + "," + io::format_double(r.loss) + "," + io::format_double(r.val_accuracy) + "\n";
  }
  return out;
}

inline void cmd_train(const RunConfig& c, std::ostream& out) {
  const Dataset ds = load_dataset(c, true, false);
  io::write_file(c.output_dir / "resolved_config.json", resolved_config(c).dump(2) + "\n");
  out << "training on " << ds.train.size() << " day(s), validating on " << ds.val.size() << "\n";
  for (std::uint64_t seed : c.seeds) {
    MgdprModel model(ds.model, seed);
    TrainConfig tc = c.train;
    tc.seed = seed;
    const TrainResult res = train(model, ds.train, ds.val, tc);
    save_checkpoint(checkpoint_path(c, seed), ds.model, model.params());
    io::write_file(trace_path(c, seed), trace_csv(res.trace));
    out << "seed " << seed << ": best epoch " << res.best_epoch;
    if (!ds.val.empty()) out << ", val acc " << io::format_short(res.best_val_accuracy);
    out << " -> " << checkpoint_path(c, seed).string() << "\n";
  }
}

// ---- eval -------------------------------------------------------------------

inline nlohmann::ordered_json confusion_json(const Confusion& m) {
  return {{"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}, {"tn", m.tn}};
}

inline nlohmann::ordered_json cmd_eval(const RunConfig& c, std::ostream& out) {
  const Dataset ds = load_dataset(c, false, true);
  nlohmann::ordered_json period = {{"first", c.test_period.first.str()}, {"last", c.test_period.last.str()}};
  std::vector<nlohmann::ordered_json> runs;
  std::vector<MetricsReport> reports;
  for (std::uint64_t seed : c.seeds) {
    Checkpoint ck = load_checkpoint(checkpoint_path(c, seed), &ds.model);
    if (model_config_json(ck.config) != model_config_json(ds.model)) {
      throw CheckpointError(checkpoint_path(c, seed).string() + ": stored model config " +
                            model_config_json(ck.config).dump() + " differs from the run config " +
                            model_config_json(ds.model).dump());
    }
    MgdprModel model(ck.config, ck.params);
    const MetricsReport rep = evaluate(model, ds.test);
    reports.push_back(rep);
    nlohmann::ordered_json r;
    r["seed"] = seed;
    r["acc"] = rep.accuracy;
    r["mcc"] = rep.mcc;
    r["f1"] = rep.f1;
    r["confusion"] = confusion_json(rep.confusion);
    runs.push_back(r);
  }
  nlohmann::ordered_json m;
  m["market"] = c.market;
  m["period"] = period;
  if (reports.size() == 1) {
    const auto& rep = reports.front();
    m["acc"] = rep.accuracy;
    m["mcc"] = rep.mcc;
    m["f1"] = rep.f1;
    m["confusion"] = confusion_json(rep.confusion);
    m["seed"] = c.seeds.front();
  } else {
    // mean and sample standard deviation over seeds
    auto stats = [&](auto field) {
      double mean = 0.0, ss = 0.0;
      for (const auto& r : reports) mean += field(r);
      mean /= static_cast<double>(reports.size());
      for (const auto& r : reports) ss += (field(r) - mean) * (field(r) - mean);
      return nlohmann::ordered_json{{"mean", mean}, {"std", std::sqrt(ss / static_cast<double>(reports.size() - 1))}};
    };
    m["acc"] = stats([](const MetricsReport& r) { return r.accuracy; });
    m["mcc"] = stats([](const MetricsReport& r) { return r.mcc; });
    m["f1"] = stats([](const MetricsReport& r) { return r.f1; });
    Confusion total;
    for (const auto& r : reports) total += r.confusion;
    m["confusion"] = confusion_json(total);
    m["seed"] = c.seeds;
    m["runs"] = runs;
  }
  m["config_hash"] = config_hash(c);
  m["days"] = ds.test.size();
  m["stocks"] = ds.model.num_stocks;
  io::write_file(c.output_dir / "metrics.json", m.dump(2) + "\n");
  out << c.market << " " << period["first"].get<std::string>() << ".." << period["last"].get<std::string>() << ": ";
  if (reports.size() == 1) {
    out << "acc " << io::format_short(reports[0].accuracy) << ", mcc " << io::format_short(reports[0].mcc)
        << ", f1 " << io::format_short(reports[0].f1) << "\n";
  } else {
    auto pm = [&](const char* k) {
      return io::format_short(m[k]["mean"].get<double>()) + " +- " + io::format_short(m[k]["std"].get<double>());
    };
    out << "acc " << pm("acc") << ", mcc " << pm("mcc") << ", f1 " << pm("f1") << " over " << reports.size()
        << " seeds\n";
  }
  return m;
}

}  // namespace mgdpr
