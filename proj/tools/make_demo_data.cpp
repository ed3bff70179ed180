// Writes a synthetic OHLCV market (one CSV per ticker) with a planted
// trend-reversal rule, suitable for tools/demo_config.json.

#include <iostream>

#include "CLI11.hpp"
#include "mgdpr/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic planted market"};
  mgdpr::synthetic::PlantedMarketConfig cfg;
  std::string out_dir = "demo/data";
  std::string start = "2020-01-01";
  app.add_option("--out", out_dir, "Output directory")->capture_default_str();
  app.add_option("--stocks", cfg.stocks, "Number of stocks")->capture_default_str();
  app.add_option("--days", cfg.days, "Number of trading days")->capture_default_str();
  app.add_option("--window", cfg.window, "Window the planted rule looks at")->capture_default_str();
  app.add_option("--noise", cfg.noise, "Noise scale relative to the signal spread")->capture_default_str();
  app.add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
  app.add_option("--start", start, "First calendar date (YYYY-MM-DD)")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    cfg.start = mgdpr::Date::parse_or_throw(start);
    mgdpr::synthetic::write_market(mgdpr::synthetic::planted_market(cfg), out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cout << "wrote " << cfg.stocks << " tickers x " << cfg.days << " days to " << out_dir << "\n";
  return 0;
}
