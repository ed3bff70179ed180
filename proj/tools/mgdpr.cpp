// mgdpr: ingest | graph | train | eval

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mgdpr/pipeline.hpp"

namespace {

const char* kFooter =
    "Exit codes:\n"
    "  0  success\n"
    "  1  unexpected failure\n"
    "  2  data error (malformed, empty or insufficient market data)\n"
    "  3  graph error (degenerate series, day out of range)\n"
    "  4  training diverged\n"
    "  5  configuration or shape inconsistency\n"
    "  6  checkpoint missing, corrupt or incompatible\n"
    "\n"
    "Config keys may be overridden with MGDPR_<KEY>, e.g. MGDPR_TRAIN_EPOCHS=5.";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-relational graph diffusion stock trend classifier"};
  app.footer(kFooter);
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> seeds, day, epochs;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Run configuration (flat JSON)")->required();
  };
  auto* ingest = app.add_subcommand("ingest", "Load raw CSVs and write the aligned panel cache");
  add_config(ingest);
  auto* graph = app.add_subcommand("graph", "Build per-day relation graphs from the panel cache");
  add_config(graph);
  graph->add_option("--day", day, "Only this day index");
  auto* train = app.add_subcommand("train", "Train and write checkpoints, loss traces and the resolved config");
  add_config(train);
  auto* eval = app.add_subcommand("eval", "Evaluate checkpoints on the test period and write metrics.json");
  add_config(eval);
  for (auto* cmd : {train, eval}) {
    auto* one = cmd->add_option("--seed", seed, "Use this seed only");
    cmd->add_option("--seeds", seeds, "Use this many consecutive seeds from the first configured one")->excludes(one);
  }
  train->add_option("--epochs", epochs, "Override train.epochs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    mgdpr::RunConfig cfg = mgdpr::load_config(config_path);
    mgdpr::CommandOptions opts{seed, seeds, day, epochs};
    mgdpr::apply_options(cfg, opts);
    if (*ingest) mgdpr::cmd_ingest(cfg, std::cout, std::cerr);
    if (*graph) mgdpr::cmd_graph(cfg, opts, std::cout);
    if (*train) mgdpr::cmd_train(cfg, std::cout);
    if (*eval) mgdpr::cmd_eval(cfg, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return mgdpr::exit_code(e);
  }
  return 0;
}
