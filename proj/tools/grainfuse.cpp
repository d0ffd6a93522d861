// grainfuse command line: gen-data, train, reconstruct, evaluate, sweep, plot.

#include <torch/torch.h>

#include <CLI11.hpp>
#include <iostream>

#include "grainfuse/errors.hpp"
#include "grainfuse/pipeline.hpp"

using namespace grainfuse;

int main(int argc, char** argv) {
  at::set_num_threads(1);
  CLI::App app{"grainfuse: multimodal EBSD + PL diffusion reconstruction"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("-c,--config", config_path, "key = value configuration file");
  app.add_option("-s,--set", overrides, "key=value override (repeatable, wins over the file)");

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  auto* train = app.add_subcommand("train", "train one diffusion prior");
  std::string modality = "EP";
  train->add_option("-m,--modality", modality, "EP, E or P")->check(CLI::IsMember({"EP", "E", "P"}));
  auto* recon = app.add_subcommand("reconstruct", "posterior reconstruction sets on held-out slices");
  auto* evaluate = app.add_subcommand("evaluate", "boundary, superres or denoise metrics on reconstructions");
  std::string task = "boundary";
  evaluate->add_option("-t,--task", task, "boundary, superres or denoise");
  auto* sweep = app.add_subcommand("sweep", "factorial sweep over EBSD masks and set sizes");
  auto* plot = app.add_subcommand("plot", "figures from a sweep directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    Config cfg = config_path.empty() ? Config{} : Config::parse_file(config_path);
    for (const auto& o : overrides) cfg.set_override(o);
    if (*gen) pipeline::cmd_gen_data(cfg);
    if (*train) pipeline::cmd_train(cfg, modality);
    if (*recon) pipeline::cmd_reconstruct(cfg);
    if (*evaluate) pipeline::cmd_evaluate(cfg, task);
    if (*sweep) pipeline::cmd_sweep(cfg);
    if (*plot) pipeline::cmd_plot(cfg);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return pipeline::exit_code_for(e);
  }
}
