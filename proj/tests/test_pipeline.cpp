#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "torch_doctest.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "grainfuse/errors.hpp"
#include "grainfuse/pipeline.hpp"
#include "grainfuse/tensor_io.hpp"

using namespace grainfuse;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "grainfuse_test_pipeline";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Config tiny(const std::string& tag) {
  Config c;
  const auto root = kWork / tag;
  c.set("data.dir", (kWork / "data").string());
  c.set("models.dir", (kWork / "models").string());
  c.set("out.dir", root.string());
  c.set("data.train_volumes", "1");
  c.set("data.val_volumes", "1");
  c.set("data.train_x", "64");
  c.set("data.train_y", "64");
  c.set("data.train_z", "6");
  c.set("data.val_x", "64");
  c.set("data.val_y", "64");
  c.set("data.val_z", "4");
  c.set("data.grains", "20");
  c.set("model.base_width", "8");
  c.set("train.steps", "4");
  c.set("train.batch_size", "2");
  c.set("train.eval_interval", "2");
  c.set("train.val_samples", "2");
  c.set("eval.slices", "2");
  c.set("solver.n", "2");
  c.set("solver.particles", "3");
  c.set("solver.stride", "100");
  c.set("obs.sigma_pl", "0.05");
  c.set("log.verbose", "false");
  return c;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(GRAINFUSE_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string common_flags() {
  std::string s;
  const auto c = tiny("cli");
  for (const auto& [k, v] : c.values())
    if (k != "out.dir") s += " -s " + k + "=" + v;
  return s;
}

struct Fixture {
  Fixture() {
    static bool ready = false;
    if (ready) return;
    fs::remove_all(kWork);
    pipeline::cmd_gen_data(tiny("gen"));
    for (const char* m : {"EP", "E"}) pipeline::cmd_train(tiny("train"), m);
    ready = true;
  }
};

}  // namespace

TEST_CASE_FIXTURE(Fixture, "gen-data is deterministic and documents itself") {
  auto c = tiny("gen2");
  c.set("data.dir", (kWork / "data2").string());
  pipeline::cmd_gen_data(c);
  for (const char* f : {"dataset.json", "pca.gftc", "train_0.gftc", "val_0.gftc"})
    CHECK(slurp(kWork / "data" / f) == slurp(kWork / "data2" / f));
  const auto meta = nlohmann::json::parse(slurp(kWork / "data" / "dataset.json"));
  CHECK(meta.contains("pca"));
  CHECK(fs::exists(kWork / "data" / "gen_data.config"));
}

TEST_CASE_FIXTURE(Fixture, "checkpoints carry the modality's channel count") {
  CHECK(diffusion::load_checkpoint(kWork / "models" / "EP.gftc").net->config().channels == 6);
  CHECK(diffusion::load_checkpoint(kWork / "models" / "E.gftc").net->config().channels == 3);
  const auto csv = slurp(kWork / "models" / "EP_loss.csv");
  CHECK(csv.rfind("step,train_loss,val_loss\n", 0) == 0);
  // same seed, same curve
  auto c = tiny("retrain");
  c.set("models.dir", (kWork / "models2").string());
  pipeline::cmd_train(c, "EP");
  CHECK(slurp(kWork / "models2" / "EP_loss.csv") == csv);
  CHECK(slurp(kWork / "models2" / "EP.gftc") == slurp(kWork / "models" / "EP.gftc"));
}

TEST_CASE_FIXTURE(Fixture, "reconstruct, evaluate and reproduce") {
  auto c = tiny("recon");
  const auto slices = pipeline::cmd_reconstruct(c);
  REQUIRE(slices.size() == 2);
  CHECK(slices[0].recons.size() == 2);
  CHECK(slices[0].recons[0].channels == 6);
  CHECK(slices[0].seeds.size() == 2);
  const auto meta = nlohmann::json::parse(slurp(kWork / "recon" / "reconstruct.json"));
  CHECK(meta["slices"].size() == 2);
  CHECK(meta["slices"][1]["seeds"].size() == 2);
  const auto resolved = Config::parse_file(kWork / "recon" / "reconstruct.config");
  CHECK(resolved.get_string("solver.particles", "") == "3");
  CHECK(resolved.get_string("obs.ebsd_mask", "") == "grid:2");

  // round trip of the persisted set
  const auto back = pipeline::read_recon_dir(kWork / "recon");
  CHECK((back[1].recons == slices[1].recons));
  CHECK((back[1].truth == slices[1].truth));
  CHECK(torch::equal(back[1].obs.values, slices[1].obs.values));
  CHECK((back[1].obs.ebsd_pixels == slices[1].obs.ebsd_pixels));

  // re-run from the persisted config
  auto again = Config::parse_file(kWork / "recon" / "reconstruct.config");
  again.set("out.dir", (kWork / "recon_again").string());
  pipeline::cmd_reconstruct(again);
  for (const char* f : {"recon_000.gftc", "recon_001.gftc"})
    CHECK(slurp(kWork / "recon" / f) == slurp(kWork / "recon_again" / f));

  for (const char* task : {"boundary", "superres", "denoise"}) {
    auto e = tiny(std::string("eval_") + task);
    e.set("eval.input", (kWork / "recon").string());
    const auto t = pipeline::cmd_evaluate(e, task);
    CHECK(t.rows().size() >= 2);
    CHECK(fs::exists(kWork / (std::string("eval_") + task) / (std::string(task) + "_summary.csv")));
    CHECK(fs::exists(kWork / (std::string("eval_") + task) / "evaluate.config"));
  }
  CHECK(fs::exists(kWork / "eval_boundary" / "slice_000_mean_sobel.png"));
  CHECK(fs::exists(kWork / "eval_superres" / "slice_001_aligned_ebsd.png"));
  CHECK(fs::exists(kWork / "eval_denoise" / "slice_000_mean_pl.png"));
  const auto bt = report::Table::read(kWork / "eval_boundary" / "boundary.csv");
  const int f = bt.column("chamfer_forward"), b = bt.column("chamfer_backward"), tot = bt.column("chamfer_total");
  for (const auto& r : bt.rows()) CHECK(std::stod(r[tot]) == doctest::Approx(std::stod(r[f]) + std::stod(r[b])).epsilon(1e-12));
}

TEST_CASE_FIXTURE(Fixture, "sweep cells are ordered and plotted") {
  auto c = tiny("sweep");
  c.set("sweep.ebsd_masks", "none,grid:4");
  c.set("sweep.n", "1,2");
  c.set("eval.slices", "1");
  const auto summary = pipeline::cmd_sweep(c);
  CHECK(summary.rows().size() == 2 * 2 * 4);
  std::vector<std::string> order;
  for (const auto& r : summary.rows())
    if (r[3] == "gbce") order.push_back(r[0] + "/" + r[2]);
  CHECK(order == std::vector<std::string>{"none/1", "none/2", "grid:4/1", "grid:4/2"});
  const auto rows = report::Table::read(kWork / "sweep" / "sweep.csv");
  CHECK(rows.rows().size() == 4);

  auto one = tiny("sweep_one");
  one.set("sweep.ebsd_masks", "grid:2");
  one.set("sweep.n", "1");
  one.set("eval.slices", "1");
  CHECK(pipeline::cmd_sweep(one).rows().size() == 4);

  Config p;
  p.set("plot.input", (kWork / "sweep").string());
  pipeline::cmd_plot(p);
  CHECK(fs::exists(kWork / "sweep" / "gbce_vs_fraction.png"));
  CHECK(fs::exists(kWork / "sweep" / "chamfer_total_heatmap.png"));
}

TEST_CASE_FIXTURE(Fixture, "CLI exit codes") {
  const auto flags = common_flags();
  CHECK(cli("gen-data") == 2);  // data.dir missing
  CHECK(cli("bogus") == 2);
  CHECK(cli("reconstruct" + flags + " -s out.dir=" + (kWork / "cli_ok").string()) == 0);
  CHECK(cli("reconstruct" + flags + " -s recon.model=E -s obs.modality=EP -s out.dir=" + (kWork / "cli4").string()) == 4);
  CHECK(cli("evaluate -t segmentation" + flags + " -s eval.input=" + (kWork / "cli_ok").string() + " -s out.dir=" +
            (kWork / "cli_e").string()) == 2);
  CHECK(cli("reconstruct" + flags + " -s obs.ebsd_mask=random:2 -s out.dir=" + (kWork / "cli_m").string()) == 2);
  CHECK(cli("train -m EP" + flags + " -s train.lr=1e12 -s train.steps=30 -s models.dir=" + (kWork / "nan").string()) == 3);
  CHECK(cli("reconstruct" + flags + " -s recon.model=E -s out.dir=" + (kWork / "cli_e_only").string()) == 0);
  CHECK(cli("evaluate -t boundary" + flags + " -s eval.input=" + (kWork / "cli_e_only").string() + " -s out.dir=" +
            (kWork / "cli_e_b").string()) == 2);
}
