// Acceptance run: one PASS/FAIL line per criterion, then a summary.
//
// Usage: acceptance [work_dir [criterion ...]]. Data, models and
// reconstructions are cached under work_dir (default: the current directory)
// and reused when their inputs are unchanged, so only the first run pays for
// training. Listing criterion numbers runs only those.

#include <torch/torch.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "grainfuse/config.hpp"
#include "grainfuse/dataset.hpp"
#include "grainfuse/diffusion.hpp"
#include "grainfuse/metrics.hpp"
#include "grainfuse/orientation.hpp"
#include "grainfuse/pipeline.hpp"
#include "grainfuse/report.hpp"
#include "grainfuse/solver.hpp"
#include "grainfuse/tensor_bridge.hpp"
#include "oracles.hpp"

using namespace grainfuse;
namespace fs = std::filesystem;
namespace diff = grainfuse::diffusion;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

Config base_config() {
  Config c;
  c.set("data.dir", "data");
  c.set("models.dir", "models");
  c.set("log.verbose", "false");
  return c;
}

// --- 1. orientation ---------------------------------------------------------

Outcome orientation_roundtrip() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst_rt = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto q = oracle::random_rotation(rng);
    worst_rt = std::max(worst_rt, oracle::angle_between(q, orientation::cu2qu(orientation::qu2cu(q))));
  }
  double worst_dis = 0;
  for (const auto* g : {&orientation::SymmetryGroup::cubic(), &orientation::SymmetryGroup::hexagonal(),
                        &orientation::SymmetryGroup::triclinic()})
    for (int i = 0; i < 100; ++i) {
      const auto a = oracle::random_rotation(rng), b = oracle::random_rotation(rng);
      worst_dis = std::max(worst_dis, std::abs(orientation::disorientation(a, b, *g) - oracle::disorientation(a, b, *g)));
    }
  const double secs = seconds_since(t0);
  return {worst_rt <= 1e-6 && worst_dis <= 1e-9 && secs < 10,
          fmt("round-trip max angle error %.2e rad (tol 1e-6), disorientation max deviation %.2e (tol 1e-9), %.2f s",
              worst_rt, worst_dis, secs)};
}

// --- 2. metric oracles ------------------------------------------------------

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  const auto hand = metrics::chamfer(std::vector<metrics::Point>{{0, 0}}, std::vector<metrics::Point>{{0, 0.5}});
  double worst = std::abs(hand.total - 0.5);
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<int> size(1, 16);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const int h = size(rng), w = size(rng);
    const auto pred = oracle::random_map(rng, h, w, 0.25), truth = oracle::random_map(rng, h, w, 0.25);
    const auto got = metrics::chamfer(pred, truth), want = oracle::chamfer(pred, truth);
    worst = std::max({worst, std::abs(got.forward - want.forward), std::abs(got.backward - want.backward),
                      std::abs(got.total - want.total)});
    ScalarMap m(h, w);
    for (auto& v : m.data) v = u(rng);
    const auto b = metrics::gaussian_blur(m), bo = oracle::blur(m, 3.0, 5);
    for (std::size_t j = 0; j < b.size(); ++j) worst = std::max(worst, std::abs(b.data[j] - bo.data[j]));
    worst = std::max(worst, std::abs(metrics::gbce(m, truth) - oracle::gbce(m, truth, 3.0, 5)));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 10,
          fmt("hand case total %.6f (want 0.5), max deviation over 50 instances %.2e (tol 1e-9), %.2f s", hand.total,
              worst, secs)};
}

// --- 3. Gaussian posterior oracle -------------------------------------------

Outcome gaussian_oracle() {
  const auto t0 = Clock::now();
  const auto s = diff::NoiseSchedule::linear(200);
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> u(-1, 1), mag(1.0, 2.0);
  std::normal_distribution<double> nrm;
  const double sigma = 0.1;
  bool pass = true;
  std::string detail;
  for (int config = 0; config < 3; ++config) {
    // Two pixels with prior N(m, S); pixel 0 observed with noise sigma.
    const double m0 = u(rng), m1 = (u(rng) < 0 ? -1 : 1) * mag(rng);
    const double a = u(rng), b = u(rng), c = u(rng);
    const double s00 = a * a + 0.05, s01 = a * b, s11 = b * b + c * c + 0.05;
    const double y = m0 + std::sqrt(s00 + sigma * sigma) * nrm(rng);
    const double gain = s01 / (s00 + sigma * sigma);
    const double want_mean = m1 + gain * (y - m0), want_var = s11 - gain * s01;

    diff::GaussianEpsPredictor model(1, 1, 2, torch::tensor({m0, m1}, torch::kFloat64),
                                     torch::tensor({s00, s01, s01, s11}, torch::kFloat64).reshape({2, 2}), s);
    solver::Observation obs;
    obs.op = solver::MaskingOperator(torch::tensor({1, 0}, torch::kUInt8).reshape({1, 1, 2}));
    obs.values = torch::tensor({static_cast<float>(y)}, torch::kFloat32);
    obs.sigma = torch::full({1}, sigma, torch::kFloat64);
    solver::SolverConfig cfg;
    cfg.n = 2000;
    cfg.smc.particles = 10;
    cfg.seed = 3000 + config;
    const auto x = solver::reconstruct_set(model, s, obs, cfg).samples.reshape({-1, 2}).select(1, 1).to(torch::kFloat64);
    const double got_mean = x.mean().item<double>(), got_var = x.var().item<double>();
    const double em = std::abs(got_mean - want_mean) / std::abs(want_mean);
    const double ev = std::abs(got_var - want_var) / want_var;
    pass = pass && em <= 0.05 && ev <= 0.05;
    detail += fmt("config %d mean %.4f/%.4f (%.1f%%) var %.4f/%.4f (%.1f%%); ", config, got_mean, want_mean,
                  100 * em, got_var, want_var, 100 * ev);
  }
  const double secs = seconds_since(t0);
  return {pass && secs < 300, detail + fmt("tol 5%%, %.0f s", secs)};
}

// --- data and models ----------------------------------------------------------

void ensure_data(const Config& base) {
  if (fs::exists(fs::path("data") / "dataset.json") && fs::exists(fs::path("data") / "gen_data.config")) return;
  std::cerr << "generating data\n";
  pipeline::cmd_gen_data(base);
}

// Same network, optimizer settings, schedule and validation draw count.
bool same_training(const Config& a, const Config& b, const std::string& modality) {
  const auto layout = data::ModalityLayout::by_name(modality);
  const auto ta = pipeline::train_config(a), tb = pipeline::train_config(b);
  return ta.steps == tb.steps && ta.batch_size == tb.batch_size && ta.learning_rate == tb.learning_rate &&
         ta.eval_interval == tb.eval_interval && ta.seed == tb.seed &&
         pipeline::unet_config(a, layout) == pipeline::unet_config(b, layout) &&
         pipeline::base_schedule(a).beta == pipeline::base_schedule(b).beta &&
         a.get_int("train.val_samples", 64) == b.get_int("train.val_samples", 64) &&
         a.get_string("data.dir", "") == b.get_string("data.dir", "");
}

void ensure_model(const Config& base, const std::string& m) {
  const fs::path dir = "models";
  if (fs::exists(dir / (m + ".gftc")) && fs::exists(dir / (m + "_train.config")) &&
      same_training(Config::parse_file(dir / (m + "_train.config")), base, m))
    return;
  std::cerr << "training " << m << '\n';
  const auto t0 = Clock::now();
  pipeline::cmd_train(base, m);
  std::cerr << "trained " << m << " in " << seconds_since(t0) << " s\n";
}

struct LossCurve {
  double initial = 0, best = 0;
  int steps = 0;
};

LossCurve read_loss(const std::string& m) {
  const auto t = report::Table::read(fs::path("models") / (m + "_loss.csv"));
  const int cs = t.column("step"), cv = t.column("val_loss");
  LossCurve out;
  out.best = 1e300;
  for (const auto& row : t.rows()) {
    const double v = std::stod(row[cv]);
    if (std::stoi(row[cs]) == 0) out.initial = v;
    out.best = std::min(out.best, v);
    out.steps = std::max(out.steps, std::stoi(row[cs]));
  }
  return out;
}

Outcome training_sanity(const Config& base) {
  const auto tc = pipeline::train_config(base);
  bool pass = tc.steps == 5000 && tc.batch_size == 32 && tc.learning_rate == 5e-4;
  std::string detail = fmt("%d steps, batch %d, lr %g; ", tc.steps, tc.batch_size, tc.learning_rate);
  for (const char* m : {"EP", "E", "P"}) {
    const auto c = read_loss(m);
    const double drop = 1 - c.best / c.initial;
    pass = pass && drop >= 0.5 && c.steps == tc.steps;
    detail += fmt("%s val %.4f -> %.4f (-%.1f%%); ", m, c.initial, c.best, 100 * drop);
  }
  return {pass, detail + "need >= 50%"};
}

// --- reconstruction experiments ---------------------------------------------

using Overrides = std::vector<std::pair<std::string, std::string>>;

Config experiment_config(const Config& base, const std::string& name, const Overrides& ov) {
  Config c = base;
  for (const auto& [k, v] : ov) c.set(k, v);
  c.set("out.dir", (fs::path("runs") / name).string());
  return c;
}

// Reconstructions are reused when the config and checkpoint are unchanged.
std::vector<pipeline::SliceRecon> run_experiment(const Config& base, const std::string& name, const Overrides& ov) {
  const auto cfg = experiment_config(base, name, ov);
  const fs::path out = cfg.require_string("out.dir");
  const auto st = pipeline::recon_settings(cfg);
  const std::string key =
      cfg.dump() + "checkpoint hash = " + std::to_string(std::hash<std::string>{}(slurp(st.checkpoint))) + '\n';
  if (fs::exists(out / "reconstruct.json") && slurp(out / "acceptance.key") == key) return pipeline::read_recon_dir(out);
  fs::remove_all(out);
  std::cerr << "reconstructing " << name << '\n';
  const auto t0 = Clock::now();
  auto slices = pipeline::cmd_reconstruct(cfg);
  std::ofstream(out / "acceptance.key") << key;
  std::cerr << "reconstructed " << name << " in " << seconds_since(t0) << " s\n";
  return slices;
}

const Overrides kCommon = {{"solver.stride", "10"}, {"solver.particles", "10"}, {"eval.slices", "20"}};

Overrides with(Overrides ov) {
  Overrides out = kCommon;
  out.insert(out.end(), ov.begin(), ov.end());
  return out;
}

Outcome data_consistency(const std::vector<pipeline::SliceRecon>& slices) {
  std::vector<double> res;
  for (const auto& s : slices) {
    const auto x = to_tensor(s.recons.front()).to(torch::kFloat64);
    const auto r = s.obs.op.apply(x).reshape({-1}) - s.obs.values.to(torch::kFloat64);
    res.push_back(r.pow(2).mean().item<double>());
  }
  const double m = mean(res), worst = *std::max_element(res.begin(), res.end());
  return {m <= 0.05, fmt("mean squared residual on Omega %.3e over %zu slices (max %.3e), tol 0.05", m, res.size(),
                         worst)};
}

struct BoundaryMeans {
  double total = 0, forward = 0, gbce = 0, base_total = 0, base_forward = 0;
};

BoundaryMeans boundary_means(const std::vector<pipeline::SliceRecon>& slices, const pipeline::EvalSettings& e,
                             std::size_t count, int n) {
  std::vector<double> t, f, g, bt, bf;
  for (std::size_t i = 0; i < count && i < slices.size(); ++i) {
    const auto b = pipeline::evaluate_boundary(slices[i], e, n);
    t.push_back(b.chamfer.total);
    f.push_back(b.chamfer.forward);
    g.push_back(b.gbce);
    if (!b.has_baseline) throw std::runtime_error("baseline needs a full PL observation");
    bt.push_back(b.baseline_chamfer.total);
    bf.push_back(b.baseline_chamfer.forward);
  }
  return {mean(t), mean(f), mean(g), mean(bt), mean(bf)};
}

bool same_files(const fs::path& a, const fs::path& b, const std::vector<std::string>& names, std::string& why) {
  for (const auto& n : names) {
    if (!fs::exists(a / n) || slurp(a / n) != slurp(b / n)) {
      why = n + " differs";
      return false;
    }
  }
  return true;
}

std::vector<std::string> files_matching(const fs::path& dir, const std::string& ext) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ext) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

Outcome reproducibility(const Config& base) {
  const fs::path rr = "rerun";
  fs::remove_all(rr);
  std::string why;
  std::vector<std::string> parts;
  bool pass = true;

  // gen-data from its persisted config
  auto g = Config::parse_file(fs::path("data") / "gen_data.config");
  g.set("data.dir", (rr / "data").string());
  pipeline::cmd_gen_data(g);
  const bool data_ok = same_files("data", rr / "data", files_matching("data", ".gftc"), why) &&
                       same_files("data", rr / "data", {"dataset.json"}, why);
  pass = pass && data_ok;
  parts.push_back(data_ok ? "gen-data identical" : "gen-data: " + why);

  // a short training run, then again from the config it persisted
  auto t = base;
  t.set("train.steps", "20");
  t.set("train.eval_interval", "10");
  t.set("train.val_samples", "8");
  t.set("models.dir", (rr / "train1").string());
  pipeline::cmd_train(t, "EP");
  auto t2 = Config::parse_file(rr / "train1" / "EP_train.config");
  t2.set("models.dir", (rr / "train2").string());
  pipeline::cmd_train(t2, "EP");
  const bool train_ok = same_files(rr / "train1", rr / "train2", {"EP.gftc", "EP_loss.csv"}, why);
  pass = pass && train_ok;
  parts.push_back(train_ok ? "training identical" : "training: " + why);

  // the data-consistency experiment and its boundary evaluation
  auto r = Config::parse_file(fs::path("runs") / "consistency" / "reconstruct.config");
  r.set("out.dir", (rr / "recon").string());
  pipeline::cmd_reconstruct(r);
  const auto names = files_matching(fs::path("runs") / "consistency", ".gftc");
  const bool recon_ok = !names.empty() && same_files(fs::path("runs") / "consistency", rr / "recon", names, why) &&
                        same_files(fs::path("runs") / "consistency", rr / "recon", {"reconstruct.json"}, why);
  pass = pass && recon_ok;
  parts.push_back(recon_ok ? fmt("%zu reconstructions identical", names.size()) : "reconstruction: " + why);

  auto e = base;
  e.set("eval.input", (fs::path("runs") / "consistency").string());
  e.set("eval.images", "0");
  e.set("out.dir", (rr / "eval1").string());
  pipeline::cmd_evaluate(e, "boundary");
  auto e2 = Config::parse_file(rr / "eval1" / "evaluate.config");
  e2.set("out.dir", (rr / "eval2").string());
  pipeline::cmd_evaluate(e2, "boundary");
  const bool eval_ok = same_files(rr / "eval1", rr / "eval2", {"boundary.csv", "boundary_summary.csv"}, why);
  pass = pass && eval_ok;
  parts.push_back(eval_ok ? "evaluation identical" : "evaluation: " + why);

  std::string detail;
  for (const auto& p : parts) detail += (detail.empty() ? "" : ", ") + p;
  return {pass, detail + " (single-threaded)"};
}

}  // namespace

int main(int argc, char** argv) {
  at::set_num_threads(1);
  if (argc > 1) {
    fs::create_directories(argv[1]);
    fs::current_path(argv[1]);
  }
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto wanted = [&](int id) { return only.empty() || only.count(id) != 0; };
  std::vector<std::pair<std::string, Outcome>> results;
  auto report = [&](const std::string& name, const std::function<Outcome()>& f) {
    if (!wanted(std::atoi(name.c_str()))) return;
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    results.emplace_back(name, o);
  };

  report("1 orientation round trip and disorientation", orientation_roundtrip);
  report("2 metric oracles", metric_oracles);
  report("3 linear-Gaussian posterior oracle", gaussian_oracle);

  const Config base = base_config();
  bool ready = false;
  for (int id = 4; id <= 10; ++id) ready = ready || wanted(id);
  if (ready) {
    try {
      ensure_data(base);
      for (const char* m : {"EP", "E", "P"}) ensure_model(base, m);
    } catch (const std::exception& e) {
      std::cerr << "setup failed: " << e.what() << '\n';
      ready = false;
    }
  }

  std::vector<pipeline::SliceRecon> consistency, ebsd25, ebsd0, sr_ep, sr_e, scratch;
  pipeline::EvalSettings es;
  if (ready) {
    try {
      es = pipeline::eval_settings(base, data::read_dataset_config("data").symmetry);
      consistency = run_experiment(base, "consistency",
                                   with({{"recon.model", "EP"}, {"obs.ebsd_mask", "grid:2"}, {"obs.sigma_ebsd", "0"},
                                         {"obs.sigma_pl", "0"}, {"solver.n", "1"}, {"eval.slices", "10"}}));
      ebsd25 = run_experiment(base, "ebsd25", with({{"recon.model", "EP"}, {"obs.ebsd_mask", "grid:2"},
                                                     {"obs.sigma_pl", "0.05"}, {"solver.n", "10"}}));
      ebsd0 = run_experiment(base, "ebsd0", with({{"recon.model", "EP"}, {"obs.ebsd_mask", "none"},
                                                   {"obs.sigma_pl", "0.05"}, {"solver.n", "10"}}));
      sr_ep = run_experiment(base, "superres_EP", with({{"recon.model", "EP"}, {"obs.ebsd_mask", "grid:4"},
                                                        {"obs.sigma_pl", "0.05"}, {"solver.n", "4"}}));
      sr_e = run_experiment(base, "superres_E",
                            with({{"recon.model", "E"}, {"obs.ebsd_mask", "grid:4"}, {"solver.n", "4"}}));
      scratch = run_experiment(base, "scratch",
                               with({{"recon.model", "EP"}, {"obs.ebsd_mask", "grid:2"}, {"obs.sigma_pl", "0.05"},
                                     {"solver.n", "10"}, {"obs.perturb", "scratch:3,2,0.6"}, {"eval.slices", "10"}}));
    } catch (const std::exception& e) {
      std::cerr << "experiments failed: " << e.what() << '\n';
      ready = false;
    }
  }
  auto needs_runs = [&](const std::function<Outcome()>& f) {
    return [&, f] { return ready ? f() : Outcome{false, "experiments did not run"}; };
  };

  report("4 data consistency", needs_runs([&] { return data_consistency(consistency); }));
  report("5 training sanity", [&] { return training_sanity(base); });
  report("6 boundary trend and Sobel baseline", needs_runs([&] {
           const auto a = boundary_means(ebsd25, es, ebsd25.size(), 0);
           const auto b = boundary_means(ebsd0, es, ebsd0.size(), 0);
           const bool pass = ebsd25.size() >= 20 && a.total <= b.total && a.total < a.base_total &&
                             b.total < b.base_total;
           return Outcome{pass, fmt("mean total Chamfer at 25%% EBSD %.4e, at 0%% %.4e; Sobel baseline %.4e / %.4e; "
                                    "%zu slices",
                                    a.total, b.total, a.base_total, b.base_total, ebsd25.size())};
         }));
  report("7 inference scaling", needs_runs([&] {
           const auto n10 = boundary_means(ebsd25, es, ebsd25.size(), 10);
           const auto n1 = boundary_means(ebsd25, es, ebsd25.size(), 1);
           return Outcome{n10.gbce <= n1.gbce,
                          fmt("mean G-BCE N=10 %.5f, N=1 %.5f over %zu slices", n10.gbce, n1.gbce, ebsd25.size())};
         }));
  report("8 super-resolution direction and alignment", needs_runs([&] {
           std::vector<double> multi, uni, before, after;
           int improved = 0, total = 0;
           for (std::size_t i = 0; i < sr_ep.size(); ++i) {
             const auto m = pipeline::evaluate_superres(sr_ep[i], es);
             const auto u = pipeline::evaluate_superres(sr_e[i], es);
             multi.push_back(m.aligned.boundary);
             uni.push_back(u.aligned.boundary);
             improved += m.result.trained && m.result.holdout_mse_after < m.result.holdout_mse_before;
             before.push_back(m.result.holdout_mse_before);
             after.push_back(m.result.holdout_mse_after);
             ++total;
           }
           const double frac = double(improved) / total;
           const bool pass = total >= 20 && mean(multi) <= mean(uni) && frac >= 0.8;
           return Outcome{pass, fmt("boundary disorientation EP %.2f deg, E %.2f deg; alignment lowers held-out MSE "
                                    "in %d/%d slices (need 80%%), mean %.3e -> %.3e",
                                    mean(multi), mean(uni), improved, total, mean(before), mean(after))};
         }));
  report("9 denoising and scratch robustness", needs_runs([&] {
           int better = 0;
           double mm = 0, mo = 0;
           const std::size_t n = std::min<std::size_t>(10, ebsd25.size());
           for (std::size_t i = 0; i < n; ++i) {
             const auto d = pipeline::evaluate_denoise(ebsd25[i]);
             better += d.mse_mean < d.mse_observed;
             mm += d.mse_mean / n;
             mo += d.mse_observed / n;
           }
           const auto clean = boundary_means(ebsd25, es, scratch.size(), 0);
           const auto scr = boundary_means(scratch, es, scratch.size(), 0);
           const double d_base = scr.base_forward - clean.base_forward, d_diff = scr.forward - clean.forward;
           const bool pass = n == 10 && better == 10 && d_base > 0 && d_diff < d_base;
           return Outcome{pass, fmt("mean-PL MSE below noisy MSE in %d/%zu slices (%.2e vs %.2e); scratch raises "
                                    "forward Chamfer by %.3e (Sobel) and %.3e (diffusion)",
                                    better, n, mm, mo, d_base, d_diff)};
         }));
  report("10 reproducibility", needs_runs([&] { return reproducibility(base); }));

  int passed = 0;
  for (const auto& [name, o] : results) passed += o.pass;
  std::cout << "SUMMARY " << passed << "/" << results.size() << " criteria passed" << std::endl;
  for (const auto& [name, o] : results)
    if (!o.pass) std::cout << "  failed: " << name << std::endl;
  return 0;
}
