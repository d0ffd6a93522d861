#include "grainfuse/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "grainfuse/errors.hpp"
#include "grainfuse/tensor_bridge.hpp"
#include "grainfuse/tensor_io.hpp"

namespace grainfuse::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

int worker_count() {
  const char* env = std::getenv("GRAINFUSE_WORKERS");
  if (!env || !*env) return 1;
  try {
    return std::max(1, std::stoi(env));
  } catch (const std::exception&) {
    throw ConfigError("GRAINFUSE_WORKERS must be a positive integer");
  }
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UnsupportedTaskError*>(&e)) return 2;
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  if (dynamic_cast<const IncompatibleError*>(&e)) return 4;
  return 1;
}

namespace {

fs::path ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw ConfigError("cannot create directory '" + p.string() + "': " + ec.message());
  return p;
}

}  // namespace

void cmd_gen_data(const Config& cfg) {
  const fs::path dir = cfg.require_string("data.dir");
  const auto dc = data::DatasetConfig::from(cfg);
  const auto ds = data::generate_dataset(dc);
  data::write_dataset(dir, ds);
  cfg.write(ensure_dir(dir) / "gen_data.config");
}

diffusion::UNetConfig unet_config(const Config& cfg, const data::ModalityLayout& layout) {
  diffusion::UNetConfig u;
  u.channels = layout.channels;
  u.base_width = static_cast<int>(cfg.get_int("model.base_width", u.base_width));
  u.groups = static_cast<int>(cfg.get_int("model.groups", u.groups));
  return u;
}

diffusion::TrainConfig train_config(const Config& cfg) {
  diffusion::TrainConfig t;
  t.steps = static_cast<int>(cfg.get_int("train.steps", t.steps));
  t.batch_size = static_cast<int>(cfg.get_int("train.batch_size", t.batch_size));
  t.learning_rate = cfg.get_double("train.lr", t.learning_rate);
  t.eval_interval = static_cast<int>(cfg.get_int("train.eval_interval", t.eval_interval));
  t.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", static_cast<std::int64_t>(t.seed)));
  return t;
}

diffusion::NoiseSchedule base_schedule(const Config& cfg) {
  return diffusion::NoiseSchedule::linear(static_cast<int>(cfg.get_int("schedule.T", 1000)),
                                          cfg.get_double("schedule.beta_start", 1e-4),
                                          cfg.get_double("schedule.beta_end", 0.02));
}

diffusion::TrainResult cmd_train(const Config& cfg, const std::string& modality) {
  const auto layout = data::ModalityLayout::by_name(modality);
  const fs::path data_dir = cfg.require_string("data.dir");
  const fs::path models_dir = ensure_dir(cfg.require_string("models.dir"));
  const auto tc = train_config(cfg);
  const auto schedule = base_schedule(cfg);
  const int val_samples = static_cast<int>(cfg.get_int("train.val_samples", 64));
  const bool verbose = cfg.get_bool("log.verbose", true);
  if (val_samples < 1) throw ConfigError("train.val_samples must be positive");

  const auto ds = data::read_dataset(data_dir);
  // Gradients only ever see the train partition; val crops score checkpoints.
  const auto& train_vols = ds.partition(data::Partition::Train);
  const auto& val_vols = ds.partition(data::Partition::Val);

  std::mt19937_64 batch_rng(tc.seed);
  auto draw = [&](const std::vector<synth::RenderedVolume>& vols, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(vols.size()) - 1);
    const auto s = synth::sample_training_slice(vols[pick(rng)], rng);
    return select_channels(s.data, layout.first, layout.channels);
  };
  diffusion::BatchSource batches = [&](int n) {
    std::vector<Field> fs;
    for (int i = 0; i < n; ++i) fs.push_back(draw(train_vols, batch_rng));
    return to_tensor(fs);
  };
  std::mt19937_64 val_rng(tc.seed + 1);
  std::vector<Field> val_fields;
  for (int i = 0; i < val_samples; ++i) val_fields.push_back(draw(val_vols, val_rng));
  const auto val_set = to_tensor(val_fields);

  torch::manual_seed(tc.seed);  // initial weights follow train.seed
  diffusion::UNet net(unet_config(cfg, layout));
  if (verbose)
    std::cerr << "train " << modality << ": " << net->parameter_count() << " parameters, " << tc.steps << " steps\n";
  const auto result = diffusion::train(net, batches, val_set, schedule, tc, [&](const diffusion::LossRecord& r) {
    if (verbose)
      std::cerr << "  step " << r.step << " train " << r.train_loss << " val " << r.val_loss << std::endl;
  });

  diffusion::save_checkpoint(models_dir / (modality + ".gftc"), net, modality, schedule.T, &result);
  std::ofstream csv(models_dir / (modality + "_loss.csv"));
  csv << "step,train_loss,val_loss\n" << std::setprecision(9);
  for (const auto& r : result.history) {
    csv << r.step << ',';
    if (std::isfinite(r.train_loss)) csv << r.train_loss;
    csv << ',' << r.val_loss << '\n';
  }
  cfg.write(models_dir / (modality + "_train.config"));
  return result;
}

// --- reconstruction ---------------------------------------------------------

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32)};
  for (auto p : path) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (std::uint64_t{out[0]} << 32) | out[1];
}

ReconSettings recon_settings(const Config& cfg) {
  ReconSettings st;
  st.model = cfg.get_string("recon.model", st.model);
  data::ModalityLayout::by_name(st.model);
  st.obs_modality = cfg.get_string("obs.modality", st.model);
  data::ModalityLayout::by_name(st.obs_modality);
  st.checkpoint = cfg.has("recon.checkpoint")
                      ? fs::path(cfg.get_string("recon.checkpoint", ""))
                      : fs::path(cfg.require_string("models.dir")) / (st.model + ".gftc");
  st.obs.ebsd = solver::MaskSpec::parse(cfg.get_string("obs.ebsd_mask", st.obs.ebsd.to_string()));
  st.obs.pl = solver::MaskSpec::parse(cfg.get_string("obs.pl_mask", st.obs.pl.to_string()));
  st.obs.sigma_ebsd = cfg.get_double("obs.sigma_ebsd", st.obs.sigma_ebsd);
  st.obs.sigma_pl = cfg.get_double("obs.sigma_pl", st.obs.sigma_pl);
  st.perturb = cfg.get_string("obs.perturb", st.perturb);
  if (st.perturb != "none") synth::Perturbation::parse(st.perturb);
  st.obs_seed = static_cast<std::uint64_t>(cfg.get_int("obs.seed", static_cast<std::int64_t>(st.obs_seed)));
  st.slices = static_cast<int>(cfg.get_int("eval.slices", st.slices));
  st.slice_seed = static_cast<std::uint64_t>(cfg.get_int("eval.slice_seed", static_cast<std::int64_t>(st.slice_seed)));
  st.size = static_cast<int>(cfg.get_int("eval.size", st.size));
  st.stride = static_cast<int>(cfg.get_int("solver.stride", st.stride));
  st.solver.method = cfg.get_string("solver.method", st.solver.method);
  st.solver.n = static_cast<int>(cfg.get_int("solver.n", st.solver.n));
  st.solver.smc.particles = static_cast<int>(cfg.get_int("solver.particles", st.solver.smc.particles));
  st.solver.smc.tau2 = cfg.get_double("solver.tau2", st.solver.smc.tau2);
  // Trained models work on data normalized to [-1, 1].
  st.solver.smc.clip_x0 = cfg.get_double("solver.clip_x0", 1.0);
  st.solver.seed = static_cast<std::uint64_t>(cfg.get_int("solver.seed", static_cast<std::int64_t>(st.solver.seed)));
  st.solver.workers = worker_count();
  if (st.slices < 1) throw ConfigError("eval.slices must be >= 1");
  if (st.stride < 1) throw ConfigError("solver.stride must be >= 1");
  return st;
}

std::vector<SliceRecon> run_reconstruction(const ReconSettings& st, const data::Dataset& ds,
                                           diffusion::EpsPredictor& model, const diffusion::NoiseSchedule& schedule,
                                           const std::function<void(const SliceRecon&)>& progress) {
  const auto layout = data::ModalityLayout::by_name(st.obs_modality);
  const auto refs = data::held_out_slices(ds, st.slices, st.slice_seed, st.size);
  std::vector<SliceRecon> out;
  for (int i = 0; i < st.slices; ++i) {
    SliceRecon s;
    s.index = i;
    s.ref = refs[i];
    const auto crop = synth::crop_slice(ds.val[s.ref.volume], s.ref.z, s.ref.y0, s.ref.x0, st.size);
    s.truth = crop.data;
    s.ids = crop.ids;
    s.input = select_channels(crop.data, layout.first, layout.channels);
    if (st.perturb != "none" && layout.has_pl()) {
      std::mt19937_64 prng(derive_seed(st.obs_seed, {static_cast<std::uint64_t>(i), 1}));
      const auto pl = synth::perturb(select_channels(s.input, layout.pl_offset(), 3), synth::Perturbation::parse(st.perturb), prng);
      for (int r = 0; r < pl.height; ++r)
        for (int c = 0; c < pl.width; ++c)
          for (int k = 0; k < 3; ++k) s.input(r, c, layout.pl_offset() + k) = pl(r, c, k);
    }
    s.obs_seed = derive_seed(st.obs_seed, {static_cast<std::uint64_t>(i)});
    std::mt19937_64 orng(s.obs_seed);
    s.obs = solver::make_observation(s.input, layout, st.obs, orng);
    auto sc = st.solver;
    sc.seed = derive_seed(st.solver.seed, {static_cast<std::uint64_t>(i)});
    const auto set = solver::reconstruct_set(model, schedule, s.obs, sc);
    s.recons = to_fields(set.samples);
    s.seeds = set.seeds;
    if (progress) progress(s);
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

std::vector<std::uint64_t> dims_of(const Field& f) {
  return {static_cast<std::uint64_t>(f.height), static_cast<std::uint64_t>(f.width),
          static_cast<std::uint64_t>(f.channels)};
}

Field field_from(const io::Array& a) {
  if (a.dims.size() != 3) throw FormatError("expected an H x W x C array");
  Field f(static_cast<int>(a.dims[0]), static_cast<int>(a.dims[1]), static_cast<int>(a.dims[2]));
  f.data = a.to_f32();
  return f;
}

json slice_meta(const SliceRecon& s) {
  return {{"index", s.index},
          {"volume", s.ref.volume},
          {"z", s.ref.z},
          {"y0", s.ref.y0},
          {"x0", s.ref.x0},
          {"layout", s.obs.layout.name},
          {"ebsd_mask", s.obs.spec.ebsd.to_string()},
          {"pl_mask", s.obs.spec.pl.to_string()},
          {"sigma_ebsd", s.obs.spec.sigma_ebsd},
          {"sigma_pl", s.obs.spec.sigma_pl},
          {"observed_coordinates", s.obs.op.size()},
          {"obs_seed", s.obs_seed},
          {"seeds", s.seeds}};
}

}  // namespace

void write_slice_recon(const fs::path& path, const SliceRecon& s) {
  io::Container c;
  const int n = static_cast<int>(s.recons.size());
  std::vector<float> samples;
  for (const auto& r : s.recons) samples.insert(samples.end(), r.data.begin(), r.data.end());
  const auto& r0 = s.recons.at(0);
  c["samples"] = io::Array::from_f32({static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(r0.height),
                                      static_cast<std::uint64_t>(r0.width), static_cast<std::uint64_t>(r0.channels)},
                                     samples);
  c["truth"] = io::Array::from_f32(dims_of(s.truth), s.truth.data);
  c["input"] = io::Array::from_f32(dims_of(s.input), s.input.data);
  c["ids"] = io::Array::from_i32({static_cast<std::uint64_t>(s.ids.height), static_cast<std::uint64_t>(s.ids.width)},
                                 s.ids.data);
  const auto mask = s.obs.op.mask().to(torch::kUInt8).contiguous();
  c["obs_mask"] = io::Array::from_u8(
      {static_cast<std::uint64_t>(mask.size(0)), static_cast<std::uint64_t>(mask.size(1)),
       static_cast<std::uint64_t>(mask.size(2))},
      {mask.data_ptr<std::uint8_t>(), static_cast<std::size_t>(mask.numel())});
  const auto values = s.obs.values.contiguous();
  c["obs_values"] = io::Array::from_f32({static_cast<std::uint64_t>(values.numel())},
                                        {values.data_ptr<float>(), static_cast<std::size_t>(values.numel())});
  const auto sigma = s.obs.sigma.to(torch::kFloat32).contiguous();
  c["obs_sigma"] = io::Array::from_f32({static_cast<std::uint64_t>(sigma.numel())},
                                       {sigma.data_ptr<float>(), static_cast<std::size_t>(sigma.numel())});
  c["ebsd_pixels"] = io::Array::from_u8(
      {static_cast<std::uint64_t>(s.obs.ebsd_pixels.height), static_cast<std::uint64_t>(s.obs.ebsd_pixels.width)},
      s.obs.ebsd_pixels.data);
  c["meta"] = io::Array::from_string(slice_meta(s).dump());
  io::write_container(path, c);
}

SliceRecon read_slice_recon(const fs::path& path) {
  const auto c = io::read_container(path);
  const auto meta = json::parse(io::require(c, "meta").to_string());
  SliceRecon s;
  s.index = meta.at("index");
  s.ref = {meta.at("volume"), meta.at("z"), meta.at("y0"), meta.at("x0")};
  s.truth = field_from(io::require(c, "truth"));
  s.input = field_from(io::require(c, "input"));
  const auto& ids = io::require(c, "ids");
  s.ids = IdMap(static_cast<int>(ids.dims.at(0)), static_cast<int>(ids.dims.at(1)));
  s.ids.data = ids.to_i32();

  const auto& sm = io::require(c, "samples");
  if (sm.dims.size() != 4) throw FormatError("samples must be N x H x W x D");
  const auto all = sm.to_f32();
  const std::size_t per = sm.dims[1] * sm.dims[2] * sm.dims[3];
  for (std::uint64_t i = 0; i < sm.dims[0]; ++i) {
    Field f(static_cast<int>(sm.dims[1]), static_cast<int>(sm.dims[2]), static_cast<int>(sm.dims[3]));
    std::copy_n(all.begin() + static_cast<std::ptrdiff_t>(i * per), per, f.data.begin());
    s.recons.push_back(std::move(f));
  }
  const auto& m = io::require(c, "obs_mask");
  auto mask_u8 = m.to_u8();
  const auto mask = torch::from_blob(mask_u8.data(), {static_cast<std::int64_t>(m.dims.at(0)),
                                                      static_cast<std::int64_t>(m.dims.at(1)),
                                                      static_cast<std::int64_t>(m.dims.at(2))},
                                     torch::kUInt8)
                        .clone();
  s.obs.op = solver::MaskingOperator(mask);
  auto values = io::require(c, "obs_values").to_f32();
  s.obs.values = torch::from_blob(values.data(), {static_cast<std::int64_t>(values.size())}, torch::kFloat32).clone();
  auto sigma = io::require(c, "obs_sigma").to_f32();
  s.obs.sigma = torch::from_blob(sigma.data(), {static_cast<std::int64_t>(sigma.size())}, torch::kFloat32)
                    .to(torch::kFloat64);
  if (s.obs.values.numel() != s.obs.op.size()) throw FormatError("observation size does not match its mask");
  s.obs.layout = data::ModalityLayout::by_name(meta.at("layout").get<std::string>());
  s.obs.spec.ebsd = solver::MaskSpec::parse(meta.at("ebsd_mask").get<std::string>());
  s.obs.spec.pl = solver::MaskSpec::parse(meta.at("pl_mask").get<std::string>());
  s.obs.spec.sigma_ebsd = meta.at("sigma_ebsd");
  s.obs.spec.sigma_pl = meta.at("sigma_pl");
  const auto& px = io::require(c, "ebsd_pixels");
  s.obs.ebsd_pixels = BoundaryMap(static_cast<int>(px.dims.at(0)), static_cast<int>(px.dims.at(1)));
  s.obs.ebsd_pixels.data = px.to_u8();
  s.obs_seed = meta.at("obs_seed");
  s.seeds = meta.at("seeds").get<std::vector<std::uint64_t>>();
  return s;
}

std::vector<SliceRecon> read_recon_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) throw ConfigError("reconstruction directory '" + dir.string() + "' does not exist");
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("recon_", 0) == 0 && e.path().extension() == ".gftc") files.push_back(e.path());
  }
  if (files.empty()) throw ConfigError("no recon_*.gftc files in '" + dir.string() + "'");
  std::vector<SliceRecon> out;
  for (const auto& f : files) out.push_back(read_slice_recon(f));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  return out;
}

diffusion::Checkpoint load_model(const ReconSettings& st) {
  if (!fs::exists(st.checkpoint)) throw ConfigError("checkpoint '" + st.checkpoint.string() + "' not found");
  auto ck = diffusion::load_checkpoint(st.checkpoint);
  if (ck.modality != st.obs_modality)
    throw IncompatibleError("checkpoint modality " + ck.modality + " cannot reconstruct a " + st.obs_modality +
                            " observation");
  return ck;
}

namespace {

diffusion::NoiseSchedule sampling_schedule(const Config& cfg, int T, int stride) {
  return diffusion::NoiseSchedule::linear(T, cfg.get_double("schedule.beta_start", 1e-4),
                                          cfg.get_double("schedule.beta_end", 0.02))
      .respaced(stride);
}

}  // namespace

std::vector<SliceRecon> cmd_reconstruct(const Config& cfg) {
  const auto st = recon_settings(cfg);
  const fs::path out = ensure_dir(cfg.require_string("out.dir"));
  const auto ck = load_model(st);
  const auto ds = data::read_dataset(cfg.require_string("data.dir"));
  const auto schedule = sampling_schedule(cfg, ck.schedule_T, st.stride);
  const bool verbose = cfg.get_bool("log.verbose", true);
  diffusion::UNetPredictor model(ck.net);

  json meta = {{"model", st.model},
               {"checkpoint", st.checkpoint.string()},
               {"method", st.solver.method},
               {"particles", st.solver.smc.particles},
               {"clip_x0", st.solver.smc.clip_x0},
               {"n", st.solver.n},
               {"stride", st.stride},
               {"perturb", st.perturb},
               {"slices", json::array()}};
  // Config first so an interrupted run still documents itself.
  cfg.write(out / "reconstruct.config");
  auto slices = run_reconstruction(st, ds, model, schedule, [&](const SliceRecon& s) {
    std::ostringstream name;
    name << "recon_" << std::setw(3) << std::setfill('0') << s.index << ".gftc";
    write_slice_recon(out / name.str(), s);
    meta["slices"].push_back(slice_meta(s));
    if (verbose) std::cerr << "reconstructed slice " << s.index + 1 << "/" << st.slices << std::endl;
  });
  std::ofstream(out / "reconstruct.json") << meta.dump(2) << '\n';
  return slices;
}

// --- evaluation -------------------------------------------------------------

EvalSettings eval_settings(const Config& cfg, const std::string& dataset_symmetry) {
  EvalSettings e;
  e.knee_sigma = cfg.get_double("tasks.knee_sigma", e.knee_sigma);
  e.combine = tasks::parse_sobel_combine(cfg.get_string("tasks.sobel_combine", "l2"));
  e.blur_sigma = cfg.get_double("metrics.blur_sigma", e.blur_sigma);
  e.blur_radius = static_cast<int>(cfg.get_int("metrics.blur_radius", e.blur_radius));
  e.align.learning_rate = cfg.get_double("align.lr", e.align.learning_rate);
  e.align.batch_size = static_cast<int>(cfg.get_int("align.batch_size", e.align.batch_size));
  e.align.epochs = static_cast<int>(cfg.get_int("align.epochs", e.align.epochs));
  e.align.holdout = cfg.get_double("align.holdout", e.align.holdout);
  e.align.hidden = static_cast<int>(cfg.get_int("align.hidden", e.align.hidden));
  e.align.seed = static_cast<std::uint64_t>(cfg.get_int("align.seed", static_cast<std::int64_t>(e.align.seed)));
  e.align.min_pixels = static_cast<int>(cfg.get_int("align.min_pixels", e.align.min_pixels));
  e.symmetry = cfg.get_string("eval.symmetry", dataset_symmetry);
  orientation::SymmetryGroup::by_name(e.symmetry);
  return e;
}

namespace {

Field scattered(const SliceRecon& s) { return to_field(s.obs.op.scatter(s.obs.values)); }

double mse(const Field& a, const Field& b) {
  if (!a.same_shape(b)) throw ConfigError("mse: shapes differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (double{a.data[i]} - b.data[i]) * (double{a.data[i]} - b.data[i]);
  return acc / static_cast<double>(a.size());
}

}  // namespace

Field observed_ebsd(const SliceRecon& s) {
  if (!s.obs.layout.has_ebsd()) throw UnsupportedTaskError("observation has no EBSD channels");
  return select_channels(scattered(s), s.obs.layout.ebsd_offset(), 3);
}

Field observed_pl(const SliceRecon& s) {
  if (!s.obs.layout.has_pl()) throw UnsupportedTaskError("observation has no PL channels");
  return select_channels(scattered(s), s.obs.layout.pl_offset(), 3);
}

BoundaryEval evaluate_boundary(const SliceRecon& s, const EvalSettings& e, int n) {
  if (n <= 0 || n > static_cast<int>(s.recons.size())) n = static_cast<int>(s.recons.size());
  const std::vector<Field> subset(s.recons.begin(), s.recons.begin() + n);
  BoundaryEval out;
  out.pred = tasks::predict_boundaries(subset, s.obs.layout, e.knee_sigma, e.combine);
  const auto truth = synth::extract_boundaries(s.ids);
  out.chamfer = metrics::chamfer(out.pred.boundaries, truth);
  out.gbce = metrics::gbce(out.pred.mean_sobel, truth, e.blur_sigma, e.blur_radius);
  if (s.obs.spec.pl.kind == solver::MaskSpec::Kind::Full) {
    out.has_baseline = true;
    out.baseline = tasks::predict_boundaries_pl({observed_pl(s)}, e.knee_sigma, e.combine);
    out.baseline_chamfer = metrics::chamfer(out.baseline.boundaries, truth);
    out.baseline_gbce = metrics::gbce(out.baseline.mean_sobel, truth, e.blur_sigma, e.blur_radius);
  }
  return out;
}

SuperresEval evaluate_superres(const SliceRecon& s, const EvalSettings& e) {
  auto cfg = e.align;
  cfg.seed = derive_seed(e.align.seed, {static_cast<std::uint64_t>(s.index)});
  SuperresEval out;
  out.result = tasks::superresolve(tasks::ebsd_channels(s.recons, s.obs.layout), observed_ebsd(s), s.obs.ebsd_pixels, cfg);
  const auto truth = select_channels(s.truth, 0, 3);
  const auto& sym = orientation::SymmetryGroup::by_name(e.symmetry);
  out.aligned = metrics::disorientation_error(out.result.aligned, truth, s.ids, s.obs.ebsd_pixels, sym);
  out.unaligned = metrics::disorientation_error(out.result.mean, truth, s.ids, s.obs.ebsd_pixels, sym);
  return out;
}

DenoiseEval evaluate_denoise(const SliceRecon& s) {
  DenoiseEval out;
  out.mean_pl = tasks::denoise_pl(s.recons, s.obs.layout);
  const auto clean = select_channels(s.truth, 3, 3);
  out.mse_mean = mse(out.mean_pl, clean);
  out.mse_observed = mse(observed_pl(s), clean);
  return out;
}

namespace {

using report::num;

// Summary rows (group, metric, mean, std_error, n) over the per-slice table.
report::Table summarize_table(const report::Table& t, const std::string& group_col,
                              const std::vector<std::string>& metric_cols) {
  report::Table out({"group", "metric", "mean", "std_error", "n"});
  const int g = t.column(group_col);
  std::vector<std::string> groups;
  for (const auto& r : t.rows())
    if (std::find(groups.begin(), groups.end(), g < 0 ? "" : r[g]) == groups.end()) groups.push_back(g < 0 ? "" : r[g]);
  for (const auto& grp : groups)
    for (const auto& m : metric_cols) {
      const int c = t.column(m);
      std::vector<double> v;
      for (const auto& r : t.rows())
        if ((g < 0 || r[g] == grp) && !r[c].empty()) v.push_back(std::stod(r[c]));
      const auto sm = metrics::summarize(v);
      out.add({grp, m, num(sm.mean), num(sm.std_error), std::to_string(sm.n)});
    }
  return out;
}

std::string slice_tag(int i) {
  std::ostringstream os;
  os << "slice_" << std::setw(3) << std::setfill('0') << i;
  return os.str();
}

}  // namespace

report::Table cmd_evaluate(const Config& cfg, const std::string& task) {
  if (task != "boundary" && task != "superres" && task != "denoise")
    throw ConfigError("unknown task '" + task + "' (expected boundary, superres or denoise)");
  const fs::path in = cfg.require_string("eval.input");
  const fs::path out = ensure_dir(cfg.require_string("out.dir"));
  const std::string sym = cfg.has("data.dir") ? data::read_dataset_config(cfg.get_string("data.dir", "")).symmetry
                                              : std::string("hexagonal");
  const auto e = eval_settings(cfg, sym);
  const int images = static_cast<int>(cfg.get_int("eval.images", -1));
  const auto slices = read_recon_dir(in);
  auto want_images = [&](int i) { return images < 0 || i < images; };

  if (task == "boundary") {
    report::Table t({"slice", "method", "n", "chamfer_forward", "chamfer_backward", "chamfer_total", "gbce"});
    for (const auto& s : slices) {
      const auto b = evaluate_boundary(s, e);
      t.add({std::to_string(s.index), "diffusion", std::to_string(s.recons.size()), num(b.chamfer.forward),
             num(b.chamfer.backward), num(b.chamfer.total), num(b.gbce)});
      if (b.has_baseline)
        t.add({std::to_string(s.index), "sobel_baseline", "1", num(b.baseline_chamfer.forward),
               num(b.baseline_chamfer.backward), num(b.baseline_chamfer.total), num(b.baseline_gbce)});
      if (want_images(s.index)) {
        const auto tag = slice_tag(s.index);
        report::write_png(out / (tag + "_mean_sobel.png"), b.pred.mean_sobel);
        report::write_png(out / (tag + "_boundaries.png"), b.pred.boundaries);
        report::write_png(out / (tag + "_truth_boundaries.png"), synth::extract_boundaries(s.ids));
        if (b.has_baseline) report::write_png(out / (tag + "_baseline_boundaries.png"), b.baseline.boundaries);
      }
    }
    t.write(out / "boundary.csv");
    summarize_table(t, "method", {"chamfer_forward", "chamfer_backward", "chamfer_total", "gbce"})
        .write(out / "boundary_summary.csv");
    cfg.write(out / "evaluate.config");
    return t;
  }
  if (task == "superres") {
    report::Table t({"slice", "variant", "dis_all", "dis_intra", "dis_boundary", "n_all", "n_intra", "n_boundary",
                     "holdout_mse_before", "holdout_mse_after", "trained"});
    for (const auto& s : slices) {
      const auto r = evaluate_superres(s, e);
      for (const auto& [name, d] : {std::pair{"aligned", r.aligned}, std::pair{"unaligned", r.unaligned}})
        t.add({std::to_string(s.index), name, num(d.all), num(d.intra), num(d.boundary), std::to_string(d.n_all),
               std::to_string(d.n_intra), std::to_string(d.n_boundary), num(r.result.holdout_mse_before),
               num(r.result.holdout_mse_after), r.result.trained ? "1" : "0"});
      if (!r.result.warning.empty()) std::cerr << "slice " << s.index << ": " << r.result.warning << '\n';
      if (want_images(s.index)) {
        const auto tag = slice_tag(s.index);
        report::write_png(out / (tag + "_aligned_ebsd.png"), r.result.aligned);
        report::write_png(out / (tag + "_truth_ebsd.png"), select_channels(s.truth, 0, 3));
        report::write_png(out / (tag + "_observed_ebsd.png"), observed_ebsd(s));
      }
    }
    t.write(out / "superres.csv");
    summarize_table(t, "variant", {"dis_all", "dis_intra", "dis_boundary", "holdout_mse_before", "holdout_mse_after"})
        .write(out / "superres_summary.csv");
    cfg.write(out / "evaluate.config");
    return t;
  }
  report::Table t({"slice", "mse_mean_pl", "mse_observed_pl"});
  for (const auto& s : slices) {
    const auto d = evaluate_denoise(s);
    t.add({std::to_string(s.index), num(d.mse_mean), num(d.mse_observed)});
    if (want_images(s.index)) {
      const auto tag = slice_tag(s.index);
      report::write_png(out / (tag + "_mean_pl.png"), d.mean_pl);
      report::write_png(out / (tag + "_observed_pl.png"), observed_pl(s));
      report::write_png(out / (tag + "_clean_pl.png"), select_channels(s.truth, 3, 3));
    }
  }
  t.write(out / "denoise.csv");
  summarize_table(t, "", {"mse_mean_pl", "mse_observed_pl"}).write(out / "denoise_summary.csv");
  cfg.write(out / "evaluate.config");
  return t;
}

// --- sweeps -----------------------------------------------------------------

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

report::Table cmd_sweep(const Config& cfg) {
  auto st = recon_settings(cfg);
  const fs::path out = ensure_dir(cfg.require_string("out.dir"));
  const auto masks = split_list(cfg.get_string("sweep.ebsd_masks", "none,random:0.0625,grid:4,grid:2"));
  std::vector<int> ns;
  for (const auto& v : split_list(cfg.get_string("sweep.n", "1,10"))) {
    try {
      ns.push_back(std::stoi(v));
    } catch (const std::exception&) {
      throw ConfigError("sweep.n: '" + v + "' is not an integer");
    }
    if (ns.back() < 1) throw ConfigError("sweep.n values must be >= 1");
  }
  const int repeats = static_cast<int>(cfg.get_int("sweep.repeats", 1));
  const std::string task = cfg.get_string("sweep.task", "boundary");
  if (masks.empty() || ns.empty() || repeats < 1) throw ConfigError("sweep grid is empty");
  if (task != "boundary" && task != "superres") throw ConfigError("sweep.task must be boundary or superres");
  std::vector<solver::MaskSpec> specs;
  for (const auto& m : masks) specs.push_back(solver::MaskSpec::parse(m));

  const auto ck = load_model(st);
  const auto ds = data::read_dataset(cfg.require_string("data.dir"));
  const auto e = eval_settings(cfg, ds.config.symmetry);
  const auto schedule = sampling_schedule(cfg, ck.schedule_T, st.stride);
  const bool verbose = cfg.get_bool("log.verbose", true);
  diffusion::UNetPredictor model(ck.net);
  cfg.write(out / "sweep.config");

  const std::vector<std::string> metric_cols =
      task == "boundary" ? std::vector<std::string>{"chamfer_forward", "chamfer_backward", "chamfer_total", "gbce"}
                         : std::vector<std::string>{"dis_all", "dis_intra", "dis_boundary"};
  std::vector<std::string> header{"ebsd_mask", "fraction", "n", "repeat", "slice", "obs_seed", "solver_seed"};
  header.insert(header.end(), metric_cols.begin(), metric_cols.end());
  report::Table rows(header);
  report::Table summary({"ebsd_mask", "fraction", "n", "metric", "mean", "std_error", "lower", "upper", "repeats"});

  const auto base_obs_seed = st.obs_seed, base_solver_seed = st.solver.seed;
  for (std::size_t a = 0; a < specs.size(); ++a)
    for (std::size_t b = 0; b < ns.size(); ++b) {
      // per repeat, the slice-mean of every metric
      std::vector<std::vector<double>> repeat_means(metric_cols.size());
      std::vector<std::vector<double>> slice_values(metric_cols.size());
      for (int r = 0; r < repeats; ++r) {
        st.obs.ebsd = specs[a];
        st.solver.n = ns[b];
        st.obs_seed = derive_seed(base_obs_seed, {a, b, static_cast<std::uint64_t>(r)});
        st.solver.seed = derive_seed(base_solver_seed, {a, b, static_cast<std::uint64_t>(r)});
        const auto slices = run_reconstruction(st, ds, model, schedule);
        std::vector<double> sums(metric_cols.size(), 0.0);
        for (const auto& s : slices) {
          std::vector<double> v;
          if (task == "boundary") {
            const auto be = evaluate_boundary(s, e);
            v = {be.chamfer.forward, be.chamfer.backward, be.chamfer.total, be.gbce};
          } else {
            const auto se = evaluate_superres(s, e);
            v = {se.aligned.all, se.aligned.intra, se.aligned.boundary};
          }
          std::vector<std::string> row{masks[a], num(specs[a].fraction), std::to_string(ns[b]), std::to_string(r),
                                       std::to_string(s.index), std::to_string(s.obs_seed),
                                       std::to_string(st.solver.seed)};
          for (std::size_t k = 0; k < v.size(); ++k) {
            row.push_back(num(v[k]));
            sums[k] += v[k];
            slice_values[k].push_back(v[k]);
          }
          rows.add(std::move(row));
        }
        for (std::size_t k = 0; k < sums.size(); ++k) repeat_means[k].push_back(sums[k] / slices.size());
        rows.write(out / "sweep.csv");  // partial results survive a later failure
        if (verbose)
          std::cerr << "sweep cell " << masks[a] << " n=" << ns[b] << " repeat " << r + 1 << "/" << repeats << std::endl;
      }
      for (std::size_t k = 0; k < metric_cols.size(); ++k) {
        // With a single repeat the band falls back to the spread over slices.
        auto sm = metrics::summarize(repeats > 1 ? repeat_means[k] : slice_values[k]);
        sm.mean = metrics::summarize(repeat_means[k]).mean;
        summary.add({masks[a], num(specs[a].fraction), std::to_string(ns[b]), metric_cols[k], num(sm.mean),
                     num(sm.std_error), num(sm.mean - 2 * sm.std_error), num(sm.mean + 2 * sm.std_error),
                     std::to_string(repeats)});
      }
      summary.write(out / "sweep_summary.csv");
    }
  return summary;
}

void cmd_plot(const Config& cfg) {
  const fs::path in = cfg.require_string("plot.input");
  const fs::path out = ensure_dir(cfg.get_string("out.dir", in.string()));
  const auto t = report::Table::read(in / "sweep_summary.csv");
  const int cm = t.column("ebsd_mask"), cf = t.column("fraction"), cn = t.column("n"), cmet = t.column("metric"),
            cmean = t.column("mean"), cse = t.column("std_error");
  if (std::min({cm, cf, cn, cmet, cmean, cse}) < 0) throw FormatError("sweep_summary.csv lacks required columns");

  std::vector<std::string> metric_names;
  std::set<double> fractions;
  std::set<int> ns;
  for (const auto& r : t.rows()) {
    if (std::find(metric_names.begin(), metric_names.end(), r[cmet]) == metric_names.end())
      metric_names.push_back(r[cmet]);
    fractions.insert(std::stod(r[cf]));
    ns.insert(std::stoi(r[cn]));
  }
  const std::vector<double> fx(fractions.begin(), fractions.end());
  const std::vector<int> nv(ns.begin(), ns.end());
  for (const auto& metric : metric_names) {
    std::vector<report::Series> series;
    std::vector<std::vector<double>> grid(nv.size(), std::vector<double>(fx.size(), std::nan("")));
    for (std::size_t i = 0; i < nv.size(); ++i) {
      report::Series s;
      s.label = "N = " + std::to_string(nv[i]);
      for (const auto& r : t.rows()) {
        if (r[cmet] != metric || std::stoi(r[cn]) != nv[i]) continue;
        const double f = std::stod(r[cf]);
        s.x.push_back(100.0 * f);
        s.y.push_back(std::stod(r[cmean]));
        s.err.push_back(2.0 * std::stod(r[cse]));
        grid[i][std::find(fx.begin(), fx.end(), f) - fx.begin()] = std::stod(r[cmean]);
      }
      // sort points by fraction
      std::vector<std::size_t> order(s.x.size());
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](auto a, auto b) { return s.x[a] < s.x[b]; });
      report::Series sorted{s.label, {}, {}, {}};
      for (auto o : order) {
        sorted.x.push_back(s.x[o]);
        sorted.y.push_back(s.y[o]);
        sorted.err.push_back(s.err[o]);
      }
      series.push_back(std::move(sorted));
    }
    report::line_plot(out / (metric + "_vs_fraction.png"), series, metric + " (mean +/- 2 SE)",
                      "observed EBSD (%)", metric);
    std::vector<std::string> rl, cl;
    for (int n : nv) rl.push_back("N = " + std::to_string(n));
    for (double f : fx) cl.push_back(report::num(std::round(1000.0 * f) / 10.0) + "%");
    report::heatmap(out / (metric + "_heatmap.png"), grid, rl, cl, metric + " over N x observed EBSD");
  }
  cfg.write(out / "plot.config");
}

}  // namespace grainfuse::pipeline
