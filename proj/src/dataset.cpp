#include "grainfuse/dataset.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <random>

#include "grainfuse/errors.hpp"
#include "grainfuse/tensor_io.hpp"

namespace grainfuse::data {

namespace fs = std::filesystem;
using nlohmann::json;
using synth::Dims;
using synth::RenderedVolume;

namespace {

Dims dims_from(const Config& c, const std::string& prefix, Dims d) {
  d.nx = static_cast<int>(c.get_int(prefix + "_x", d.nx));
  d.ny = static_cast<int>(c.get_int(prefix + "_y", d.ny));
  d.nz = static_cast<int>(c.get_int(prefix + "_z", d.nz));
  return d;
}

json dims_json(const Dims& d) { return json::array({d.nx, d.ny, d.nz}); }
Dims dims_of(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()}; }

json config_json(const DatasetConfig& c) {
  return {{"seed", c.seed},
          {"train_volumes", c.train_volumes},
          {"val_volumes", c.val_volumes},
          {"train_dims", dims_json(c.train_dims)},
          {"val_dims", dims_json(c.val_dims)},
          {"n_grains", c.n_grains},
          {"texture_spread_deg", c.texture_spread_deg},
          {"symmetry", c.symmetry},
          {"pl_rotations", c.pl_rotations},
          {"pl_step_deg", c.pl_step_deg},
          {"pca_components", c.pca_components}};
}

DatasetConfig config_of(const json& j) {
  DatasetConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.train_volumes = j.at("train_volumes").get<int>();
  c.val_volumes = j.at("val_volumes").get<int>();
  c.train_dims = dims_of(j.at("train_dims"));
  c.val_dims = dims_of(j.at("val_dims"));
  c.n_grains = j.at("n_grains").get<int>();
  c.texture_spread_deg = j.at("texture_spread_deg").get<double>();
  c.symmetry = j.at("symmetry").get<std::string>();
  c.pl_rotations = j.at("pl_rotations").get<int>();
  c.pl_step_deg = j.at("pl_step_deg").get<double>();
  c.pca_components = j.at("pca_components").get<int>();
  return c;
}

// Per-volume seed derived from the dataset seed; partitions never share seeds.
std::uint64_t volume_seed(std::uint64_t base, Partition p, int i) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(p == Partition::Train ? 1 : 2), static_cast<std::uint32_t>(i)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (std::uint64_t{out[0]} << 32) | out[1];
}

io::Array field_stack(const std::vector<Field>& slices, const Dims& d) {
  const int ch = slices.empty() ? 0 : slices.front().channels;
  std::vector<float> all;
  all.reserve(static_cast<std::size_t>(d.voxels()) * ch);
  for (const auto& f : slices) all.insert(all.end(), f.data.begin(), f.data.end());
  return io::Array::from_f32({std::uint64_t(d.nz), std::uint64_t(d.ny), std::uint64_t(d.nx), std::uint64_t(ch)}, all);
}

std::vector<Field> unstack(const io::Array& a, const Dims& d) {
  if (a.dims.size() != 4 || a.dims[0] != std::uint64_t(d.nz) || a.dims[1] != std::uint64_t(d.ny) ||
      a.dims[2] != std::uint64_t(d.nx))
    throw FormatError("volume field has unexpected shape");
  const int ch = static_cast<int>(a.dims[3]);
  const auto v = a.to_f32();
  std::vector<Field> out;
  const std::size_t per = static_cast<std::size_t>(d.nx) * d.ny * ch;
  for (int z = 0; z < d.nz; ++z) {
    Field f(d.ny, d.nx, ch);
    std::copy(v.begin() + z * per, v.begin() + (z + 1) * per, f.data.begin());
    out.push_back(std::move(f));
  }
  return out;
}

void write_volume(const fs::path& path, const RenderedVolume& rv) {
  const auto& v = rv.volume;
  io::Container c;
  c["ids"] = io::Array::from_i32({std::uint64_t(v.dims.nz), std::uint64_t(v.dims.ny), std::uint64_t(v.dims.nx)}, v.ids);
  std::vector<float> q;
  for (const auto& o : v.orientations)
    for (double x : {o.w, o.x, o.y, o.z}) q.push_back(static_cast<float>(x));
  c["orientations"] = io::Array::from_f32({v.orientations.size(), 4}, q);
  c["ebsd"] = field_stack(rv.ebsd, v.dims);
  c["pl"] = field_stack(rv.pl, v.dims);
  io::write_container(path, c);
}

RenderedVolume read_volume(const fs::path& path) {
  const auto c = io::read_container(path);
  const auto& ids = io::require(c, "ids");
  if (ids.dims.size() != 3) throw FormatError("ids must be rank 3 in '" + path.string() + "'");
  RenderedVolume rv;
  auto& v = rv.volume;
  v.dims = {int(ids.dims[2]), int(ids.dims[1]), int(ids.dims[0])};
  v.ids = ids.to_i32();
  const auto q = io::require(c, "orientations").to_f32();
  for (std::size_t i = 0; i + 3 < q.size(); i += 4)
    v.orientations.push_back({double(q[i]), double(q[i + 1]), double(q[i + 2]), double(q[i + 3])});
  rv.ebsd = unstack(io::require(c, "ebsd"), v.dims);
  rv.pl = unstack(io::require(c, "pl"), v.dims);
  return rv;
}

}  // namespace

DatasetConfig DatasetConfig::from(const Config& c) {
  DatasetConfig d;
  d.seed = static_cast<std::uint64_t>(c.get_int("data.seed", static_cast<std::int64_t>(d.seed)));
  d.train_volumes = static_cast<int>(c.get_int("data.train_volumes", d.train_volumes));
  d.val_volumes = static_cast<int>(c.get_int("data.val_volumes", d.val_volumes));
  d.train_dims = dims_from(c, "data.train", d.train_dims);
  d.val_dims = dims_from(c, "data.val", d.val_dims);
  d.n_grains = static_cast<int>(c.get_int("data.grains", d.n_grains));
  d.texture_spread_deg = c.get_double("data.texture_spread_deg", d.texture_spread_deg);
  d.symmetry = c.get_string("data.symmetry", d.symmetry);
  d.pl_rotations = static_cast<int>(c.get_int("data.pl_rotations", d.pl_rotations));
  d.pl_step_deg = c.get_double("data.pl_step_deg", d.pl_step_deg);
  d.pca_components = static_cast<int>(c.get_int("data.pca_components", d.pca_components));
  if (d.train_volumes < 1 || d.val_volumes < 1) throw ConfigError("data needs at least one train and one val volume");
  orientation::SymmetryGroup::by_name(d.symmetry);
  return d;
}

Dataset generate_dataset(const DatasetConfig& cfg) {
  Dataset ds;
  ds.config = cfg;
  auto build = [&](Partition p, int i, const Dims& dims) {
    synth::MicrostructureParams mp;
    mp.seed = volume_seed(cfg.seed, p, i);
    mp.dims = dims;
    mp.n_grains = cfg.n_grains;
    mp.texture_spread_deg = cfg.texture_spread_deg;
    RenderedVolume rv;
    rv.volume = synth::generate_microstructure(mp);
    for (int z = 0; z < dims.nz; ++z) rv.ebsd.push_back(synth::render_ebsd(rv.volume, z));
    (p == Partition::Train ? ds.train_seeds : ds.val_seeds).push_back(mp.seed);
    return rv;
  };
  for (int i = 0; i < cfg.train_volumes; ++i) ds.train.push_back(build(Partition::Train, i, cfg.train_dims));
  for (int i = 0; i < cfg.val_volumes; ++i) ds.val.push_back(build(Partition::Val, i, cfg.val_dims));

  auto raw_pl = [&](const RenderedVolume& rv) {
    std::vector<Field> out;
    for (int z = 0; z < rv.volume.dims.nz; ++z)
      out.push_back(synth::simulate_pl(rv.volume, z, cfg.pl_rotations, cfg.pl_step_deg));
    return out;
  };
  std::vector<Field> corpus;
  std::vector<std::vector<Field>> train_raw;
  for (const auto& rv : ds.train) {
    train_raw.push_back(raw_pl(rv));
    corpus.insert(corpus.end(), train_raw.back().begin(), train_raw.back().end());
  }
  ds.pca = synth::fit_pca(corpus, cfg.pca_components);
  corpus.clear();
  for (std::size_t i = 0; i < ds.train.size(); ++i)
    for (const auto& f : train_raw[i]) ds.train[i].pl.push_back(ds.pca.project(f));
  for (auto& rv : ds.val)
    for (const auto& f : raw_pl(rv)) rv.pl.push_back(ds.pca.project(f));
  return ds;
}

void write_dataset(const fs::path& dir, const Dataset& ds) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create dataset directory '" + dir.string() + "': " + ec.message());
  for (std::size_t i = 0; i < ds.train.size(); ++i) write_volume(dir / ("train_" + std::to_string(i) + ".gftc"), ds.train[i]);
  for (std::size_t i = 0; i < ds.val.size(); ++i) write_volume(dir / ("val_" + std::to_string(i) + ".gftc"), ds.val[i]);

  const auto& p = ds.pca;
  io::Container c;
  auto f32 = [](const std::vector<double>& v) { return std::vector<float>(v.begin(), v.end()); };
  c["mean"] = io::Array::from_f32({std::uint64_t(p.input_dim)}, f32(p.mean));
  c["basis"] = io::Array::from_f32({std::uint64_t(p.components), std::uint64_t(p.input_dim)}, f32(p.basis));
  c["variances"] = io::Array::from_f32({std::uint64_t(p.components)}, f32(p.variances));
  io::write_container(dir / "pca.gftc", c);

  json meta = {{"config", config_json(ds.config)},
               {"train_seeds", ds.train_seeds},
               {"val_seeds", ds.val_seeds},
               {"partitions", {{"train", json::array()}, {"val", json::array()}}},
               {"pca",
                {{"input_dim", p.input_dim},
                 {"components", p.components},
                 {"mean", p.mean},
                 {"basis", p.basis},
                 {"variances", p.variances}}},
               {"normalization", {{"center", p.center}, {"half_range", p.half_range}}},
               {"symmetry", ds.config.symmetry}};
  for (std::size_t i = 0; i < ds.train.size(); ++i) meta["partitions"]["train"].push_back("train_" + std::to_string(i));
  for (std::size_t i = 0; i < ds.val.size(); ++i) meta["partitions"]["val"].push_back("val_" + std::to_string(i));
  std::ofstream out(dir / "dataset.json");
  if (!out) throw ConfigError("cannot write '" + (dir / "dataset.json").string() + "'");
  out << meta.dump(2) << '\n';
}

namespace {

json read_meta(const fs::path& dir) {
  std::ifstream in(dir / "dataset.json");
  if (!in) throw ConfigError("no dataset at '" + dir.string() + "' (dataset.json missing)");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("dataset.json is malformed: " + std::string(e.what()));
  }
}

}  // namespace

DatasetConfig read_dataset_config(const fs::path& dir) {
  const auto meta = read_meta(dir);
  try {
    return config_of(meta.at("config"));
  } catch (const json::exception& e) {
    throw FormatError("dataset.json config block is malformed: " + std::string(e.what()));
  }
}

Dataset read_dataset(const fs::path& dir) {
  const auto meta = read_meta(dir);
  Dataset ds;
  try {
    ds.config = config_of(meta.at("config"));
    ds.train_seeds = meta.at("train_seeds").get<std::vector<std::uint64_t>>();
    ds.val_seeds = meta.at("val_seeds").get<std::vector<std::uint64_t>>();
    const auto& p = meta.at("pca");
    ds.pca.input_dim = p.at("input_dim").get<int>();
    ds.pca.components = p.at("components").get<int>();
    ds.pca.mean = p.at("mean").get<std::vector<double>>();
    ds.pca.basis = p.at("basis").get<std::vector<double>>();
    ds.pca.variances = p.at("variances").get<std::vector<double>>();
    ds.pca.center = meta.at("normalization").at("center").get<double>();
    ds.pca.half_range = meta.at("normalization").at("half_range").get<double>();
    for (const auto& name : meta.at("partitions").at("train")) ds.train.push_back(read_volume(dir / (name.get<std::string>() + ".gftc")));
    for (const auto& name : meta.at("partitions").at("val")) ds.val.push_back(read_volume(dir / (name.get<std::string>() + ".gftc")));
  } catch (const json::exception& e) {
    throw FormatError("dataset.json is malformed: " + std::string(e.what()));
  }
  return ds;
}

ModalityLayout ModalityLayout::by_name(const std::string& name) {
  if (name == "EP") return {"EP", 0, 6};
  if (name == "E") return {"E", 0, 3};
  if (name == "P") return {"P", 3, 3};
  throw ConfigError("unknown modality '" + name + "' (expected EP, E or P)");
}

std::vector<SliceRef> held_out_slices(const Dataset& ds, int n, std::uint64_t seed, int size) {
  if (ds.val.empty()) throw ConfigError("dataset has no validation volumes");
  std::mt19937_64 rng(seed);
  std::vector<SliceRef> out;
  for (int i = 0; i < n; ++i) {
    const int v = i % static_cast<int>(ds.val.size());
    const auto& d = ds.val[v].volume.dims;
    if (d.nx < size || d.ny < size) throw ConfigError("validation volume smaller than the evaluation crop");
    std::uniform_int_distribution<int> zd(0, d.nz - 1), yd(0, d.ny - size), xd(0, d.nx - size);
    const int z = zd(rng), y0 = yd(rng), x0 = xd(rng);
    out.push_back({v, z, y0, x0});
  }
  return out;
}

}  // namespace grainfuse::data
