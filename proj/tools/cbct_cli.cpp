// cbct: simulate, train, evaluate and inspect sparse-view cone-beam CT models.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "cbct/config.hpp"
#include "cbct/dataset.hpp"
#include "cbct/eval.hpp"
#include "cbct/fdk.hpp"
#include "cbct/io.hpp"
#include "cbct/presets.hpp"
#include "cbct/projector.hpp"
#include "cbct/train.hpp"

namespace {

using namespace cbct;

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitIo = 2;

TrainConfig config_or_default(const std::string& path) { return path.empty() ? TrainConfig{} : load_config(path); }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = detail::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_simulate(const std::string& config, std::size_t n, std::uint64_t seed, const std::string& out) {
  const TrainConfig cfg = config_or_default(config);
  const Dataset ds = simulate_dataset(cfg, n, seed, out);
  const auto c = split_counts(n);
  std::printf("wrote %zu volumes to %s (train %zu, validation %zu, test %zu; %zu of %zu views)\n", ds.entries.size(),
              out.c_str(), c.train, c.validation, c.test, cfg.sparse_geometry().n_views(), cfg.n_views);
  return kExitOk;
}

int cmd_train(const std::string& config, const std::string& data, const std::string& out, const std::string& resume,
              bool quiet) {
  const TrainConfig cfg = config_or_default(config);
  const Dataset ds = load_dataset(data);
  TrainOptions opt;
  opt.out_dir = out;
  opt.resume = resume;
  opt.log = quiet ? nullptr : &std::cout;
  const TrainResult r = train(cfg, ds, opt);
  std::printf("%llu optimizer steps, best %s L1 %.6g; checkpoints in %s\n", static_cast<unsigned long long>(r.steps),
              ds.subset(Split::validation).empty() ? "training" : "validation", r.best_val, out.c_str());
  return kExitOk;
}

int cmd_eval(const std::string& config, const std::vector<std::string>& checkpoints, const std::string& data,
             const std::string& report, const std::string& methods_list, const std::string& split) {
  const TrainConfig cfg = config_or_default(config);
  const Dataset ds = load_dataset(data);
  const std::string fp = geometry_fingerprint(cfg.sparse_geometry(), cfg.grid());
  if (ds.fingerprint != fp)
    throw std::invalid_argument("dataset " + data + " has geometry fingerprint " + ds.fingerprint +
                                ", the config describes " + fp);
  std::map<std::string, std::unique_ptr<Reconstructor<float>>> owned;
  std::map<std::string, const Reconstructor<float>*> models;
  for (const auto& path : checkpoints) {
    auto m = load_model(path);
    const std::string kind = model_kind_name(m->config().kind);
    if (geometry_fingerprint(m->geometry(), m->grid()) != ds.fingerprint)
      throw std::invalid_argument("checkpoint " + path + " was trained for another geometry than dataset " + data);
    if (owned.count(kind)) throw std::invalid_argument("two checkpoints for method " + kind);
    models[kind] = m.get();
    owned[kind] = std::move(m);
  }
  std::vector<std::string> methods = split_list(methods_list);
  if (methods.empty()) {
    methods.push_back("fdk");
    for (const auto& [k, m] : models) methods.push_back(k);
  }
  const EvalReport rep = evaluate(ds, parse_split(split), methods, models);
  write_report(report, rep);
  std::cout << format_report(rep);
  return kExitOk;
}

int cmd_reconstruct(const std::string& method, const std::string& checkpoint, const std::string& config,
                    const std::string& projections, const std::string& out) {
  if (!is_known_method(method) || method == "reference")
    throw std::invalid_argument("method must be fdk, fdkconvnet, pdnet or pdunet, got '" + method + "'");
  const auto proj = load_projections(projections);
  Volume v;
  if (method == "fdk") {
    const VolumeGrid grid = !checkpoint.empty() ? load_checkpoint(checkpoint).config.grid()
                                                : config_or_default(config).grid();
    v = fdk_hu(proj, grid);
  } else {
    if (checkpoint.empty()) throw std::invalid_argument("method " + method + " needs --checkpoint");
    const auto model = load_model(checkpoint);
    if (model_kind_name(model->config().kind) != method)
      throw std::invalid_argument("checkpoint " + checkpoint + " holds a " + model_kind_name(model->config().kind) +
                                  " model, not " + method);
    if (geometry_fingerprint(proj.geometry, model->grid()) != geometry_fingerprint(model->geometry(), model->grid()))
      throw std::invalid_argument("projections " + projections + " do not match the checkpoint geometry");
    v = model_hu(*model, proj);
  }
  save_volume(out, v);
  std::printf("wrote %zux%zux%zu HU volume to %s\n", v.grid.nx, v.grid.ny, v.grid.nz, out.c_str());
  return kExitOk;
}

int cmd_export_slice(const std::string& volume, const std::string& axis, std::size_t index, const std::string& out) {
  if (axis.size() != 1) throw std::invalid_argument("axis must be x, y or z, got '" + axis + "'");
  const Volume v = load_volume(volume);
  if (v.unit != Unit::hu) throw std::invalid_argument(volume + ": expected a HU volume, got " + unit_name(v.unit));
  const GreyImage img = slice_image(v, axis[0], index);
  write_pgm(out, img);
  std::printf("wrote %zux%zu slice to %s\n", img.width, img.height, out.c_str());
  return kExitOk;
}

/// Dot-product test with the transpose taken on a grid of a different voxel
/// size: a deliberately wrong adjoint.
template <typename T>
double mismatched_adjoint_error(const ScanSetup& s, std::uint64_t seed) {
  VolumeGrid other = s.grid;
  other.voxel_mm *= 1.25;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::vector<T> x(s.grid.size()), y(s.geometry.n_views() * s.geometry.det_rows * s.geometry.det_cols);
  for (auto& v : x) v = static_cast<T>(uni(rng));
  for (auto& v : y) v = static_cast<T>(uni(rng));
  std::vector<T> ax(y.size()), aty(x.size());
  forward_project<T>(x, s.grid, s.geometry, ax);
  transpose_project<T>(y, s.geometry, other, aty);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += static_cast<double>(ax[i]) * y[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += static_cast<double>(x[i]) * aty[i];
  return std::abs(lhs - rhs) / std::max(std::abs(lhs), std::numeric_limits<double>::min());
}

template <typename T>
int run_adjoint_test(const std::string& preset, std::uint64_t seed) {
  const double tol = std::is_same_v<T, double> ? 1e-10 : 1e-4;
  const bool broken = preset == "mismatched";
  const ScanSetup s = adjoint_setup(broken ? "default" : preset);
  const double proj_err = broken ? mismatched_adjoint_error<T>(s, seed) : adjoint_test<T>(s.geometry, s.grid, seed);
  const double fdk_err = fdk_adjoint_test<T>(s.geometry, s.grid, seed + 1);
  const bool ok = proj_err <= tol && fdk_err <= tol;
  std::printf("preset %s, %s, seed %llu\n", preset.c_str(), std::is_same_v<T, double> ? "f64" : "f32",
              static_cast<unsigned long long>(seed));
  std::printf("projector relative error %.3e (tolerance %.0e) %s\n", proj_err, tol, proj_err <= tol ? "ok" : "FAILED");
  std::printf("fdk relative error       %.3e (tolerance %.0e) %s\n", fdk_err, tol, fdk_err <= tol ? "ok" : "FAILED");
  return ok ? kExitOk : kExitInvalid;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-view cone-beam CT reconstruction with learned primal-dual networks"};
  app.require_subcommand(1);

  std::string config, out, data, report, methods, resume, method, checkpoint, projections, volume, axis = "z";
  std::string preset = "default", split = "test";
  std::vector<std::string> checkpoints;
  std::size_t n_volumes = 0, index = 0;
  std::uint64_t seed = 0;
  bool f64 = false, quiet = false;

  auto* sim = app.add_subcommand("simulate", "Generate phantoms and sparse projections");
  sim->add_option("--config", config, "Config file (defaults if omitted)")->check(CLI::ExistingFile);
  sim->add_option("--n", n_volumes, "Number of volumes")->required()->check(CLI::PositiveNumber);
  sim->add_option("--seed", seed, "Phantom seed")->required();
  sim->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train the configured model");
  tr->add_option("--config", config, "Config file (defaults if omitted)")->check(CLI::ExistingFile);
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--out", out, "Output directory for checkpoints and run manifest")->required();
  tr->add_option("--resume", resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
  tr->add_flag("--quiet", quiet, "No per-epoch log");

  auto* ev = app.add_subcommand("eval", "Evaluate methods on the test split");
  ev->add_option("--config", config, "Config file (defaults if omitted)")->check(CLI::ExistingFile);
  ev->add_option("--checkpoint", checkpoints, "Model checkpoint (repeatable)");
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--report", report, "Report path; key-value sidecar at <report>.kv")->required();
  ev->add_option("--methods", methods, "Comma-separated: fdk,fdkconvnet,pdnet,pdunet,reference");
  ev->add_option("--split", split, "Split to evaluate")->check(CLI::IsMember({"test", "validation", "train"}));

  auto* rec = app.add_subcommand("reconstruct", "Reconstruct one projection file");
  rec->add_option("--method", method, "fdk, fdkconvnet, pdnet or pdunet")->required();
  rec->add_option("--checkpoint", checkpoint, "Checkpoint (learned methods)");
  rec->add_option("--config", config, "Config giving the grid for fdk without a checkpoint")->check(CLI::ExistingFile);
  rec->add_option("--projections", projections, "Projection file")->required();
  rec->add_option("--out", out, "Output volume (HU)")->required();

  auto* ex = app.add_subcommand("export-slice", "Write one slice as an 8-bit PGM");
  ex->add_option("--volume", volume, "Volume file")->required();
  ex->add_option("--axis", axis, "x, y or z");
  ex->add_option("--index", index, "Slice index")->required();
  ex->add_option("--out", out, "Output PGM")->required();

  auto* adj = app.add_subcommand("adjoint-test", "Dot-product tests of the projector and FDK transposes");
  adj->add_option("--seed", seed, "Random seed");
  adj->add_option("--preset", preset, "small, default, or mismatched (expected to fail)")
      ->check(CLI::IsMember({"small", "default", "mismatched"}));
  adj->add_flag("--f64", f64, "Double precision");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*sim) return cmd_simulate(config, n_volumes, seed, out);
    if (*tr) return cmd_train(config, data, out, resume, quiet);
    if (*ev) return cmd_eval(config, checkpoints, data, report, methods, split);
    if (*rec) return cmd_reconstruct(method, checkpoint, config, projections, out);
    if (*ex) return cmd_export_slice(volume, axis, index, out);
    if (*adj) return f64 ? run_adjoint_test<double>(preset, seed) : run_adjoint_test<float>(preset, seed);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  return kExitInvalid;
}
