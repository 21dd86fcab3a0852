#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbct/adam.hpp"
#include "cbct/augment.hpp"
#include "cbct/checkpoint.hpp"
#include "cbct/config.hpp"
#include "cbct/dataset.hpp"
#include "cbct/models.hpp"
#include "cbct/ops.hpp"
#include "cbct/simulate.hpp"

namespace cbct {

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  std::filesystem::path out_dir;
  std::string resume;          // checkpoint to continue from
  std::ostream* log = nullptr;  // one line per epoch
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  std::size_t steps = 0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<double> step_losses;  // batch-mean L1, in step order (this invocation)
  std::vector<EpochRecord> epochs;
  double best_val = std::numeric_limits<double>::infinity();
  std::uint64_t steps = 0;  // total optimizer steps, including resumed ones
  bool hit_max_steps = false;
};

struct Sample {
  Tensor<float> projections;  // [1, V, R, C]
  Tensor<float> target;       // [1, nz, ny, nx], normalized
};

inline Tensor<float> projection_tensor(const ProjectionStack<float>& p) {
  const auto& g = p.geometry;
  return Tensor<float>(Shape{1, g.n_views(), g.det_rows, g.det_cols}, p.data);
}

inline Tensor<float> volume_tensor(const Volume& v) {
  return Tensor<float>(Shape{1, v.grid.nz, v.grid.ny, v.grid.nx}, v.values);
}

inline Volume tensor_volume(const Tensor<float>& t, const VolumeGrid& grid, Unit unit) {
  if (t.numel() != grid.size()) throw std::invalid_argument("tensor_volume: size does not match the grid");
  Volume v(grid, unit);
  std::copy(t.data().begin(), t.data().end(), v.values.begin());
  return v;
}

/// Stacks same-shaped [C, ...] tensors into [N, C, ...].
inline Tensor<float> stack_batch(const std::vector<Tensor<float>>& items) {
  Shape s = items.at(0).shape();
  s.insert(s.begin(), items.size());
  std::vector<float> data;
  data.reserve(shape_numel(s));
  for (const auto& t : items) data.insert(data.end(), t.data().begin(), t.data().end());
  return Tensor<float>(s, std::move(data));
}

/// Training and validation samples for one dataset. Stored volumes and
/// projections are read once and kept in memory.
class SampleSource {
 public:
  SampleSource(const TrainConfig& cfg, const Dataset& data) : cfg_(cfg), data_(data) {}

  /// With augmentation on, the scan is re-simulated from the augmented
  /// volume so projections and target stay consistent.
  Sample train_sample(const DatasetEntry& e, std::size_t epoch) {
    if (!cfg_.augment.enabled) return stored_sample(e);
    const Volume aug = augment(volume(e), mix_seed(mix_seed(cfg_.seed, epoch), e.id), cfg_.augment);
    const SimulatedScan scan = simulate_scan(aug, cfg_.full_geometry(), static_cast<long long>(cfg_.sparse_factor));
    return {projection_tensor(scan.projections), volume_tensor(normalize_hu(aug))};
  }

  Sample stored_sample(const DatasetEntry& e) {
    auto it = projections_.find(e.id);
    if (it == projections_.end()) {
      auto p = data_.load_projections(e);
      if (geometry_fingerprint(p.geometry, cfg_.grid()) != geometry_fingerprint(cfg_.sparse_geometry(), cfg_.grid()))
        throw std::invalid_argument(data_.projection_path(e) + ": projection geometry does not match the config");
      it = projections_.emplace(e.id, projection_tensor(p)).first;
    }
    return {it->second, volume_tensor(normalize_hu(volume(e)))};
  }

  const Volume& volume(const DatasetEntry& e) {
    auto it = volumes_.find(e.id);
    if (it == volumes_.end()) {
      Volume v = data_.load_volume(e);
      if (!(v.grid == cfg_.grid())) throw std::invalid_argument(data_.volume_path(e) + ": grid does not match the config");
      it = volumes_.emplace(e.id, std::move(v)).first;
    }
    return it->second;
  }

 private:
  TrainConfig cfg_;
  Dataset data_;
  std::map<std::size_t, Volume> volumes_;
  std::map<std::size_t, Tensor<float>> projections_;
};

/// Mean L1 (normalized units) of eval-mode predictions over `entries`.
inline double validation_loss(const Reconstructor<float>& model, SampleSource& src,
                              const std::vector<DatasetEntry>& entries) {
  if (entries.empty()) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  for (const auto& e : entries) {
    const Sample s = src.stored_sample(e);
    const auto pred = model.forward(s.projections, Mode::eval);
    acc += l1_loss(pred, s.target).item();
  }
  return acc / static_cast<double>(entries.size());
}

/// Epoch `epoch` visits the training set in a permutation seeded by
/// (seed, epoch).
inline std::vector<DatasetEntry> epoch_order(std::vector<DatasetEntry> entries, std::uint64_t seed,
                                             std::size_t epoch) {
  std::mt19937_64 rng(mix_seed(seed, 0x5eed0000ull + epoch));
  for (std::size_t i = entries.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(entries[i - 1], entries[pick(rng)]);
  }
  return entries;
}

inline void write_run_manifest(const std::filesystem::path& path, const TrainConfig& cfg, const Dataset& data,
                               const TrainResult& r, const std::string& resumed_from, double seconds) {
  std::ofstream m(path);
  m << "# resolved config\n" << serialize_config(cfg);
  m << "# run\n";
  m << "run.dataset = " << data.dir.string() << "\n";
  m << "run.fingerprint = " << data.fingerprint << "\n";
  m << "run.threads = 1\n";
  if (!resumed_from.empty()) m << "run.resumed_from = " << resumed_from << "\n";
  for (Split s : {Split::train, Split::validation, Split::test}) {
    m << "run.split." << split_name(s) << " =";
    for (const auto& e : data.subset(s)) m << " " << e.id;
    m << "\n";
  }
  for (const auto& e : r.epochs)
    m << "run.epoch." << e.epoch << " = train_l1 " << detail::format_double(e.train_loss) << " val_l1 "
      << detail::format_double(e.val_loss) << " steps " << e.steps << " seconds " << e.seconds << "\n";
  m << "run.steps = " << r.steps << "\n";
  m << "run.best_val = " << detail::format_double(r.best_val) << "\n";
  m << "run.seconds = " << seconds << "\n";
  if (!m) throw IoError(IoErrc::write_failed, path.string());
}

/// Adam on the batch-mean L1 loss. Each optimizer step accumulates gradients
/// over effective_batch samples in chunks of micro_batch; a shorter final
/// batch still takes a step. Writes last.cbk every checkpoint_every epochs
/// (and at the end), best.cbk whenever validation L1 improves (training L1
/// when there is no validation split), and run_manifest.txt.
inline TrainResult train(const TrainConfig& cfg, const Dataset& data, const TrainOptions& opt) {
  const auto wall0 = std::chrono::steady_clock::now();
  cfg.validate();
  const ConeBeamGeometry sparse = cfg.sparse_geometry();
  const std::string fp = geometry_fingerprint(sparse, cfg.grid());
  if (data.fingerprint != fp)
    throw std::invalid_argument("dataset " + data.dir.string() + " was simulated for geometry " +
                                data.fingerprint + ", the config describes " + fp);
  const auto train_set = data.subset(Split::train);
  const auto val_set = data.subset(Split::validation);
  if (train_set.empty()) throw std::invalid_argument("dataset has no training volumes");

  std::error_code ec;
  std::filesystem::create_directories(opt.out_dir, ec);
  if (ec) throw IoError(IoErrc::open_failed, opt.out_dir.string(), ec.message());

  Reconstructor<float> model(cfg.model, sparse, cfg.grid(), cfg.seed);
  AdamState<float> adam;
  adam.hyper = cfg.adam();
  TrainResult result;
  std::size_t start_epoch = 0;
  if (!opt.resume.empty()) {
    const Checkpoint ck = load_checkpoint(opt.resume);
    if (!ck.has_optimizer) throw std::invalid_argument(opt.resume + ": checkpoint has no optimizer state");
    restore_state(ck, model, &adam);
    adam.hyper = cfg.adam();
    start_epoch = ck.epoch;
    result.steps = ck.step;
    result.best_val = ck.best_val;
  }
  if (cfg.max_steps && result.steps >= cfg.max_steps) result.hit_max_steps = true;

  auto params = model.parameters();
  SampleSource src(cfg, data);
  auto snapshot = [&](std::size_t epochs_done) {
    Checkpoint ck;
    ck.config = cfg;
    ck.epoch = epochs_done;
    ck.step = result.steps;
    ck.best_val = result.best_val;
    capture_state(ck, model, &adam);
    return ck;
  };

  for (std::size_t epoch = start_epoch; epoch < cfg.epochs && !result.hit_max_steps; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = epoch_order(train_set, cfg.seed, epoch);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    double loss_acc = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.effective_batch) {
      const std::size_t bn = std::min(cfg.effective_batch, order.size() - b0);
      for (auto& p : params) p.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t m0 = 0; m0 < bn; m0 += cfg.micro_batch) {
        const std::size_t mn = std::min(cfg.micro_batch, bn - m0);
        std::vector<Tensor<float>> xs, ys;
        for (std::size_t i = 0; i < mn; ++i) {
          Sample s = src.train_sample(order[b0 + m0 + i], epoch);
          xs.push_back(s.projections);
          ys.push_back(s.target);
        }
        const auto pred = model.forward(stack_batch(xs), Mode::train);
        const auto loss = scale(l1_loss(pred, stack_batch(ys)), static_cast<float>(mn) / static_cast<float>(bn));
        batch_loss += loss.item();
        loss.backward();
      }
      if (!std::isfinite(batch_loss))
        throw NonFiniteLoss("non-finite loss at step " + std::to_string(result.steps + 1) + " (epoch " +
                            std::to_string(epoch + 1) + ", lr " + detail::format_double(cfg.lr) + ")");
      adam_step(params, adam);
      ++result.steps;
      ++rec.steps;
      loss_acc += batch_loss;
      result.step_losses.push_back(batch_loss);
      if (cfg.max_steps && result.steps >= cfg.max_steps) {
        result.hit_max_steps = true;
        break;
      }
    }
    rec.train_loss = loss_acc / static_cast<double>(rec.steps);
    rec.val_loss = validation_loss(model, src, val_set);
    const double score = val_set.empty() ? rec.train_loss : rec.val_loss;
    if (score < result.best_val) {
      result.best_val = score;
      save_checkpoint((opt.out_dir / "best.cbk").string(), snapshot(epoch + 1));
    }
    const bool last = epoch + 1 == cfg.epochs || result.hit_max_steps;
    if ((epoch + 1) % cfg.checkpoint_every == 0 || last)
      save_checkpoint((opt.out_dir / "last.cbk").string(), snapshot(epoch + 1));
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.epochs.push_back(rec);
    if (opt.log)
      *opt.log << "epoch " << rec.epoch << "/" << cfg.epochs << "  train_l1 " << rec.train_loss << "  val_l1 "
               << rec.val_loss << "  steps " << result.steps << "  " << rec.seconds << " s\n";
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  write_run_manifest(opt.out_dir / "run_manifest.txt", cfg, data, result, opt.resume, seconds);
  return result;
}

}  // namespace cbct
