#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "demorph/imaging.hpp"
#include "demorph/losses.hpp"
#include "demorph/nets.hpp"

namespace demorph {

enum class TrainMode { Decomposition, Demorphing };

struct TrainConfig {
  TrainMode mode = TrainMode::Decomposition;
  double learning_rate = 0.002;
  int batch_size = 32;
  int epochs = 800;
  double lr_gamma = 0.998;  // per-epoch exponential decay
  std::uint64_t seed = 0;
  std::optional<double> lambda;  // defaults to 1 / (k + 1)
  int checkpoint_every = 0;      // epochs; 0 disables intermediate checkpoints
  double grad_clip = 0.0;        // global-norm clip; 0 disables
  NetworkConfig net;

  // Adam, batch 32, lr 0.002, 800 epochs at 224x224, no clipping.
  static TrainConfig full(TrainMode mode);
  // 64x64, base 16, batch 8, 300 (decomposition) / 400 (demorphing) epochs, clip at 5.
  static TrainConfig desk(TrainMode mode);

  // All violated constraints, one per entry.
  std::vector<std::string> problems() const;
  void validate() const;

  LossConfig loss() const;
};

// lr_0 * gamma^epoch
double learning_rate_at(const TrainConfig& cfg, int epoch);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> trace;
  std::filesystem::path final_checkpoint;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<Tensor<float>> first_moment;
  std::vector<Tensor<float>> second_moment;
};

// Adam with beta1 0.9, beta2 0.999, eps 1e-8 over the trainable parameters.
class AdamOptimizer {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  AdamOptimizer() = default;
  explicit AdamOptimizer(const ParameterList<float>& params);

  void step(const ParameterList<float>& params, double lr);
  const AdamState& state() const { return state_; }
  void restore(AdamState state);

 private:
  AdamState state_;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class StructuralError : public IntegrityError {
 public:
  using IntegrityError::IntegrityError;
};

// Everything persisted in a checkpoint directory.
struct Checkpoint {
  TrainConfig config;
  Networks<float> networks;
  int epochs_done = 0;
  std::vector<EpochRecord> trace;
  std::optional<AdamState> optimizer;
};

// Directory layout: config.json, manifest.json (parameter order, shapes, progress) and
// arrays/<name>.bin (see array_io.hpp for the byte format).
void save_checkpoint(const std::filesystem::path& dir, Networks<float>& networks,
                     const TrainConfig& config, int epochs_done = 0,
                     std::span<const EpochRecord> trace = {},
                     const AdamState* optimizer = nullptr);

// Rebuilds networks from the stored config and fills every array. Throws IntegrityError for
// missing or truncated arrays and StructuralError when the stored arrays do not fit the config
// (or `expected`, when given). Nothing is returned on failure.
Checkpoint load_checkpoint(const std::filesystem::path& dir,
                           const std::optional<NetworkConfig>& expected = std::nullopt);

class Trainer {
 public:
  using EpochCallback = std::function<void(const EpochRecord&)>;

  explicit Trainer(TrainConfig cfg);
  explicit Trainer(Checkpoint resume);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  // Runs epochs [epochs_done, cfg.epochs). Checkpoints go to run_dir/checkpoints when run_dir
  // is non-empty.
  TrainReport fit_decomposition(std::span<const Image> images,
                                const std::filesystem::path& run_dir = {});
  TrainReport fit_demorph(std::span<const MorphSample> samples,
                          const std::filesystem::path& run_dir = {});

  // One optimizer step on a fixed batch; returns the loss before the update.
  double step_decomposition(const Tensor<float>& batch, double lr);
  double step_demorph(const Tensor<float>& morph, const Tensor<float>& b1,
                      const Tensor<float>& b2, double lr);

  // Training-mode loss without an update.
  double decomposition_loss_on(const Tensor<float>& batch);
  double demorph_loss_on(const Tensor<float>& morph, const Tensor<float>& b1,
                         const Tensor<float>& b2);

  void on_epoch(EpochCallback cb) { callback_ = std::move(cb); }

  Networks<float>& networks() { return nets_; }
  const TrainConfig& config() const { return cfg_; }
  int epochs_done() const { return epochs_done_; }
  const std::vector<EpochRecord>& trace() const { return trace_; }

 private:
  template <typename StepFn>
  TrainReport fit(std::size_t n_samples, StepFn&& step, const std::filesystem::path& run_dir);
  void zero_grad();
  void clip_gradients();
  void apply_update(double lr);

  TrainConfig cfg_;
  Networks<float> nets_;
  ParameterList<float> params_;
  AdamOptimizer adam_;
  int epochs_done_ = 0;
  std::vector<EpochRecord> trace_;
  EpochCallback callback_;
};

TrainReport train_decomposition(const TrainConfig& cfg, std::span<const Image> images,
                                const std::filesystem::path& run_dir = {});
TrainReport train_demorph(const TrainConfig& cfg, const DatasetSplit& dataset,
                          const std::filesystem::path& run_dir = {});

// Batch sizes for n samples: ceil(n / batch) batches whose sizes differ by at most one.
std::vector<int> balanced_batches(std::size_t n, int batch_size);

}  // namespace demorph
