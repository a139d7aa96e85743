#pragma once

#include <winmix/checkpoint.hpp>
#include <winmix/dataset.hpp>
#include <winmix/model.hpp>

#include <json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace winmix {

/// AdamW with linear warmup then cosine decay to zero.
struct Hyperparams {
  double lr = 1e-3;
  double weight_decay = 0.05;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t batch = 16;
  std::size_t steps = 2000;
  std::size_t warmup = 100;
  double label_smoothing = 0.1;
  std::size_t checkpoint_every = 0; // steps; 0 disables periodic checkpoints

  void validate() const;
  double lr_at(std::size_t step) const;
};

void to_json(nlohmann::json &j, const Hyperparams &hp);
void from_json(const nlohmann::json &j, Hyperparams &hp);

struct EpochMetrics {
  std::size_t epoch = 0, step = 0; // step count at the end of the epoch
  double train_loss = 0, train_accuracy = 0;
  double val_loss = 0, val_accuracy = 0;
  bool operator==(const EpochMetrics &) const = default;
};

struct TrainState {
  Model<float> model;
  ParamTable<float> first_moment, second_moment;
  std::size_t step = 0;
  std::uint64_t seed = 0; // batch order of epoch e is a function of (seed, e)
  std::vector<EpochMetrics> history;
  // Running sums of the epoch in progress, so resuming mid-epoch reports
  // the same metrics as an uninterrupted run.
  double epoch_loss_sum = 0;
  std::size_t epoch_correct = 0, epoch_seen = 0;
};

struct TrainOptions {
  /// Written every hp.checkpoint_every steps, at the end, and (holding the
  /// last good state) when the loss turns non-finite.
  std::optional<std::string> checkpoint_path;
  /// Stop after this many steps of this call without finishing the run.
  std::optional<std::size_t> stop_after;
  std::function<void(const EpochMetrics &)> on_epoch;
};

/// Fresh state: parameters from build_model(cfg, seed), zero moments.
TrainState init_train_state(const ModelConfig &cfg, std::uint64_t seed);

/// Runs from state.step to hp.steps. Deterministic in (state, data, hp).
/// Throws NumericError when the loss becomes non-finite.
void train(TrainState &state, const DatasetSplit &data, const Hyperparams &hp, const TrainOptions &options = {});

struct EvalResult {
  double accuracy = 0, loss = 0;
  std::size_t samples = 0;
};

/// Top-1 accuracy and mean unsmoothed cross-entropy.
EvalResult evaluate(const Model<float> &model, const Dataset &data, std::size_t batch = 64);

Checkpoint to_checkpoint(const TrainState &state, const Hyperparams &hp);
/// Restores the state and returns the hyperparameters it was saved with.
TrainState from_checkpoint(const Checkpoint &ckpt, Hyperparams *hp = nullptr);

nlohmann::json to_json(const EpochMetrics &m);

} // namespace winmix
