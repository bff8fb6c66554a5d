#pragma once

// Episodic meta-training: batches of episodes, Adam with step decay,
// periodic validation with best-model tracking, and resumable state.

#include <cmath>
#include <functional>
#include <optional>
#include <string>

#include <json.hpp>

#include "hts/checkpoint.hpp"
#include "hts/config.hpp"
#include "hts/evaluator.hpp"
#include "hts/model.hpp"
#include "hts/optim.hpp"

namespace hts {

// Seed streams derived from the run seed (1-4 are used by model init).
inline constexpr std::uint64_t kTrainStream = 5;
inline constexpr std::uint64_t kValidationStream = 6;

inline double learning_rate_at(const TrainConfig& t, std::size_t episodes) {
  if (t.lr_decay_every == 0) return t.learning_rate;
  return t.learning_rate * std::pow(t.lr_decay_factor, static_cast<double>(episodes / t.lr_decay_every));
}

class Trainer {
 public:
  using LogSink = std::function<void(const nlohmann::ordered_json&)>;
  // Called after a validation pass; `improved` is true when `best()` changed.
  using ValidationHook = std::function<void(const Trainer&, bool improved)>;

  Trainer(RunConfig config, Datasets data)
      : config_(std::move(config)), data_(std::move(data)), model_(init_model(config_.model_config())) {
    state_.rng = Rng(derive_seed(config_.train.seed, kTrainStream));
    optimizer_.weight_decay = config_.train.weight_decay;
  }

  // Resume from a checkpoint; `best` is the best-so-far model if saved.
  Trainer(Checkpoint ck, Datasets data, std::optional<Model> best = std::nullopt)
      : config_(std::move(ck.config)), data_(std::move(data)), model_(std::move(ck.model)),
        state_(std::move(ck.state)), optimizer_(std::move(ck.optimizer)), best_(std::move(best)) {}

  void set_log_sink(LogSink sink) { log_ = std::move(sink); }
  void set_validation_hook(ValidationHook hook) { on_validation_ = std::move(hook); }

  // One optimizer step over episodes_per_batch episodes; returns the mean loss.
  double step() {
    const auto& t = config_.train;
    const std::size_t batch = t.episodes_per_batch;
    const double lr = learning_rate_at(t, state_.episodes);
    model_.zero_grad();
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const Episode ep = sample_episode(data_.train, t.episode, state_.rng);
      Tensor loss = episode_loss(model_, ep, Mode::train);
      const double value = loss.item();
      if (!std::isfinite(value))
        throw RuntimeFault("non-finite loss at iteration " + std::to_string(state_.iteration + 1) +
                           " (episode " + std::to_string(state_.episodes + b + 1) + ")");
      loss.backward(1.0 / static_cast<double>(batch));
      total += value;
    }
    for (auto& [group, store] : model_.groups()) optimizer_.step(group, *store, lr);
    ++state_.iteration;
    state_.episodes += batch;
    const double mean = total / static_cast<double>(batch);
    if (log_)
      log_({{"iteration", state_.iteration}, {"episodes", state_.episodes}, {"loss", mean}, {"lr", lr}});
    return mean;
  }

  // Runs until at least `episodes` training episodes have been consumed,
  // validating whenever a val_every boundary is crossed.
  void run(std::size_t episodes) {
    const auto& t = config_.train;
    while (state_.episodes < episodes) {
      const std::size_t before = state_.episodes;
      step();
      if (t.val_every > 0 && state_.episodes / t.val_every > before / t.val_every) validate_and_track();
    }
  }

  void run() { run(config_.train.episodes_total); }

  double validate() const {
    return evaluate(model_, data_.val, config_.train.episode, config_.train.val_episodes,
                    derive_seed(config_.train.seed, kValidationStream))
        .mean_accuracy;
  }

  const RunConfig& config() const { return config_; }
  const Datasets& data() const { return data_; }
  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const TrainerState& state() const { return state_; }
  const Adam& optimizer() const { return optimizer_; }
  // Best validated model, or the current model if none was validated yet.
  const Model& best() const { return best_ ? *best_ : model_; }
  bool has_best() const { return best_.has_value(); }

  std::string checkpoint_bytes() const { return serialize_checkpoint(config_, model_, state_, optimizer_); }
  void save(const std::filesystem::path& path) const {
    save_checkpoint(path, config_, model_, state_, optimizer_);
  }
  void save_best(const std::filesystem::path& path) const {
    save_checkpoint(path, config_, best(), state_, optimizer_);
  }

 private:
  void validate_and_track() {
    const double acc = validate();
    const bool improved = acc > state_.best_val;
    if (improved) {
      state_.best_val = acc;
      state_.best_episodes = state_.episodes;
      best_ = model_.clone();
    }
    if (log_)
      log_({{"iteration", state_.iteration}, {"episodes", state_.episodes}, {"val_accuracy", acc},
            {"best_val", state_.best_val}});
    if (on_validation_) on_validation_(*this, improved);
  }

  RunConfig config_;
  Datasets data_;
  Model model_;
  TrainerState state_;
  Adam optimizer_;
  std::optional<Model> best_;
  LogSink log_;
  ValidationHook on_validation_;
};

}  // namespace hts
