#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "clipose/encoders.hpp"
#include "clipose/manifest.hpp"

namespace clipose {

class Taxonomy;

struct TrainConfig {
  double learning_rate = 1e-5;
  double weight_decay = 1e-3;
  std::size_t epochs = 5;
  std::size_t batch_size = 6;
  std::uint64_t seed = 0;
  std::string prompt_preset = "person-doing";
  bool freeze_logit_scale = false;
  /// Also write the checkpoint after every epoch, not only the last.
  bool checkpoint_every_epoch = false;

  /// Throws ConfigError: rates must be finite and non-negative, epochs ≥ 1,
  /// batch size ≥ 2, preset known.
  void validate() const;
  nlohmann::json to_json() const;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double seconds = 0.0;
  std::optional<double> heldout_top1;
  std::vector<double> batch_losses;

  /// One log line. Timing is omitted when `with_timing` is false so that the
  /// remaining fields can be compared across runs.
  nlohmann::json to_json(bool with_timing = true) const;
};

/// Symmetric in-batch loss: the mean of row-wise and column-wise cross
/// entropy against the diagonal. Logits must be square (ContractError).
ag::Var contrastive_loss(const ag::Var& logits);
double contrastive_loss(const Tensor& logits);

struct BatchPlan {
  std::vector<std::vector<std::size_t>> batches;  // sample positions
  /// Pairs placed in a batch that already held their class.
  std::size_t duplicate_pairs = 0;
};

/// Class-distinct batching for one epoch. Each batch takes one sample from
/// each of up to `batch_size` classes, richest classes first (ties broken by
/// an epoch-seeded class order); samples within a class are drawn in a
/// seeded order. Batches are padded with repeats of a class only once
/// distinct classes run out. A trailing batch of one is merged into the one
/// before it. ContractError for batch size < 2.
BatchPlan make_batches(std::span<const std::size_t> labels, std::size_t batch_size, std::uint64_t seed,
                       std::size_t epoch);

struct TrainHooks {
  /// Called after every epoch; its value is logged as held-out top-1.
  std::function<double(const ClipModel&)> heldout_top1;
  /// Receives one JSON line per epoch.
  std::ostream* log = nullptr;
  std::filesystem::path checkpoint;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::size_t duplicate_pairs = 0;
  double seconds = 0.0;
};

/// Contrastive fine-tuning of both towers. Every class prompt must be fully
/// covered by the model vocabulary and the batch size may not exceed the
/// training set (ConfigError otherwise). A non-finite loss
/// aborts with a NumericError naming the epoch and batch.
TrainResult fine_tune(ClipModel& model, const Manifest& train, const Taxonomy& taxonomy, const TrainConfig& config,
                      const TrainHooks& hooks = {});

/// Same, on rasters already loaded in manifest order.
TrainResult fine_tune(ClipModel& model, std::span<const Tensor> images, std::span<const std::size_t> labels,
                      const Taxonomy& taxonomy, const TrainConfig& config, const TrainHooks& hooks = {});

/// Vocabulary over the class prompts of every preset, so a model can be
/// fine-tuned or queried with any of them.
Vocabulary prompt_vocabulary(const Taxonomy& taxonomy);

}  // namespace clipose
