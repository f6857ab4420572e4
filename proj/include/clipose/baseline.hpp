#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "clipose/encoders.hpp"
#include "clipose/evaluation.hpp"
#include "clipose/training.hpp"

namespace clipose {

namespace param_names {
inline constexpr const char* kHeadWeight = "head.weight";  // d × C
inline constexpr const char* kHeadBias = "head.bias";      // 1 × C
}  // namespace param_names

/// Image-only classifier: the same image tower, unnormalized, followed by a
/// linear head over the L3 classes.
class BaselineModel {
 public:
  static BaselineModel init(const EncoderConfig& config, std::size_t classes, std::uint64_t seed);
  static BaselineModel from_checkpoint(Checkpoint checkpoint);

  const EncoderConfig& config() const noexcept { return config_; }
  std::size_t classes() const noexcept { return classes_; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }

  nlohmann::json header() const;
  void save(const std::filesystem::path& path) const;

 private:
  BaselineModel(EncoderConfig config, std::size_t classes, ParamStore params)
      : config_(config), classes_(classes), params_(std::move(params)) {}
  EncoderConfig config_;
  std::size_t classes_;
  ParamStore params_;
};

ag::Var baseline_logits(const ag::ParamAccess& params, const Tensor& batch, const EncoderConfig& config);
/// N×C class scores.
Tensor baseline_scores(const BaselineModel& model, std::span<const Tensor> images);

/// Per-image path: load, resize, encode, head, argmax. ContractError below 30
/// samples.
LatencyStats measure_baseline_latency(const BaselineModel& model, const Manifest& test);

struct BaselineEpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double seconds = 0.0;
  std::optional<double> heldout_top1;

  nlohmann::json to_json(bool with_timing = true) const;
};

struct BaselineResult {
  std::vector<BaselineEpochLog> epochs;
  double seconds = 0.0;
  /// 1-based epoch of the best held-out accuracy (earliest on ties), or of
  /// the lowest training loss when no held-out set was given.
  std::size_t epochs_to_best = 0;
};

/// Cross-entropy training on L3 labels with the same optimizer and batching
/// as the contrastive run. `heldout` may be empty.
BaselineResult train_baseline(BaselineModel& model, std::span<const Tensor> images,
                              std::span<const std::size_t> labels, const TrainConfig& config,
                              std::span<const Tensor> heldout_images = {},
                              std::span<const std::size_t> heldout_labels = {}, std::ostream* log = nullptr);

struct ModelRun {
  std::string name;
  std::string train_digest;  // manifest digest of the training set
  std::string test_digest;   // manifest digest of the evaluation set
  std::string test_tensor_digest;
  std::vector<Prediction> predictions;
  double cost_minutes = 0.0;
  LatencyStats latency;
  std::size_t epochs_to_best = 0;
};

struct ComparisonRow {
  std::string name;
  double top1 = 0.0;
  double cost_minutes = 0.0;
  double latency_ms = 0.0;
  std::size_t epochs_to_best = 0;
};

struct ComparisonReport {
  std::vector<ComparisonRow> rows;
  std::string train_digest;
  std::string test_digest;
  std::string test_tensor_digest;

  nlohmann::json to_json() const;
  std::string table() const;
};

/// ContractError unless every run shares the training and test digests.
ComparisonReport compare_models(std::span<const ModelRun> runs, const Taxonomy& taxonomy);

/// SHA-256 over a list of preprocessed images.
std::string images_digest(std::span<const Tensor> images);

}  // namespace clipose
