#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "clipose/encoders.hpp"
#include "clipose/manifest.hpp"
#include "clipose/taxonomy.hpp"

namespace clipose {

struct Prediction {
  std::string id;
  std::size_t truth = 0;                             // L3 index
  std::vector<std::pair<std::size_t, double>> ranked;  // (L3 index, score), best first

  std::size_t top1() const { return ranked.front().first; }
};

/// Ranks each row of an N×C score matrix. Equal scores keep ascending class
/// order.
std::vector<Prediction> rank_scores(const Tensor& scores, std::span<const std::string> ids,
                                    std::span<const std::size_t> truths);

/// N×C similarity logits of images against class prompts, encoded in chunks.
Tensor clip_scores(const ClipModel& model, std::span<const Tensor> images, std::span<const std::string> prompts);

/// Ranks every class prompt for every test image. ContractError unless there
/// is exactly one prompt per taxonomy class.
std::vector<Prediction> zero_shot_classify(const ClipModel& model, const Manifest& test,
                                           std::span<const std::string> prompts, const Taxonomy& taxonomy);
std::vector<Prediction> zero_shot_classify(const ClipModel& model, std::span<const Tensor> images,
                                           const Manifest& test, std::span<const std::string> prompts,
                                           const Taxonomy& taxonomy);

/// Fraction of predictions whose true class, rolled up to `level`, is among
/// the roll-ups of the top-k L3 predictions. ContractError for k = 0 or k
/// above the class count.
double top_k_accuracy(std::span<const Prediction> predictions, const Taxonomy& taxonomy, Level level,
                      std::size_t k);

struct WeightedPrf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

/// Support-weighted per-class precision, recall and F1 over rank-1
/// predictions. A class that is never predicted has precision 0.
WeightedPrf weighted_prf(std::span<const Prediction> predictions);

struct LevelAccuracy {
  double top1 = 0.0;
  double top5 = 0.0;
};

struct MetricsReport {
  LevelAccuracy l1, l2, l3;
  std::size_t top_k = 5;  // min(5, class count)
  WeightedPrf weighted;

  const LevelAccuracy& at(Level level) const;
  nlohmann::json to_json() const;
};

/// All metrics of a prediction set. Checks the hierarchy and top-k orderings
/// and throws ContractError if either is violated.
MetricsReport compute_metrics(std::span<const Prediction> predictions, const Taxonomy& taxonomy);

struct ConfusionMatrix {
  std::string superclass;
  std::vector<std::string> classes;  // rows; columns are these plus "outside"
  Tensor counts;                     // rows × (rows + 1)
  Tensor normalized;                 // each nonzero column sums to 1
};

/// One matrix per L1 superclass: rows are the true classes inside it,
/// columns the predicted classes inside it plus an aggregated outside column.
std::vector<ConfusionMatrix> confusion_by_superclass(std::span<const Prediction> predictions,
                                                     const Taxonomy& taxonomy);
void write_confusion_csv(const std::filesystem::path& counts_path, const std::filesystem::path& normalized_path,
                         const ConfusionMatrix& matrix);

/// Trains fresh parameters on `train` and evaluates on `test`.
using TrainEval = std::function<MetricsReport(const Manifest& train, const Manifest& test, std::uint64_t seed)>;

struct RepeatedSplitStats {
  std::size_t repeats = 0;
  bool population_std = true;
  std::vector<MetricsReport> runs;
  LevelAccuracy mean_l1, mean_l2, mean_l3;
  LevelAccuracy std_l1, std_l2, std_l3;

  nlohmann::json to_json() const;
};

/// Repeat r splits the full manifest with seed `split.seed + r`, then calls
/// `pipeline` with the same seed. Failures are rethrown naming the repeat.
RepeatedSplitStats repeated_split_eval(const Manifest& manifest, const SplitSpec& split, std::size_t repeats,
                                       const TrainEval& pipeline, bool population_std = true);

struct FrugalityRow {
  std::size_t cap = 0;
  std::size_t train_count = 0;
  MetricsReport metrics;
  std::string test_digest;
  /// The cap was not smaller than the smallest training class.
  bool identity_cap = false;
};

struct FrugalitySweep {
  std::vector<FrugalityRow> rows;
  std::string test_digest;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
  std::string table() const;
};

/// Splits once, then for each cap (strictly decreasing, else ConfigError)
/// subsamples the training half and runs the pipeline against the same test
/// half.
FrugalitySweep frugality_sweep(const Manifest& manifest, const SplitSpec& split, std::span<const std::size_t> caps,
                               const TrainEval& pipeline);

inline constexpr std::size_t kMaxSimilaritySamples = 64;

/// N×M cosine similarities between images and prompts (no temperature).
/// ContractError above 64 images.
Tensor similarity_matrix(const ClipModel& model, std::span<const Tensor> images, std::span<const std::string> prompts);
/// Writes `<stem>.csv` and a `<stem>.pgm` heatmap mapping [-1, 1] to [0, 1],
/// drawn as 8x8-pixel cells.
void export_similarity_matrix(const Tensor& cosine, const std::filesystem::path& stem);
Tensor read_matrix_csv(const std::filesystem::path& path);
/// Share of rows whose diagonal entry is the strict row maximum.
double diagonal_dominance(const Tensor& matrix);

struct LatencyStats {
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
  std::size_t count = 0;

  nlohmann::json to_json() const;
};

/// Summary of per-sample timings; percentiles use the nearest rank.
LatencyStats summarize_latency(std::vector<double> samples_ms);

inline constexpr std::size_t kMinLatencySamples = 30;

/// Times the whole per-image path: load and resize the raster, tokenize and
/// encode the class prompts, encode the image, compute logits, take the
/// argmax. ContractError below 30 samples.
LatencyStats measure_inference_latency(const ClipModel& model, const Manifest& test,
                                       std::span<const std::string> prompts);

}  // namespace clipose
