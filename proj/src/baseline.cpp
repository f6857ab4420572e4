#include "clipose/baseline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "clipose/digest.hpp"
#include "clipose/errors.hpp"
#include "clipose/raster.hpp"
#include "clipose/rng.hpp"

namespace clipose {

namespace pn = param_names;

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::size_t kScoreChunk = 128;

}  // namespace

BaselineModel BaselineModel::init(const EncoderConfig& config, std::size_t classes, std::uint64_t seed) {
  config.validate();
  if (classes < 2) throw ConfigError("baseline: need at least two classes");
  Rng rng(seed);
  ParamStore store;
  add_image_tower_params(store, config, rng);
  store.add(pn::kHeadWeight, uniform_init({config.embed_dim, classes}, config.embed_dim, rng));
  store.add(pn::kHeadBias, uniform_init({1, classes}, config.embed_dim, rng));
  return BaselineModel(config, classes, std::move(store));
}

BaselineModel BaselineModel::from_checkpoint(Checkpoint checkpoint) {
  const auto& h = checkpoint.header;
  if (!h.contains("model") || h.at("model") != "baseline") {
    throw ConfigError("checkpoint does not hold a baseline classifier");
  }
  const EncoderConfig config = EncoderConfig::from_json(h.at("encoder"));
  const auto classes = h.at("classes").get<std::size_t>();
  for (const char* name : {pn::kPatchWeight, pn::kPatchBias, pn::kImageOut, pn::kHeadWeight, pn::kHeadBias}) {
    if (!checkpoint.params.contains(name)) throw ConfigError(std::string("checkpoint lacks ") + name);
  }
  return BaselineModel(config, classes, std::move(checkpoint.params));
}

nlohmann::json BaselineModel::header() const {
  return {{"model", "baseline"}, {"encoder", config_.to_json()}, {"classes", classes_}};
}

void BaselineModel::save(const std::filesystem::path& path) const { save_checkpoint(path, params_, header()); }

ag::Var baseline_logits(const ag::ParamAccess& params, const Tensor& batch, const EncoderConfig& config) {
  return ag::add_row_bias(ag::matmul(image_tower(params, batch, config), params(pn::kHeadWeight)),
                          params(pn::kHeadBias));
}

Tensor baseline_scores(const BaselineModel& model, std::span<const Tensor> images) {
  if (images.empty()) throw ContractError("baseline_scores: no images");
  const ag::ParamAccess params(model.params());
  std::vector<double> values;
  values.reserve(images.size() * model.classes());
  for (std::size_t start = 0; start < images.size(); start += kScoreChunk) {
    const auto chunk = images.subspan(start, std::min(kScoreChunk, images.size() - start));
    const Tensor logits = baseline_logits(params, stack_images(chunk), model.config()).value();
    values.insert(values.end(), logits.values().begin(), logits.values().end());
  }
  return Tensor({images.size(), model.classes()}, std::move(values));
}

LatencyStats measure_baseline_latency(const BaselineModel& model, const Manifest& test) {
  if (test.size() < kMinLatencySamples) {
    throw ContractError("latency: need at least " + std::to_string(kMinLatencySamples) + " samples, got " +
                        std::to_string(test.size()));
  }
  const ag::ParamAccess params(model.params());
  std::vector<double> times;
  std::size_t sink = 0;
  for (const auto& sample : test.samples) {
    const auto start = Clock::now();
    const Tensor image = load_raster(sample.source, model.config().image_side, test.base_dir);
    const Tensor logits = baseline_logits(params, stack_images(std::span(&image, 1)), model.config()).value();
    const auto row = logits.row(0);
    sink += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    times.push_back(std::chrono::duration<double, std::milli>(Clock::now() - start).count());
  }
  volatile std::size_t keep = sink;
  (void)keep;
  return summarize_latency(std::move(times));
}

nlohmann::json BaselineEpochLog::to_json(bool with_timing) const {
  nlohmann::json j = {{"epoch", epoch}, {"mean_loss", mean_loss}};
  j["heldout_top1"] = heldout_top1 ? nlohmann::json(*heldout_top1) : nlohmann::json(nullptr);
  if (with_timing) j["seconds"] = seconds;
  return j;
}

BaselineResult train_baseline(BaselineModel& model, std::span<const Tensor> images,
                              std::span<const std::size_t> labels, const TrainConfig& config,
                              std::span<const Tensor> heldout_images, std::span<const std::size_t> heldout_labels,
                              std::ostream* log) {
  config.validate();
  if (images.size() != labels.size() || heldout_images.size() != heldout_labels.size()) {
    throw ContractError("train_baseline: images and labels differ in count");
  }
  if (images.size() < 2) throw ContractError("train_baseline: need at least two training samples");
  if (config.batch_size > images.size()) {
    throw ConfigError("batch size " + std::to_string(config.batch_size) + " exceeds the " +
                      std::to_string(images.size()) + " training samples");
  }
  for (std::size_t l : labels) {
    if (l >= model.classes()) throw ContractError("train_baseline: label " + std::to_string(l) + " out of range");
  }
  const auto start = Clock::now();
  BaselineResult result;
  double best = -1.0;
  double lowest_loss = INFINITY;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    const BatchPlan plan = make_batches(labels, config.batch_size, config.seed, epoch);
    std::vector<double> losses;
    for (std::size_t b = 0; b < plan.batches.size(); ++b) {
      std::vector<Tensor> batch_images;
      std::vector<std::size_t> targets;
      for (std::size_t i : plan.batches[b]) {
        batch_images.push_back(images[i]);
        targets.push_back(labels[i]);
      }
      try {
        const ag::ParamAccess params(model.params());
        ag::Var loss = ag::cross_entropy_mean(baseline_logits(params, stack_images(batch_images), model.config()),
                                              std::move(targets));
        const double value = loss.value().item();
        if (!std::isfinite(value)) throw NumericError("loss is " + std::to_string(value));
        ag::backward(loss);
        optimizer_step(model.params(), config.learning_rate, config.weight_decay);
        losses.push_back(value);
      } catch (const NumericError& e) {
        throw NumericError("baseline diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b + 1) + ": " + e.what());
      }
    }
    BaselineEpochLog entry;
    entry.epoch = epoch;
    entry.mean_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
    if (!heldout_images.empty()) {
      const Tensor scores = baseline_scores(model, heldout_images);
      std::size_t hits = 0;
      for (std::size_t r = 0; r < scores.rows(); ++r) {
        const auto row = scores.row(r);
        hits += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == heldout_labels[r];
      }
      entry.heldout_top1 = static_cast<double>(hits) / static_cast<double>(scores.rows());
      if (*entry.heldout_top1 > best) {
        best = *entry.heldout_top1;
        result.epochs_to_best = epoch;
      }
    } else if (entry.mean_loss < lowest_loss) {
      lowest_loss = entry.mean_loss;
      result.epochs_to_best = epoch;
    }
    entry.seconds = std::chrono::duration<double>(Clock::now() - epoch_start).count();
    if (log) *log << entry.to_json().dump() << '\n' << std::flush;
    result.epochs.push_back(entry);
  }
  result.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return result;
}

nlohmann::json ComparisonReport::to_json() const {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& r : rows) {
    models.push_back({{"name", r.name},
                      {"top1_accuracy", r.top1},
                      {"fine_tuning_cost_minutes", r.cost_minutes},
                      {"inference_latency_ms", r.latency_ms},
                      {"epochs_to_best", r.epochs_to_best}});
  }
  return {{"models", models},
          {"train_manifest_digest", train_digest},
          {"test_manifest_digest", test_digest},
          {"test_tensor_digest", test_tensor_digest}};
}

std::string ComparisonReport::table() const {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %10s %14s %14s %15s\n", "model", "top-1", "cost (min)", "latency (ms)",
                "epochs to best");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-12s %9.1f%% %14.3f %14.3f %15zu\n", r.name.c_str(), 100.0 * r.top1,
                  r.cost_minutes, r.latency_ms, r.epochs_to_best);
    out << line;
  }
  out << "test manifest " << test_digest << "\n";
  return out.str();
}

ComparisonReport compare_models(std::span<const ModelRun> runs, const Taxonomy& taxonomy) {
  if (runs.empty()) throw ContractError("compare_models: nothing to compare");
  ComparisonReport report;
  report.train_digest = runs.front().train_digest;
  report.test_digest = runs.front().test_digest;
  report.test_tensor_digest = runs.front().test_tensor_digest;
  for (const auto& run : runs) {
    if (run.train_digest != report.train_digest) {
      throw ContractError("compare_models: '" + run.name + "' was trained on a different manifest");
    }
    if (run.test_digest != report.test_digest || run.test_tensor_digest != report.test_tensor_digest) {
      throw ContractError("compare_models: '" + run.name + "' was evaluated on a different test set");
    }
    report.rows.push_back({run.name, top_k_accuracy(run.predictions, taxonomy, Level::kL3, 1), run.cost_minutes,
                           run.latency.mean_ms, run.epochs_to_best});
  }
  return report;
}

std::string images_digest(std::span<const Tensor> images) {
  Digest d;
  for (const auto& img : images) d.update(img);
  return d.finish();
}

}  // namespace clipose
