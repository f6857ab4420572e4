#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "clipose/baseline.hpp"
#include "clipose/digest.hpp"
#include "clipose/encoders.hpp"
#include "clipose/errors.hpp"
#include "clipose/evaluation.hpp"
#include "clipose/manifest.hpp"
#include "clipose/prompts.hpp"
#include "clipose/raster.hpp"
#include "clipose/rng.hpp"
#include "clipose/synthetic.hpp"
#include "clipose/taxonomy.hpp"
#include "clipose/training.hpp"

namespace clipose::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

std::string shipped_taxonomy() { return std::string(CLIPOSE_DATA_DIR) + "/yoga82_taxonomy.csv"; }

struct Options {
  std::string command;
  std::uint64_t seed = 7;
  std::string out;
  std::string taxonomy = shipped_taxonomy();
  std::string manifest;
  std::string test_manifest;
  std::string checkpoint;

  // Synthetic data, used when no manifest is given.
  std::size_t classes = 6;
  std::size_t per_class = 0;  // 0: 40, or 100 for sweep-frugality
  double noise = 0.25;

  EncoderConfig encoder;

  // The library default of 1e-5 is a pretrained-model setting; the toy model
  // starts from random weights and needs a larger step.
  double lr = 1e-4;
  double wd = 1e-3;
  std::size_t epochs = 5;
  std::size_t batch = 0;  // 0: one slot per class
  std::string prompt = std::string(kDefaultPromptPreset);
  bool freeze_logit_scale = false;
  bool checkpoint_every_epoch = false;

  double train_fraction = 0.8;
  std::size_t cap = 0;

  std::size_t repeats = 10;
  std::vector<std::size_t> caps = {43, 20, 6};

  std::size_t per_class_resolved() const {
    if (per_class > 0) return per_class;
    return command == "sweep-frugality" ? 100 : 40;
  }

  json to_json() const {
    return {{"subcommand", command},
            {"seed", seed},
            {"out", out},
            {"taxonomy", taxonomy},
            {"manifest", manifest},
            {"test_manifest", test_manifest},
            {"checkpoint", checkpoint},
            {"classes", classes},
            {"per_class", per_class_resolved()},
            {"noise", noise},
            {"encoder", encoder.to_json()},
            {"lr", lr},
            {"wd", wd},
            {"epochs", epochs},
            {"batch", batch},
            {"prompt", prompt},
            {"freeze_logit_scale", freeze_logit_scale},
            {"checkpoint_every_epoch", checkpoint_every_epoch},
            {"train_fraction", train_fraction},
            {"cap", cap},
            {"repeats", repeats},
            {"caps", caps}};
  }
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out.flush()) throw IoError("cannot write " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

/// Output directory plus the bookkeeping that ends up in run.json.
class RunDir {
 public:
  RunDir(fs::path root, const Options& options) : root_(std::move(root)), options_(options) {
    fs::create_directories(reports());
    fs::create_directories(ckpt());
  }

  fs::path reports() const { return root_ / "reports"; }
  fs::path ckpt() const { return root_ / "ckpt"; }
  fs::path data() const {
    fs::create_directories(root_ / "data");
    return root_ / "data";
  }

  /// Registers a finished artifact. Timed artifacts carry wall-clock numbers
  /// and are listed without a digest so the digest section stays comparable.
  void produced(const fs::path& path, bool timed = false) {
    (timed ? timed_ : outputs_).push_back(fs::relative(path, root_).generic_string());
  }

  json seeds = json::object();
  json inputs = json::object();
  json timings = json::object();

  void write_manifest() const {
    json digests = json::object();
    for (const auto& rel : outputs_) digests[rel] = file_sha256(root_ / rel);
    const json run = {{"config", options_.to_json()},
                      {"seeds", seeds},
                      {"digests", {{"inputs", inputs}, {"outputs", digests}}},
                      {"timed_outputs", timed_},
                      {"timings", timings}};
    write_json(root_ / "run.json", run);
  }

 private:
  fs::path root_;
  const Options& options_;
  std::vector<std::string> outputs_;
  std::vector<std::string> timed_;
};

// ---------------------------------------------------------------------------
// Data

struct Dataset {
  Taxonomy taxonomy;
  Manifest manifest;
  bool synthetic = false;
};

Taxonomy class_set(const Options& o, const Taxonomy& loaded) {
  if (o.classes < 2) throw ConfigError("--classes must be at least 2");
  if (o.classes > loaded.size()) {
    throw ConfigError("--classes " + std::to_string(o.classes) + " exceeds the " + std::to_string(loaded.size()) +
                      " classes of " + o.taxonomy);
  }
  if (o.classes == loaded.size()) return loaded;
  const auto six = six_pose_subset_names();
  if (o.classes == six.size() &&
      std::all_of(six.begin(), six.end(), [&](const std::string& n) { return loaded.find(n).has_value(); })) {
    return loaded.subset(six);
  }
  std::vector<std::string> names;
  for (std::size_t i = 0; i < o.classes; ++i) names.push_back(loaded.cls(i).name);
  return loaded.subset(names);
}

Dataset load_dataset(const Options& o, RunDir& run) {
  const Taxonomy loaded = load_taxonomy(o.taxonomy);
  run.inputs["taxonomy"] = file_sha256(o.taxonomy);
  Dataset d;
  if (!o.manifest.empty()) {
    d.taxonomy = loaded;
    d.manifest = load_manifest(o.manifest);
    validate_manifest(d.manifest, d.taxonomy.size());
    run.inputs["manifest"] = manifest_digest(d.manifest);
    return d;
  }
  d.synthetic = true;
  d.taxonomy = class_set(o, loaded);
  SyntheticOptions so;
  so.images_per_class = o.per_class_resolved();
  so.seed = derive_seed(o.seed, "generation");
  so.noise = o.noise;
  so.side = o.encoder.image_side;
  run.seeds["generation"] = so.seed;
  // Archetypes follow the shipped taxonomy so a class always draws the same
  // figure, whichever taxonomy file names it.
  const auto archetypes = archetypes_for(d.taxonomy, load_taxonomy(shipped_taxonomy()));
  d.manifest = generate_synthetic_dataset(archetypes, so).manifest;
  run.inputs["manifest"] = manifest_digest(d.manifest);
  return d;
}

SplitSpec split_spec(const Options& o, RunDir& run) {
  SplitSpec s;
  s.train_fraction = o.train_fraction;
  s.seed = derive_seed(o.seed, "split");
  if (o.cap > 0) s.per_class_cap = o.cap;
  s.validate();
  run.seeds["split"] = s.seed;
  return s;
}

std::vector<std::string> class_names(const Taxonomy& t) {
  std::vector<std::string> names;
  for (const auto& c : t.classes()) names.push_back(c.name);
  return names;
}

SplitResult train_test(const Options& o, const Dataset& d, RunDir& run) {
  SplitResult parts;
  if (!o.test_manifest.empty()) {
    parts.train = d.manifest;
    parts.test = load_manifest(o.test_manifest);
    validate_manifest(parts.test, d.taxonomy.size());
  } else {
    const auto names = class_names(d.taxonomy);
    parts = stratified_split(d.manifest, split_spec(o, run), names);
  }
  run.inputs["train_manifest"] = manifest_digest(parts.train);
  run.inputs["test_manifest"] = manifest_digest(parts.test);
  return parts;
}

/// Rasters are rendered or read once per run and shared by every repeat.
class RasterCache {
 public:
  explicit RasterCache(std::size_t side) : side_(side) {}

  std::vector<Tensor> load(const Manifest& m) {
    std::vector<Tensor> out;
    out.reserve(m.size());
    for (const auto& s : m.samples) {
      const std::string key = is_synthetic_source(s.source) ? s.source : (m.base_dir / s.source).string();
      auto it = cache_.find(key);
      if (it == cache_.end()) it = cache_.emplace(key, load_raster(s.source, side_, m.base_dir)).first;
      out.push_back(it->second);
    }
    return out;
  }

 private:
  std::size_t side_;
  std::map<std::string, Tensor> cache_;
};

/// Relative raster paths are made absolute so that a manifest written into the
/// output directory still resolves.
Manifest with_absolute_sources(Manifest m) {
  for (auto& s : m.samples) {
    if (!is_synthetic_source(s.source) && fs::path(s.source).is_relative()) {
      s.source = fs::absolute(m.base_dir / s.source).lexically_normal().string();
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Models and evaluation

TrainConfig train_config(const Options& o, const Taxonomy& t, std::uint64_t seed) {
  TrainConfig c;
  c.learning_rate = o.lr;
  c.weight_decay = o.wd;
  c.epochs = o.epochs;
  c.batch_size = o.batch > 0 ? o.batch : t.size();
  c.seed = seed;
  c.prompt_preset = o.prompt;
  c.freeze_logit_scale = o.freeze_logit_scale;
  c.checkpoint_every_epoch = o.checkpoint_every_epoch;
  c.validate();
  return c;
}

ClipModel fresh_model(const Options& o, const Taxonomy& t, std::uint64_t seed) {
  return ClipModel::init(o.encoder, prompt_vocabulary(t), derive_seed(seed, "init"));
}

fs::path vocab_path(const fs::path& checkpoint) { return checkpoint.parent_path() / "vocab.txt"; }

ClipModel load_model(const fs::path& checkpoint, RunDir& run) {
  run.inputs["checkpoint"] = file_sha256(checkpoint);
  return ClipModel::from_checkpoint(load_checkpoint(checkpoint), load_vocabulary(vocab_path(checkpoint)));
}

void save_model(const ClipModel& model, const Taxonomy& t, RunDir& run, bool already_saved = false) {
  const fs::path ckpt = run.ckpt() / "model.ckpt";
  if (!already_saved) model.save(ckpt);
  save_vocabulary(vocab_path(ckpt), model.vocab());
  save_taxonomy(run.ckpt() / "taxonomy.csv", t);
  for (const char* name : {"model.ckpt", "vocab.txt", "taxonomy.csv"}) run.produced(run.ckpt() / name);
}

std::vector<std::string> prompts_for(const Options& o, const Taxonomy& t) {
  return class_prompt_texts(t, prompt_preset(o.prompt));
}

std::vector<Prediction> predict(const ClipModel& model, std::span<const Tensor> images, const Manifest& test,
                                const Options& o, const Taxonomy& t) {
  return zero_shot_classify(model, images, test, prompts_for(o, t), t);
}

void write_predictions(const fs::path& path, std::span<const Prediction> preds, const Taxonomy& t) {
  std::string text = "id\ttruth\tpredicted\tscore\n";
  for (const auto& p : preds) {
    text += p.id + "\t" + t.cls(p.truth).name + "\t" + t.cls(p.top1()).name + "\t" +
            json(p.ranked.front().second).dump() + "\n";
  }
  write_text(path, text);
}

std::size_t epochs_to_best(const std::vector<EpochLog>& epochs) {
  std::size_t best_epoch = 0;
  double best = -1.0;
  for (const auto& e : epochs) {
    if (e.heldout_top1 && *e.heldout_top1 > best) {
      best = *e.heldout_top1;
      best_epoch = e.epoch;
    }
  }
  return best_epoch;
}

/// Fresh model, fine-tuned on `train`, scored on `test`; the unit of work of
/// the repeated-split and frugality protocols.
TrainEval train_eval_pipeline(const Options& o, const Taxonomy& t, RasterCache& cache) {
  return [&o, &t, &cache](const Manifest& train, const Manifest& test, std::uint64_t seed) {
    ClipModel model = fresh_model(o, t, seed);
    const auto train_images = cache.load(train);
    const auto labels = train.labels();
    fine_tune(model, train_images, labels, t, train_config(o, t, seed));
    const auto test_images = cache.load(test);
    return compute_metrics(predict(model, test_images, test, o, t), t);
  };
}

// ---------------------------------------------------------------------------
// Subcommands

void cmd_gen_data(const Options& o, RunDir& run) {
  if (!o.manifest.empty()) throw ConfigError("gen-data generates a synthetic set; drop --manifest");
  const Dataset d = load_dataset(o, run);
  const fs::path manifest_path = run.data() / "manifest.tsv";
  const fs::path taxonomy_path = run.data() / "taxonomy.csv";
  save_manifest(manifest_path, d.manifest);
  save_taxonomy(taxonomy_path, d.taxonomy);
  RasterCache cache(o.encoder.image_side);
  const auto rasters = cache.load(d.manifest);
  const json report = {{"classes", class_names(d.taxonomy)},
                       {"per_class", count_per_class(d.manifest, d.taxonomy.size())},
                       {"manifest_digest", manifest_digest(d.manifest)},
                       {"raster_digest", images_digest(rasters)}};
  write_json(run.reports() / "dataset.json", report);
  for (const auto& p : {manifest_path, taxonomy_path, run.reports() / "dataset.json"}) run.produced(p);
  std::cout << d.manifest.size() << " samples, manifest " << manifest_path.string() << "\n";
}

void cmd_split(const Options& o, RunDir& run) {
  const Dataset d = load_dataset(o, run);
  const SplitResult parts = train_test(o, d, run);
  const fs::path train_path = run.data() / "train.tsv";
  const fs::path test_path = run.data() / "test.tsv";
  save_manifest(train_path, with_absolute_sources(parts.train));
  save_manifest(test_path, with_absolute_sources(parts.test));
  const json report = {{"train", {{"count", parts.train.size()},
                                  {"per_class", count_per_class(parts.train, d.taxonomy.size())},
                                  {"digest", manifest_digest(parts.train)}}},
                       {"test", {{"count", parts.test.size()},
                                 {"per_class", count_per_class(parts.test, d.taxonomy.size())},
                                 {"digest", manifest_digest(parts.test)}}}};
  write_json(run.reports() / "split.json", report);
  for (const auto& p : {train_path, test_path, run.reports() / "split.json"}) run.produced(p);
  std::cout << "train " << parts.train.size() << ", test " << parts.test.size() << "\n";
}

void cmd_train(const Options& o, RunDir& run) {
  const Dataset d = load_dataset(o, run);
  const SplitResult parts = train_test(o, d, run);
  RasterCache cache(o.encoder.image_side);
  const auto train_images = cache.load(parts.train);
  const auto test_images = cache.load(parts.test);
  const auto labels = parts.train.labels();

  ClipModel model = fresh_model(o, d.taxonomy, o.seed);
  run.seeds["init"] = derive_seed(o.seed, "init");
  run.seeds["batching"] = derive_seed(o.seed, "batching");
  const MetricsReport before = compute_metrics(predict(model, test_images, parts.test, o, d.taxonomy), d.taxonomy);

  const fs::path log_path = run.reports() / "train_log.jsonl";
  std::ofstream log(log_path);
  TrainHooks hooks;
  hooks.heldout_top1 = [&](const ClipModel& m) {
    return top_k_accuracy(predict(m, test_images, parts.test, o, d.taxonomy), d.taxonomy, Level::kL3, 1);
  };
  hooks.checkpoint = run.ckpt() / "model.ckpt";
  hooks.log = &std::cout;
  const TrainResult result = fine_tune(model, train_images, labels, d.taxonomy, train_config(o, d.taxonomy, o.seed),
                                       hooks);
  json epoch_seconds = json::array();
  for (const auto& e : result.epochs) {
    log << e.to_json(false).dump() << '\n';
    epoch_seconds.push_back(e.seconds);
  }
  log.close();

  const auto preds = predict(model, test_images, parts.test, o, d.taxonomy);
  const MetricsReport after = compute_metrics(preds, d.taxonomy);
  json epochs = json::array();
  for (const auto& e : result.epochs) epochs.push_back(e.to_json(false));
  const json metrics = {{"zero_shot", before.to_json()},
                        {"fine_tuned", after.to_json()},
                        {"train_count", parts.train.size()},
                        {"test_count", parts.test.size()},
                        {"learning_rate", o.lr},
                        {"duplicate_pairs", result.duplicate_pairs},
                        {"epochs", epochs}};
  write_json(run.reports() / "metrics.json", metrics);
  write_predictions(run.reports() / "predictions.tsv", preds, d.taxonomy);
  save_model(model, d.taxonomy, run, true);
  for (const auto& p : {log_path, run.reports() / "metrics.json", run.reports() / "predictions.tsv"}) {
    run.produced(p);
  }
  run.timings["train_seconds"] = result.seconds;
  run.timings["epoch_seconds"] = epoch_seconds;
  std::cout << "zero-shot top-1 " << before.l3.top1 << ", fine-tuned top-1 " << after.l3.top1 << "\n";
}

void cmd_zero_shot(const Options& o, RunDir& run) {
  const Dataset d = load_dataset(o, run);
  const SplitResult parts = train_test(o, d, run);
  RasterCache cache(o.encoder.image_side);
  const ClipModel model = o.checkpoint.empty() ? fresh_model(o, d.taxonomy, o.seed) : load_model(o.checkpoint, run);
  if (o.checkpoint.empty()) run.seeds["init"] = derive_seed(o.seed, "init");
  const auto preds = predict(model, cache.load(parts.test), parts.test, o, d.taxonomy);
  const json report = {{"model", o.checkpoint.empty() ? "random-init" : "checkpoint"},
                       {"prompts", prompts_for(o, d.taxonomy)},
                       {"metrics", compute_metrics(preds, d.taxonomy).to_json()}};
  write_json(run.reports() / "zero_shot.json", report);
  write_predictions(run.reports() / "zero_shot_predictions.tsv", preds, d.taxonomy);
  run.produced(run.reports() / "zero_shot.json");
  run.produced(run.reports() / "zero_shot_predictions.tsv");
  std::cout << "zero-shot top-1 " << report["metrics"]["L3"]["top1"] << "\n";
}

void cmd_eval(const Options& o, RunDir& run) {
  const fs::path ckpt = o.checkpoint.empty() ? run.ckpt() / "model.ckpt" : fs::path(o.checkpoint);
  if (!fs::exists(ckpt)) throw ConfigError("no checkpoint at " + ckpt.string() + "; run train first or pass --checkpoint");
  const Dataset d = load_dataset(o, run);
  const SplitResult parts = train_test(o, d, run);
  RasterCache cache(o.encoder.image_side);
  const ClipModel model = load_model(ckpt, run);
  const auto preds = predict(model, cache.load(parts.test), parts.test, o, d.taxonomy);
  const MetricsReport metrics = compute_metrics(preds, d.taxonomy);
  write_json(run.reports() / "eval_metrics.json", metrics.to_json());
  write_predictions(run.reports() / "eval_predictions.tsv", preds, d.taxonomy);
  run.produced(run.reports() / "eval_metrics.json");
  run.produced(run.reports() / "eval_predictions.tsv");

  const fs::path dir = run.reports() / "confusion";
  fs::create_directories(dir);
  for (const auto& m : confusion_by_superclass(preds, d.taxonomy)) {
    const fs::path counts = dir / (m.superclass + "_counts.csv");
    const fs::path normalized = dir / (m.superclass + "_normalized.csv");
    write_confusion_csv(counts, normalized, m);
    run.produced(counts);
    run.produced(normalized);
  }
  std::cout << "top-1 L3 " << metrics.l3.top1 << ", L2 " << metrics.l2.top1 << ", L1 " << metrics.l1.top1 << "\n";
}

void cmd_sweep_frugality(const Options& o, RunDir& run) {
  const Dataset d = load_dataset(o, run);
  RasterCache cache(o.encoder.image_side);
  const SplitSpec split = split_spec(o, run);
  const auto start = Clock::now();
  const FrugalitySweep sweep = frugality_sweep(d.manifest, split, o.caps, train_eval_pipeline(o, d.taxonomy, cache));
  run.timings["sweep_seconds"] = seconds_since(start);
  write_json(run.reports() / "frugality.json", sweep.to_json());
  write_text(run.reports() / "frugality.txt", sweep.table());
  run.produced(run.reports() / "frugality.json");
  run.produced(run.reports() / "frugality.txt");
  for (const auto& w : sweep.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << sweep.table();
}

void cmd_repeat_splits(const Options& o, RunDir& run) {
  const Dataset d = load_dataset(o, run);
  RasterCache cache(o.encoder.image_side);
  const SplitSpec split = split_spec(o, run);
  const auto start = Clock::now();
  const RepeatedSplitStats stats =
      repeated_split_eval(d.manifest, split, o.repeats, train_eval_pipeline(o, d.taxonomy, cache));
  run.timings["repeats_seconds"] = seconds_since(start);
  write_json(run.reports() / "repeated_splits.json", stats.to_json());
  run.produced(run.reports() / "repeated_splits.json");
  std::cout << o.repeats << " repeats, top-1 L3 mean " << stats.mean_l3.top1 << ", std " << stats.std_l3.top1 << "\n";
}

void cmd_compare_baseline(const Options& o, RunDir& run) {
  const Dataset d = load_dataset(o, run);
  const SplitResult parts = train_test(o, d, run);
  RasterCache cache(o.encoder.image_side);
  const auto train_images = cache.load(parts.train);
  const auto test_images = cache.load(parts.test);
  const auto labels = parts.train.labels();
  const auto test_labels = parts.test.labels();
  const TrainConfig config = train_config(o, d.taxonomy, o.seed);
  const std::string train_digest = manifest_digest(parts.train);
  const std::string test_digest = manifest_digest(parts.test);
  const std::string tensor_digest = images_digest(test_images);

  ClipModel clip = fresh_model(o, d.taxonomy, o.seed);
  run.seeds["init"] = derive_seed(o.seed, "init");
  run.seeds["batching"] = derive_seed(o.seed, "batching");
  TrainHooks hooks;
  hooks.heldout_top1 = [&](const ClipModel& m) {
    return top_k_accuracy(predict(m, test_images, parts.test, o, d.taxonomy), d.taxonomy, Level::kL3, 1);
  };
  const TrainResult clip_result = fine_tune(clip, train_images, labels, d.taxonomy, config, hooks);
  clip.save(run.ckpt() / "model.ckpt");
  ModelRun clip_run{"clip",
                    train_digest,
                    test_digest,
                    tensor_digest,
                    predict(clip, test_images, parts.test, o, d.taxonomy),
                    clip_result.seconds / 60.0,
                    measure_inference_latency(clip, parts.test, prompts_for(o, d.taxonomy)),
                    epochs_to_best(clip_result.epochs)};

  const std::uint64_t baseline_seed = derive_seed(o.seed, "baseline-init");
  run.seeds["baseline_init"] = baseline_seed;
  BaselineModel baseline = BaselineModel::init(o.encoder, d.taxonomy.size(), baseline_seed);
  const BaselineResult base_result =
      train_baseline(baseline, train_images, labels, config, test_images, test_labels);
  baseline.save(run.ckpt() / "baseline.ckpt");
  std::vector<std::string> ids;
  for (const auto& s : parts.test.samples) ids.push_back(s.id);
  ModelRun base_run{"baseline",
                    train_digest,
                    test_digest,
                    images_digest(test_images),
                    rank_scores(baseline_scores(baseline, test_images), ids, test_labels),
                    base_result.seconds / 60.0,
                    measure_baseline_latency(baseline, parts.test),
                    base_result.epochs_to_best};

  const std::vector<ModelRun> runs = {clip_run, base_run};
  const ComparisonReport report = compare_models(runs, d.taxonomy);
  json j = report.to_json();
  j["latency"] = {{"clip", clip_run.latency.to_json()}, {"baseline", base_run.latency.to_json()}};
  write_json(run.reports() / "comparison.json", j);
  write_text(run.reports() / "comparison.txt", report.table());
  run.produced(run.reports() / "comparison.json", true);
  run.produced(run.reports() / "comparison.txt", true);
  save_model(clip, d.taxonomy, run, true);
  run.produced(run.ckpt() / "baseline.ckpt");
  run.timings["clip_train_seconds"] = clip_result.seconds;
  run.timings["baseline_train_seconds"] = base_result.seconds;
  std::cout << report.table();
}

json gradcheck_json(const GradCheckReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"name", e.name},
                       {"max_relative_error", e.max_relative_error},
                       {"coordinates_checked", e.coordinates_checked}});
  }
  return {{"pass", r.pass}, {"tolerance", r.tolerance}, {"step", r.step}, {"entries", entries}};
}

bool cmd_gradcheck(const Options& o, RunDir& run) {
  const auto start = Clock::now();
  const GradCheckReport report = joint_model_gradcheck(o.seed);
  run.timings["gradcheck_seconds"] = seconds_since(start);
  run.seeds["init"] = derive_seed(o.seed, "init");
  run.seeds["gradcheck"] = derive_seed(o.seed, "gradcheck");
  write_json(run.reports() / "gradcheck.json", gradcheck_json(report));
  run.produced(run.reports() / "gradcheck.json");
  for (const auto& e : report.entries) {
    std::cout << e.name << ": max relative error " << e.max_relative_error << " over " << e.coordinates_checked
              << " coordinates\n";
  }
  std::cout << (report.pass ? "gradient check passed" : "gradient check FAILED") << "\n";
  return report.pass;
}

void cmd_export_sim(const Options& o, RunDir& run) {
  const Dataset d = load_dataset(o, run);
  const SplitResult parts = train_test(o, d, run);
  const ClipModel model = o.checkpoint.empty() ? fresh_model(o, d.taxonomy, o.seed) : load_model(o.checkpoint, run);
  if (o.checkpoint.empty()) run.seeds["init"] = derive_seed(o.seed, "init");

  // First test image of every class, so the diagonal pairs image c with prompt c.
  Manifest picked;
  picked.base_dir = parts.test.base_dir;
  std::vector<bool> seen(d.taxonomy.size(), false);
  for (const auto& s : parts.test.samples) {
    if (!seen[s.label] && picked.size() < kMaxSimilaritySamples) {
      seen[s.label] = true;
      picked.samples.push_back(s);
    }
  }
  std::sort(picked.samples.begin(), picked.samples.end(),
            [](const Sample& a, const Sample& b) { return a.label < b.label; });
  std::vector<std::string> prompts;
  const auto all_prompts = prompts_for(o, d.taxonomy);
  for (const auto& s : picked.samples) prompts.push_back(all_prompts[s.label]);

  RasterCache cache(o.encoder.image_side);
  const Tensor cosine = similarity_matrix(model, cache.load(picked), prompts);
  export_similarity_matrix(cosine, run.reports() / "similarity");
  json ids = json::array();
  for (const auto& s : picked.samples) ids.push_back(s.id);
  const json report = {{"model", o.checkpoint.empty() ? "random-init" : "checkpoint"},
                       {"images", ids},
                       {"prompts", prompts},
                       {"diagonal_dominance", diagonal_dominance(cosine)}};
  write_json(run.reports() / "similarity.json", report);
  for (const char* name : {"similarity.csv", "similarity.pgm", "similarity.json"}) {
    run.produced(run.reports() / name);
  }
  std::cout << "diagonal dominance " << report["diagonal_dominance"] << "\n";
}

// ---------------------------------------------------------------------------

const std::vector<std::pair<std::string, std::string>>& subcommands() {
  static const std::vector<std::pair<std::string, std::string>> list = {
      {"gen-data", "Generate a synthetic stick-figure dataset and its manifest"},
      {"split", "Stratified train/test split of a manifest"},
      {"train", "Fine-tune the dual encoder and report zero-shot vs fine-tuned metrics"},
      {"zero-shot", "Classify the test split by prompt similarity without training"},
      {"eval", "Evaluate a checkpoint: hierarchical metrics and confusion matrices"},
      {"sweep-frugality", "Retrain under shrinking per-class caps against one frozen test set"},
      {"repeat-splits", "Mean and spread of metrics over repeated random splits"},
      {"compare-baseline", "Contrastive model vs a vision-only classifier: accuracy, cost, latency"},
      {"gradcheck", "Finite-difference gradient check of the full model"},
      {"export-sim", "Image-prompt cosine similarity matrix as CSV and PGM"},
  };
  return list;
}

void add_options(CLI::App& app, Options& o) {
  app.set_config("--config", "", "key=value file; flags given on the command line take precedence");
  app.add_option("--seed", o.seed, "Root seed; every random choice derives from it")->capture_default_str();
  app.add_option("--out", o.out, std::string("Output directory (default $") + kOutEnvVar + " or " + kDefaultOut + ")");
  app.add_option("--taxonomy", o.taxonomy, "Taxonomy CSV")->capture_default_str();
  app.add_option("--manifest", o.manifest, "Dataset manifest; a synthetic set is generated when absent");
  app.add_option("--test-manifest", o.test_manifest, "Use this test set instead of splitting --manifest");
  app.add_option("--checkpoint", o.checkpoint, "Model checkpoint (vocab.txt is read from the same directory)");

  app.add_option("--classes", o.classes, "Synthetic: number of classes (6 picks the six-pose subset)")
      ->capture_default_str();
  app.add_option("--per-class", o.per_class, "Synthetic: images per class (default 40, 100 for sweep-frugality)");
  app.add_option("--noise", o.noise, "Synthetic: background noise amplitude")->capture_default_str();

  app.add_option("--side", o.encoder.image_side, "Image side in pixels")->capture_default_str();
  app.add_option("--patch", o.encoder.patch, "Patch side in pixels")->capture_default_str();
  app.add_option("--dim", o.encoder.embed_dim, "Shared embedding width")->capture_default_str();
  app.add_option("--hidden", o.encoder.hidden, "Hidden width of both towers")->capture_default_str();
  app.add_option("--max-len", o.encoder.max_text_len, "Maximum prompt length in tokens")->capture_default_str();

  app.add_option("--lr", o.lr, "Learning rate")->capture_default_str();
  app.add_option("--wd", o.wd, "Decoupled weight decay")->capture_default_str();
  app.add_option("--epochs", o.epochs, "Training epochs")->capture_default_str();
  app.add_option("--batch", o.batch, "Batch size (default: number of classes)");
  app.add_option("--prompt", o.prompt, "Prompt preset")->capture_default_str();
  app.add_flag("--freeze-logit-scale", o.freeze_logit_scale, "Keep the temperature fixed");
  app.add_flag("--checkpoint-every-epoch", o.checkpoint_every_epoch, "Rewrite the checkpoint after every epoch");

  app.add_option("--train-fraction", o.train_fraction, "Training share of each class")->capture_default_str();
  app.add_option("--cap", o.cap, "Per-class cap on the training split (0: none)");
  app.add_option("--repeats", o.repeats, "repeat-splits: number of repeats")->capture_default_str();
  app.add_option("--caps", o.caps, "sweep-frugality: strictly decreasing per-class caps")
      ->delimiter(',')
      ->capture_default_str();
}

int dispatch(const Options& o) {
  const char* env = std::getenv(kOutEnvVar);
  const fs::path out = !o.out.empty() ? fs::path(o.out) : (env && *env ? fs::path(env) : fs::path(kDefaultOut));
  o.encoder.validate();
  RunDir run(out, o);
  run.seeds["root"] = o.seed;
  const auto start = Clock::now();
  int code = 0;
  if (o.command == "gen-data") cmd_gen_data(o, run);
  else if (o.command == "split") cmd_split(o, run);
  else if (o.command == "train") cmd_train(o, run);
  else if (o.command == "zero-shot") cmd_zero_shot(o, run);
  else if (o.command == "eval") cmd_eval(o, run);
  else if (o.command == "sweep-frugality") cmd_sweep_frugality(o, run);
  else if (o.command == "repeat-splits") cmd_repeat_splits(o, run);
  else if (o.command == "compare-baseline") cmd_compare_baseline(o, run);
  else if (o.command == "gradcheck") code = cmd_gradcheck(o, run) ? 0 : 1;
  else if (o.command == "export-sim") cmd_export_sim(o, run);
  run.timings["total_seconds"] = seconds_since(start);
  run.write_manifest();
  return code;
}

}  // namespace

GradCheckReport joint_model_gradcheck(std::uint64_t seed) {
  const Taxonomy full = load_taxonomy(shipped_taxonomy());
  const Taxonomy six = full.subset(six_pose_subset_names());
  EncoderConfig config;
  config.image_side = 16;
  config.patch = 4;
  config.embed_dim = 8;
  config.hidden = 8;
  config.max_text_len = 8;
  ClipModel model = ClipModel::init(config, prompt_vocabulary(six), derive_seed(seed, "init"));

  constexpr std::size_t kPairs = 4;
  auto archetypes = archetypes_for(six, full);
  archetypes.resize(kPairs);
  SyntheticOptions so;
  so.images_per_class = 1;
  so.seed = derive_seed(seed, "generation");
  so.side = config.image_side;
  const Tensor batch = stack_images(generate_synthetic_dataset(archetypes, so).rasters);
  auto prompts = class_prompt_texts(six, prompt_preset(kDefaultPromptPreset));
  prompts.resize(kPairs);
  const auto tokens = tokenize_all(prompts, model.vocab(), config.max_text_len);

  const LossGraph forward = [&](ParamStore& store) {
    const ag::ParamAccess params(store);
    return contrastive_loss(similarity_logits(encode_images(params, batch, config),
                                              encode_texts(params, tokens, config),
                                              params(param_names::kLogitScale)));
  };
  GradCheckOptions options;
  options.seed = derive_seed(seed, "gradcheck");
  return check_gradients(forward, model.params(), 1e-4, options);
}

int run(const std::vector<std::string>& args) {
  CLI::App app("Contrastive image-text pose classifier: data, training, evaluation and ablations", "clipose");
  Options o;
  add_options(app, o);
  app.require_subcommand(1);
  app.allow_config_extras(CLI::config_extras_mode::error);
  for (const auto& [name, description] : subcommands()) {
    app.add_subcommand(name, description)->fallthrough();
  }
  if (args.size() > 1 && !args[1].starts_with("-") &&
      std::none_of(subcommands().begin(), subcommands().end(), [&](const auto& c) { return c.first == args[1]; })) {
    std::cerr << "unknown subcommand '" << args[1] << "'\n" << app.help();
    return 2;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    app.parse(reversed);
    o.command = app.get_subcommands().front()->get_name();
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }
  try {
    return dispatch(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int run(int argc, char** argv) { return run(std::vector<std::string>(argv, argv + argc)); }

}  // namespace clipose::cli
