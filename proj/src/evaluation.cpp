#include "clipose/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "clipose/errors.hpp"
#include "clipose/raster.hpp"
#include "clipose/rng.hpp"

namespace clipose {

namespace {

constexpr std::size_t kEncodeChunk = 128;

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::json level_json(const LevelAccuracy& a) { return {{"top1", a.top1}, {"top5", a.top5}}; }

}  // namespace

std::vector<Prediction> rank_scores(const Tensor& scores, std::span<const std::string> ids,
                                    std::span<const std::size_t> truths) {
  if (scores.rank() != 2 || scores.rows() != ids.size() || ids.size() != truths.size()) {
    throw DimensionError("rank_scores: " + shape_to_string(scores.shape()) + " scores for " +
                         std::to_string(ids.size()) + " samples");
  }
  std::vector<Prediction> out;
  out.reserve(ids.size());
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    Prediction p{ids[r], truths[r], {}};
    const auto row = scores.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) p.ranked.emplace_back(c, row[c]);
    std::stable_sort(p.ranked.begin(), p.ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    out.push_back(std::move(p));
  }
  return out;
}

Tensor clip_scores(const ClipModel& model, std::span<const Tensor> images, std::span<const std::string> prompts) {
  if (images.empty()) throw ContractError("clip_scores: no images");
  const Tensor text = embed_texts(model, prompts);
  std::vector<double> values;
  values.reserve(images.size() * prompts.size());
  for (std::size_t start = 0; start < images.size(); start += kEncodeChunk) {
    const auto chunk = images.subspan(start, std::min(kEncodeChunk, images.size() - start));
    const Tensor logits = similarity_logits(embed_images(model, stack_images(chunk)), text, model.logit_scale());
    values.insert(values.end(), logits.values().begin(), logits.values().end());
  }
  return Tensor({images.size(), prompts.size()}, std::move(values));
}

std::vector<Prediction> zero_shot_classify(const ClipModel& model, const Manifest& test,
                                           std::span<const std::string> prompts, const Taxonomy& taxonomy) {
  const auto images = load_rasters(test, model.config().image_side);
  return zero_shot_classify(model, images, test, prompts, taxonomy);
}

std::vector<Prediction> zero_shot_classify(const ClipModel& model, std::span<const Tensor> images,
                                           const Manifest& test, std::span<const std::string> prompts,
                                           const Taxonomy& taxonomy) {
  if (prompts.size() != taxonomy.size()) {
    throw ContractError("zero_shot_classify: " + std::to_string(prompts.size()) + " prompts for " +
                        std::to_string(taxonomy.size()) + " classes");
  }
  if (images.size() != test.size()) throw ContractError("zero_shot_classify: images do not match manifest");
  std::vector<std::string> ids;
  for (const auto& s : test.samples) ids.push_back(s.id);
  const auto truths = test.labels();
  return rank_scores(clip_scores(model, images, prompts), ids, truths);
}

double top_k_accuracy(std::span<const Prediction> predictions, const Taxonomy& taxonomy, Level level,
                      std::size_t k) {
  if (k == 0 || k > taxonomy.size()) {
    throw ContractError("top_k_accuracy: k = " + std::to_string(k) + " with " + std::to_string(taxonomy.size()) +
                        " classes");
  }
  if (predictions.empty()) throw ContractError("top_k_accuracy: no predictions");
  std::size_t hits = 0;
  for (const auto& p : predictions) {
    if (p.ranked.size() < k) throw ContractError("top_k_accuracy: prediction '" + p.id + "' ranks too few classes");
    const std::size_t want = taxonomy.index_at(level, p.truth);
    for (std::size_t i = 0; i < k; ++i) {
      if (taxonomy.index_at(level, p.ranked[i].first) == want) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

WeightedPrf weighted_prf(std::span<const Prediction> predictions) {
  if (predictions.empty()) throw ContractError("weighted_prf: no predictions");
  std::size_t classes = 0;
  for (const auto& p : predictions) classes = std::max({classes, p.truth + 1, p.top1() + 1});
  std::vector<std::size_t> support(classes, 0), predicted(classes, 0), correct(classes, 0);
  for (const auto& p : predictions) {
    ++support[p.truth];
    ++predicted[p.top1()];
    if (p.top1() == p.truth) ++correct[p.truth];
  }
  const double n = static_cast<double>(predictions.size());
  WeightedPrf out;
  out.support = predictions.size();
  for (std::size_t c = 0; c < classes; ++c) {
    if (support[c] == 0) continue;
    const double w = static_cast<double>(support[c]) / n;
    const double precision = predicted[c] ? static_cast<double>(correct[c]) / static_cast<double>(predicted[c]) : 0.0;
    const double recall = static_cast<double>(correct[c]) / static_cast<double>(support[c]);
    const double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    out.precision += w * precision;
    out.recall += w * recall;
    out.f1 += w * f1;
  }
  return out;
}

const LevelAccuracy& MetricsReport::at(Level level) const {
  switch (level) {
    case Level::kL1: return l1;
    case Level::kL2: return l2;
    case Level::kL3: return l3;
  }
  return l3;
}

nlohmann::json MetricsReport::to_json() const {
  return {{"L1", level_json(l1)},
          {"L2", level_json(l2)},
          {"L3", level_json(l3)},
          {"top_k", top_k},
          {"weighted", {{"precision", weighted.precision},
                        {"recall", weighted.recall},
                        {"f1", weighted.f1},
                        {"support", weighted.support}}}};
}

MetricsReport compute_metrics(std::span<const Prediction> predictions, const Taxonomy& taxonomy) {
  MetricsReport r;
  r.top_k = std::min<std::size_t>(5, taxonomy.size());
  for (Level level : {Level::kL1, Level::kL2, Level::kL3}) {
    LevelAccuracy a{top_k_accuracy(predictions, taxonomy, level, 1),
                    top_k_accuracy(predictions, taxonomy, level, r.top_k)};
    if (a.top5 < a.top1) throw ContractError(std::string("metrics: top-k below top-1 at ") + level_name(level));
    (level == Level::kL1 ? r.l1 : level == Level::kL2 ? r.l2 : r.l3) = a;
  }
  if (!(r.l1.top1 >= r.l2.top1 && r.l2.top1 >= r.l3.top1 && r.l1.top5 >= r.l2.top5 && r.l2.top5 >= r.l3.top5)) {
    throw ContractError("metrics: coarse-level accuracy below a finer level");
  }
  r.weighted = weighted_prf(predictions);
  return r;
}

std::vector<ConfusionMatrix> confusion_by_superclass(std::span<const Prediction> predictions,
                                                     const Taxonomy& taxonomy) {
  std::vector<ConfusionMatrix> out;
  for (std::size_t l1 = 0; l1 < taxonomy.l1_count(); ++l1) {
    const auto members = taxonomy.members_of_l1(l1);
    const std::size_t n = members.size();
    std::vector<std::size_t> position(taxonomy.size(), n);  // n = outside
    for (std::size_t i = 0; i < n; ++i) position[members[i]] = i;

    ConfusionMatrix m;
    m.superclass = taxonomy.l1_name(l1);
    for (std::size_t c : members) m.classes.push_back(taxonomy.cls(c).name);
    m.counts = Tensor::zeros({n, n + 1});
    for (const auto& p : predictions) {
      if (taxonomy.l1_of(p.truth) != l1) continue;
      m.counts.at(position[p.truth], position[p.top1()]) += 1.0;
    }
    m.normalized = m.counts;
    for (std::size_t col = 0; col <= n; ++col) {
      double sum = 0.0;
      for (std::size_t row = 0; row < n; ++row) sum += m.counts.at(row, col);
      if (sum == 0.0) continue;
      for (std::size_t row = 0; row < n; ++row) m.normalized.at(row, col) = m.counts.at(row, col) / sum;
    }
    out.push_back(std::move(m));
  }
  return out;
}

void write_confusion_csv(const std::filesystem::path& counts_path, const std::filesystem::path& normalized_path,
                         const ConfusionMatrix& matrix) {
  auto write = [&](const std::filesystem::path& path, const Tensor& t, bool integral) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "true\\predicted";
    for (const auto& c : matrix.classes) out << ',' << c;
    out << ",outside\n";
    for (std::size_t r = 0; r < matrix.classes.size(); ++r) {
      out << matrix.classes[r];
      for (std::size_t c = 0; c < t.dim(1); ++c) {
        out << ',';
        if (integral) {
          out << static_cast<long long>(t.at(r, c));
        } else {
          out << fmt_double(t.at(r, c));
        }
      }
      out << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
  };
  write(counts_path, matrix.counts, true);
  write(normalized_path, matrix.normalized, false);
}

nlohmann::json RepeatedSplitStats::to_json() const {
  nlohmann::json runs_json = nlohmann::json::array();
  for (const auto& r : runs) runs_json.push_back(r.to_json());
  return {{"repeats", repeats},
          {"std_kind", population_std ? "population" : "sample"},
          {"mean", {{"L1", level_json(mean_l1)}, {"L2", level_json(mean_l2)}, {"L3", level_json(mean_l3)}}},
          {"std", {{"L1", level_json(std_l1)}, {"L2", level_json(std_l2)}, {"L3", level_json(std_l3)}}},
          {"runs", runs_json}};
}

RepeatedSplitStats repeated_split_eval(const Manifest& manifest, const SplitSpec& split, std::size_t repeats,
                                       const TrainEval& pipeline, bool population_std) {
  if (repeats == 0) throw ConfigError("repeated splits: repeats must be at least 1");
  RepeatedSplitStats stats;
  stats.repeats = repeats;
  stats.population_std = population_std;
  for (std::size_t r = 0; r < repeats; ++r) {
    SplitSpec s = split;
    s.seed = split.seed + r;
    try {
      const SplitResult parts = stratified_split(manifest, s);
      stats.runs.push_back(pipeline(parts.train, parts.test, s.seed));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw std::runtime_error("repeat " + std::to_string(r) + ": " + e.what());
    }
  }
  const double n = static_cast<double>(repeats);
  const double dof = population_std ? n : std::max(1.0, n - 1.0);
  auto summarize = [&](auto field, LevelAccuracy& mean, LevelAccuracy& sd) {
    double s1 = 0, s5 = 0;
    for (const auto& run : stats.runs) {
      s1 += field(run).top1;
      s5 += field(run).top5;
    }
    mean = {s1 / n, s5 / n};
    double v1 = 0, v5 = 0;
    for (const auto& run : stats.runs) {
      v1 += (field(run).top1 - mean.top1) * (field(run).top1 - mean.top1);
      v5 += (field(run).top5 - mean.top5) * (field(run).top5 - mean.top5);
    }
    sd = {std::sqrt(v1 / dof), std::sqrt(v5 / dof)};
  };
  summarize([](const MetricsReport& m) { return m.l1; }, stats.mean_l1, stats.std_l1);
  summarize([](const MetricsReport& m) { return m.l2; }, stats.mean_l2, stats.std_l2);
  summarize([](const MetricsReport& m) { return m.l3; }, stats.mean_l3, stats.std_l3);
  return stats;
}

nlohmann::json FrugalitySweep::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"cap", r.cap},
                         {"train_count", r.train_count},
                         {"top1", r.metrics.l3.top1},
                         {"identity_cap", r.identity_cap},
                         {"test_digest", r.test_digest},
                         {"metrics", r.metrics.to_json()}});
  }
  return {{"rows", rows_json}, {"test_digest", test_digest}, {"warnings", warnings}};
}

std::string FrugalitySweep::table() const {
  std::ostringstream out;
  char line[96];
  std::snprintf(line, sizeof line, "%-8s %-14s %s\n", "cap", "train images", "top-1");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-8zu %-14zu %.1f%%\n", r.cap, r.train_count, 100.0 * r.metrics.l3.top1);
    out << line;
  }
  return out.str();
}

FrugalitySweep frugality_sweep(const Manifest& manifest, const SplitSpec& split, std::span<const std::size_t> caps,
                               const TrainEval& pipeline) {
  if (caps.empty()) throw ConfigError("frugality sweep: no caps given");
  for (std::size_t i = 0; i < caps.size(); ++i) {
    if (caps[i] == 0) throw ConfigError("frugality sweep: caps must be positive");
    if (i > 0 && caps[i] >= caps[i - 1]) throw ConfigError("frugality sweep: caps must be strictly decreasing");
  }
  SplitSpec once = split;
  once.per_class_cap.reset();
  const SplitResult parts = stratified_split(manifest, once);

  const auto train_labels = parts.train.labels();
  std::size_t smallest = SIZE_MAX;
  for (std::size_t n : count_per_class(parts.train, 1 + *std::max_element(train_labels.begin(), train_labels.end()))) {
    if (n > 0) smallest = std::min(smallest, n);
  }

  FrugalitySweep sweep;
  sweep.test_digest = manifest_digest(parts.test);
  const std::uint64_t cap_seed = derive_seed(split.seed, "frugality");
  for (std::size_t cap : caps) {
    FrugalityRow row;
    row.cap = cap;
    row.identity_cap = cap > smallest;
    if (row.identity_cap) {
      sweep.warnings.push_back("cap " + std::to_string(cap) + " exceeds the smallest training class (" +
                               std::to_string(smallest) + "); that class is used whole");
    }
    const Manifest train = subsample_per_class(parts.train, cap, cap_seed);
    row.train_count = train.size();
    row.test_digest = manifest_digest(parts.test);
    row.metrics = pipeline(train, parts.test, split.seed);
    sweep.rows.push_back(std::move(row));
  }
  return sweep;
}

Tensor similarity_matrix(const ClipModel& model, std::span<const Tensor> images, std::span<const std::string> prompts) {
  if (images.empty() || images.size() > kMaxSimilaritySamples) {
    throw ContractError("similarity matrix: between 1 and " + std::to_string(kMaxSimilaritySamples) +
                        " samples required, got " + std::to_string(images.size()));
  }
  return matmul(embed_images(model, stack_images(images)), transpose(embed_texts(model, prompts)));
}

void export_similarity_matrix(const Tensor& cosine, const std::filesystem::path& stem) {
  const std::filesystem::path csv = stem.string() + ".csv";
  {
    std::ofstream out(csv, std::ios::trunc);
    if (!out) throw IoError("cannot write " + csv.string());
    for (std::size_t r = 0; r < cosine.dim(0); ++r) {
      for (std::size_t c = 0; c < cosine.dim(1); ++c) out << (c ? "," : "") << fmt_double(cosine.at(r, c));
      out << '\n';
    }
    if (!out) throw IoError("failed writing " + csv.string());
  }
  constexpr std::size_t kCell = 8;
  Tensor heat = Tensor::zeros({cosine.dim(0) * kCell, cosine.dim(1) * kCell});
  for (std::size_t y = 0; y < heat.dim(0); ++y) {
    for (std::size_t x = 0; x < heat.dim(1); ++x) {
      heat.at(y, x) = std::clamp((cosine.at(y / kCell, x / kCell) + 1.0) / 2.0, 0.0, 1.0);
    }
  }
  write_pgm(stem.string() + ".pgm", heat);
}

Tensor read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::size_t n = 0;
    for (std::string cell; std::getline(ss, cell, ',');) {
      values.push_back(std::stod(cell));
      ++n;
    }
    if (rows > 0 && n != cols) throw ParseError(path.string(), rows + 1, "ragged matrix row");
    cols = n;
    ++rows;
  }
  if (rows == 0) throw IoError(path.string() + ": empty matrix");
  return Tensor({rows, cols}, std::move(values));
}

double diagonal_dominance(const Tensor& m) {
  const std::size_t n = std::min(m.dim(0), m.dim(1));
  std::size_t dominant = 0;
  for (std::size_t r = 0; r < n; ++r) {
    bool best = true;
    for (std::size_t c = 0; c < m.dim(1) && best; ++c) {
      if (c != r && m.at(r, c) >= m.at(r, r)) best = false;
    }
    dominant += best;
  }
  return static_cast<double>(dominant) / static_cast<double>(n);
}

nlohmann::json LatencyStats::to_json() const {
  return {{"mean_ms", mean_ms}, {"p50_ms", p50_ms}, {"p95_ms", p95_ms},
          {"min_ms", min_ms},   {"max_ms", max_ms}, {"count", count}};
}

LatencyStats summarize_latency(std::vector<double> samples) {
  if (samples.empty()) throw ContractError("latency: no samples");
  std::sort(samples.begin(), samples.end());
  auto rank = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples.size())));
    return samples[std::clamp<std::size_t>(idx, 1, samples.size()) - 1];
  };
  LatencyStats s;
  s.count = samples.size();
  s.mean_ms = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
  s.p50_ms = rank(0.50);
  s.p95_ms = rank(0.95);
  s.min_ms = samples.front();
  s.max_ms = samples.back();
  return s;
}

LatencyStats measure_inference_latency(const ClipModel& model, const Manifest& test,
                                       std::span<const std::string> prompts) {
  if (test.size() < kMinLatencySamples) {
    throw ContractError("latency: need at least " + std::to_string(kMinLatencySamples) + " samples, got " +
                        std::to_string(test.size()));
  }
  using Clock = std::chrono::steady_clock;
  const ag::ParamAccess params(model.params());
  const auto& config = model.config();
  std::vector<double> times;
  times.reserve(test.size());
  std::size_t sink = 0;
  for (const auto& sample : test.samples) {
    const auto start = Clock::now();
    const Tensor image = load_raster(sample.source, config.image_side, test.base_dir);
    const auto tokens = tokenize_all(prompts, model.vocab(), config.max_text_len);
    const ag::Var text = encode_texts(params, tokens, config);
    const ag::Var img = encode_images(params, stack_images(std::span(&image, 1)), config);
    const Tensor logits = similarity_logits(img, text, params(param_names::kLogitScale)).value();
    const auto row = logits.row(0);
    sink += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    times.push_back(std::chrono::duration<double, std::milli>(Clock::now() - start).count());
  }
  volatile std::size_t keep = sink;
  (void)keep;
  return summarize_latency(std::move(times));
}

}  // namespace clipose
