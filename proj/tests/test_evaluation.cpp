#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "clipose/digest.hpp"
#include "clipose/errors.hpp"
#include "clipose/evaluation.hpp"
#include "clipose/prompts.hpp"
#include "clipose/raster.hpp"
#include "clipose/synthetic.hpp"
#include "clipose/training.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace clipose;
namespace t = clipose::testing;

namespace {

std::vector<Prediction> perfect(const Taxonomy& tax, std::size_t per_class) {
  const std::size_t c = tax.size();
  Tensor scores = Tensor::zeros({c * per_class, c});
  std::vector<std::string> ids;
  std::vector<std::size_t> truths;
  for (std::size_t i = 0; i < c * per_class; ++i) {
    scores.at(i, i % c) = 1.0;
    ids.push_back("s" + std::to_string(i));
    truths.push_back(i % c);
  }
  return rank_scores(scores, ids, truths);
}

Prediction fixed(std::size_t truth, std::vector<std::size_t> order) {
  Prediction p{"x", truth, {}};
  double score = static_cast<double>(order.size());
  for (std::size_t c : order) p.ranked.emplace_back(c, score--);
  return p;
}

Manifest counted(std::size_t classes, std::size_t per_class) {
  Manifest m;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) m.samples.push_back({std::to_string(c) + "_" + std::to_string(i), "-", c});
  }
  return m;
}

MetricsReport constant_report(double v) {
  MetricsReport r;
  r.l1 = r.l2 = r.l3 = {v, v};
  return r;
}

}  // namespace

TEST_SUITE("ranking") {
  TEST_CASE("rows are ranked best first, ties by ascending class") {
    const std::vector<std::string> ids = {"a"};
    const std::vector<std::size_t> truths = {2};
    const auto p = rank_scores(Tensor::matrix(1, 4, {0.5, 0.9, 0.5, -1}), ids, truths);
    REQUIRE(p.size() == 1);
    std::vector<std::size_t> order;
    for (const auto& [c, s] : p[0].ranked) order.push_back(c);
    CHECK(order == std::vector<std::size_t>{1, 0, 2, 3});
    CHECK(p[0].top1() == 1);
  }

  TEST_CASE("an image equal to class k's text embedding is classified as k") {
    const Tensor text = Tensor::identity(6);
    for (std::size_t k = 0; k < 6; ++k) {
      Tensor image = Tensor::zeros({1, 6});
      image.at(0, k) = 1.0;
      const std::vector<std::string> ids = {"x"};
      const std::vector<std::size_t> truths = {k};
      CHECK(rank_scores(similarity_logits(image, text, kInitialLogitScale), ids, truths)[0].top1() == k);
    }
  }

  TEST_CASE("random init sits near chance on 360 balanced samples") {
    const Taxonomy six = t::six_taxonomy();
    SyntheticOptions o;
    o.images_per_class = 60;
    o.seed = 5;
    const SyntheticDataset d = generate_synthetic_dataset(archetypes_for(six, t::full_taxonomy()), o);
    const auto prompts = class_prompt_texts(six, prompt_preset(kDefaultPromptPreset));
    for (std::uint64_t seed : {1, 2, 3}) {
      const ClipModel m = ClipModel::init(EncoderConfig{}, prompt_vocabulary(six), seed);
      const auto preds = zero_shot_classify(m, d.rasters, d.manifest, prompts, six);
      CHECK(preds.size() == 360);
      CHECK(std::abs(top_k_accuracy(preds, six, Level::kL3, 1) - 1.0 / 6.0) <= 0.10);
    }
    const ClipModel m = ClipModel::init(EncoderConfig{}, prompt_vocabulary(six), 1);
    const std::vector<std::string> five(prompts.begin(), prompts.end() - 1);
    CHECK_THROWS_AS(zero_shot_classify(m, d.rasters, d.manifest, five, six), ContractError);
  }
}

TEST_SUITE("top-k") {
  TEST_CASE("perfect predictions score 1 at every level and k") {
    const Taxonomy full = t::full_taxonomy();
    const auto preds = perfect(full, 1);
    for (Level l : {Level::kL1, Level::kL2, Level::kL3}) {
      for (std::size_t k : {1, 5, 82}) CHECK(top_k_accuracy(preds, full, l, k) == 1.0);
    }
  }

  TEST_CASE("k equal to the class count is always 1; k outside [1, C] throws") {
    const Taxonomy full = t::full_taxonomy();
    Rng rng(3);
    const auto preds = t::random_predictions(rng, 50, full);
    CHECK(top_k_accuracy(preds, full, Level::kL3, 82) == 1.0);
    CHECK_THROWS_AS(top_k_accuracy(preds, full, Level::kL3, 0), ContractError);
    CHECK_THROWS_AS(top_k_accuracy(preds, full, Level::kL3, 83), ContractError);
  }

  TEST_CASE("coarse levels roll up the top-k fine predictions") {
    std::istringstream csv("l3_name,l2_name,l1_name\nA,a,X\nB,a,X\nC,b,X\nD,c,Y\n");
    const Taxonomy tax = parse_taxonomy(csv, "t");
    const std::vector<Prediction> p = {fixed(0, {1, 2, 3, 0})};
    CHECK(top_k_accuracy(p, tax, Level::kL3, 1) == 0.0);
    CHECK(top_k_accuracy(p, tax, Level::kL2, 1) == 1.0);
    CHECK(top_k_accuracy(p, tax, Level::kL3, 3) == 0.0);
    CHECK(top_k_accuracy(p, tax, Level::kL3, 4) == 1.0);
    const std::vector<Prediction> q = {fixed(3, {0, 1, 2, 3})};
    CHECK(top_k_accuracy(q, tax, Level::kL1, 3) == 0.0);
    CHECK(top_k_accuracy(q, tax, Level::kL1, 4) == 1.0);
  }

  TEST_CASE("hierarchy and top-k orderings hold on random predictions") {
    const Taxonomy full = t::full_taxonomy();
    const Taxonomy six = t::six_taxonomy();
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
      const Taxonomy& tax = trial % 2 ? full : six;
      auto preds = t::random_predictions(rng, 1 + rng.below(120), tax);
      // Skew some predictions towards the truth so accuracies are not all near zero.
      for (auto& p : preds) {
        if (rng.uniform() < 0.4) {
          auto it = std::find_if(p.ranked.begin(), p.ranked.end(), [&](auto& r) { return r.first == p.truth; });
          std::rotate(p.ranked.begin(), it, it + 1);
        }
      }
      for (std::size_t k = 1; k <= tax.size(); k += (k < 6 ? 1 : 7)) {
        const double l1 = top_k_accuracy(preds, tax, Level::kL1, k);
        const double l2 = top_k_accuracy(preds, tax, Level::kL2, k);
        const double l3 = top_k_accuracy(preds, tax, Level::kL3, k);
        CHECK(l1 >= l2);
        CHECK(l2 >= l3);
      }
      const MetricsReport m = compute_metrics(preds, tax);
      for (Level l : {Level::kL1, Level::kL2, Level::kL3}) CHECK(m.at(l).top5 >= m.at(l).top1);
      CHECK(m.top_k == std::min<std::size_t>(5, tax.size()));

      auto shuffled = preds;
      rng.shuffle(shuffled);
      const MetricsReport ms = compute_metrics(shuffled, tax);
      CHECK(ms.to_json() == m.to_json());
    }
  }
}

TEST_SUITE("weighted metrics") {
  TEST_CASE("one class, all correct") {
    std::vector<Prediction> p(7, fixed(0, {0, 1}));
    const WeightedPrf w = weighted_prf(p);
    CHECK(w.precision == 1.0);
    CHECK(w.recall == 1.0);
    CHECK(w.f1 == 1.0);
    CHECK(w.support == 7);
  }

  TEST_CASE("hand-computed case with a never-predicted class") {
    // truths 0,0,1,1; predictions 0,0,0,0.
    const std::vector<Prediction> p = {fixed(0, {0, 1}), fixed(0, {0, 1}), fixed(1, {0, 1}), fixed(1, {0, 1})};
    const WeightedPrf w = weighted_prf(p);
    CHECK(std::abs(w.precision - 0.25) < 1e-15);
    CHECK(std::abs(w.recall - 0.5) < 1e-15);
    CHECK(std::abs(w.f1 - 0.5 * (2 * 0.5 * 1.0 / 1.5)) < 1e-15);
  }

  TEST_CASE("weighted recall equals top-1 accuracy") {
    const Taxonomy full = t::full_taxonomy();
    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
      const auto preds = t::random_predictions(rng, 1 + rng.below(200), full);
      CHECK(std::abs(weighted_prf(preds).recall - top_k_accuracy(preds, full, Level::kL3, 1)) < 1e-12);
    }
  }
}

TEST_SUITE("confusion") {
  TEST_CASE("perfect predictions give identity blocks and an empty outside column") {
    const Taxonomy full = t::full_taxonomy();
    const auto mats = confusion_by_superclass(perfect(full, 2), full);
    REQUIRE(mats.size() == 6);
    for (const auto& m : mats) {
      const std::size_t n = m.classes.size();
      CHECK(m.counts.shape() == Shape{n, n + 1});
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c <= n; ++c) {
          CHECK(m.counts.at(r, c) == (r == c ? 2.0 : 0.0));
          CHECK(m.normalized.at(r, c) == (r == c ? 1.0 : 0.0));
        }
      }
    }
  }

  TEST_CASE("Reclining has 19 rows") {
    const Taxonomy full = t::full_taxonomy();
    for (const auto& m : confusion_by_superclass(perfect(full, 1), full)) {
      if (m.superclass == "Reclining") CHECK(m.classes.size() == 19);
    }
  }

  TEST_CASE("counts conserve and nonzero columns normalize to one") {
    const Taxonomy full = t::full_taxonomy();
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 1 + rng.below(400);
      const auto preds = t::random_predictions(rng, n, full);
      double total = 0;
      for (const auto& m : confusion_by_superclass(preds, full)) {
        for (double v : m.counts.values()) total += v;
        const std::size_t cols = m.counts.cols();
        for (std::size_t c = 0; c < cols; ++c) {
          double count = 0, norm = 0;
          for (std::size_t r = 0; r < m.counts.rows(); ++r) {
            count += m.counts.at(r, c);
            norm += m.normalized.at(r, c);
          }
          if (count > 0) {
            CHECK(std::abs(norm - 1.0) < 1e-9);
          } else {
            CHECK(norm == 0.0);
          }
        }
      }
      CHECK(total == static_cast<double>(n));
    }
  }

  TEST_CASE("CSV export has a header naming the outside column") {
    t::TempDir dir;
    const Taxonomy six = t::six_taxonomy();
    const auto mats = confusion_by_superclass(perfect(six, 1), six);
    write_confusion_csv(dir / "c.csv", dir / "n.csv", mats.front());
    std::ifstream in(dir / "c.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header.find("outside") != std::string::npos);
  }
}

TEST_SUITE("repeated splits") {
  TEST_CASE("one repeat has zero spread") {
    const Taxonomy six = t::six_taxonomy();
    const TrainEval pipeline = [&](const Manifest&, const Manifest& test, std::uint64_t seed) {
      Rng rng(seed);
      return compute_metrics(t::random_predictions(rng, test.size(), six), six);
    };
    const RepeatedSplitStats s = repeated_split_eval(counted(6, 10), SplitSpec{0.8, 3, {}}, 1, pipeline);
    CHECK(s.std_l1.top1 == 0.0);
    CHECK(s.std_l2.top1 == 0.0);
    CHECK(s.std_l3.top1 == 0.0);
    CHECK(s.std_l3.top5 == 0.0);
  }

  TEST_CASE("a constant pipeline has mean equal to the constant and zero spread") {
    const RepeatedSplitStats s = repeated_split_eval(
        counted(3, 5), SplitSpec{0.8, 3, {}}, 7, [](const Manifest&, const Manifest&, std::uint64_t) {
          return constant_report(0.625);
        });
    CHECK(s.mean_l3.top1 == 0.625);
    CHECK(s.std_l3.top1 == 0.0);
    CHECK(s.runs.size() == 7);
  }

  TEST_CASE("repeat r resplits with base seed + r and is deterministic") {
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> test_digests;
    const TrainEval pipeline = [&](const Manifest&, const Manifest& test, std::uint64_t seed) {
      seeds.push_back(seed);
      test_digests.push_back(manifest_digest(test));
      return constant_report(static_cast<double>(seed % 3) / 2.0);
    };
    const RepeatedSplitStats a = repeated_split_eval(counted(4, 10), SplitSpec{0.8, 100, {}}, 4, pipeline);
    CHECK(seeds == std::vector<std::uint64_t>{100, 101, 102, 103});
    CHECK(test_digests[0] != test_digests[1]);
    const RepeatedSplitStats b = repeated_split_eval(counted(4, 10), SplitSpec{0.8, 100, {}}, 4, pipeline);
    CHECK(a.to_json() == b.to_json());
    // seeds 100..103 give 0.5, 1.0, 0.0, 0.5: population std sqrt(0.125).
    CHECK(std::abs(a.mean_l3.top1 - 0.5) < 1e-15);
    CHECK(std::abs(a.std_l3.top1 - std::sqrt(0.125)) < 1e-15);
    const RepeatedSplitStats sample = repeated_split_eval(counted(4, 10), SplitSpec{0.8, 100, {}}, 4, pipeline, false);
    CHECK(std::abs(sample.std_l3.top1 - std::sqrt(0.5 / 3)) < 1e-15);
  }

  TEST_CASE("zero repeats and failing repeats") {
    const TrainEval ok = [](const Manifest&, const Manifest&, std::uint64_t) { return constant_report(1); };
    CHECK_THROWS_AS(repeated_split_eval(counted(2, 4), SplitSpec{}, 0, ok), ConfigError);
    const TrainEval fails = [](const Manifest&, const Manifest&, std::uint64_t seed) -> MetricsReport {
      if (seed == 2) throw std::runtime_error("boom");
      return constant_report(1);
    };
    try {
      repeated_split_eval(counted(2, 4), SplitSpec{0.8, 0, {}}, 5, fails);
      FAIL("expected the failure to propagate");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("repeat 2") != std::string::npos);
    }
  }
}

TEST_SUITE("frugality") {
  TEST_CASE("counts 258 / 120 / 36 against one frozen test set") {
    std::vector<std::string> digests;
    const TrainEval pipeline = [&](const Manifest& train, const Manifest& test, std::uint64_t) {
      digests.push_back(manifest_digest(test));
      return constant_report(static_cast<double>(train.size()) / 480.0);
    };
    const std::vector<std::size_t> caps = {43, 20, 6};
    const FrugalitySweep s = frugality_sweep(counted(6, 100), SplitSpec{0.8, 9, {}}, caps, pipeline);
    REQUIRE(s.rows.size() == 3);
    CHECK(s.rows[0].train_count == 258);
    CHECK(s.rows[1].train_count == 120);
    CHECK(s.rows[2].train_count == 36);
    for (const auto& r : s.rows) CHECK(r.test_digest == s.test_digest);
    CHECK(digests[0] == digests[1]);
    CHECK(digests[1] == digests[2]);
    CHECK(s.warnings.empty());
    CHECK(s.table().find("258") != std::string::npos);
  }

  TEST_CASE("a cap above the smallest training class is flagged") {
    const TrainEval pipeline = [](const Manifest&, const Manifest&, std::uint64_t) { return constant_report(0.5); };
    const std::vector<std::size_t> caps = {50, 10};
    const FrugalitySweep s = frugality_sweep(counted(6, 20), SplitSpec{0.8, 9, {}}, caps, pipeline);
    CHECK(s.rows[0].identity_cap);
    CHECK_FALSE(s.rows[1].identity_cap);
    CHECK(s.warnings.size() == 1);
  }

  TEST_CASE("caps must strictly decrease") {
    const TrainEval pipeline = [](const Manifest&, const Manifest&, std::uint64_t) { return constant_report(0.5); };
    for (std::vector<std::size_t> caps : {std::vector<std::size_t>{6, 20}, {20, 20}, {}, {5, 0}}) {
      CHECK_THROWS_AS(frugality_sweep(counted(6, 20), SplitSpec{0.8, 9, {}}, caps, pipeline), ConfigError);
    }
  }
}

TEST_SUITE("similarity export") {
  TEST_CASE("identical embeddings give a diagonal-dominant matrix") {
    Rng rng(2);
    const Tensor e = l2_normalize_rows(t::random_matrix(rng, 6, 8));
    CHECK(diagonal_dominance(matmul(e, transpose(e))) == 1.0);
    CHECK(diagonal_dominance(Tensor::filled({3, 3}, 0.5)) == 0.0);
  }

  TEST_CASE("CSV round trip and heatmap") {
    t::TempDir dir;
    Rng rng(3);
    const Tensor cosine = t::random_matrix(rng, 5, 7);
    export_similarity_matrix(cosine, dir / "sim");
    CHECK(max_abs_diff(read_matrix_csv(dir / "sim.csv"), cosine) < 1e-9);
    const Tensor heat = read_pgm(dir / "sim.pgm");
    CHECK(heat.rows() == 5 * 8);
    CHECK(heat.cols() == 7 * 8);
    CHECK(std::abs(heat.at(8 * 2 + 3, 8 * 4 + 7) - (cosine.at(2, 4) + 1.0) / 2.0) <= 0.5 / 255 + 1e-12);
    CHECK_THROWS_AS(export_similarity_matrix(cosine, "/nonexistent-dir/sim"), IoError);
  }

  TEST_CASE("more than 64 images is refused") {
    const Taxonomy six = t::six_taxonomy();
    const ClipModel m = ClipModel::init(EncoderConfig{}, prompt_vocabulary(six), 1);
    const std::vector<Tensor> images(65, Tensor::zeros({32, 32}));
    const std::vector<std::string> prompts = {"yoga"};
    CHECK_THROWS_AS(similarity_matrix(m, images, prompts), ContractError);
    const std::vector<Tensor> few(3, Tensor::zeros({32, 32}));
    const Tensor s = similarity_matrix(m, few, prompts);
    CHECK(s.shape() == Shape{3, 1});
    for (double v : s.values()) CHECK(std::abs(v) <= 1.0 + 1e-12);
  }
}

TEST_SUITE("latency") {
  TEST_CASE("summary ordering") {
    const LatencyStats s = summarize_latency({5, 1, 3, 2, 4, 100, 2, 2, 3, 1});
    CHECK(s.count == 10);
    CHECK(s.min_ms == 1);
    CHECK(s.max_ms == 100);
    CHECK(s.min_ms <= s.p50_ms);
    CHECK(s.p50_ms <= s.p95_ms);
    CHECK(s.p95_ms <= s.max_ms);
    CHECK(s.mean_ms == doctest::Approx(12.3));
  }

  TEST_CASE("one measurement per test sample, under the desk budget") {
    const Taxonomy six = t::six_taxonomy();
    SyntheticOptions o;
    o.images_per_class = 6;
    const SyntheticDataset d = generate_synthetic_dataset(archetypes_for(six, t::full_taxonomy()), o);
    const ClipModel m = ClipModel::init(EncoderConfig{}, prompt_vocabulary(six), 1);
    const auto prompts = class_prompt_texts(six, prompt_preset(kDefaultPromptPreset));
    const LatencyStats s = measure_inference_latency(m, d.manifest, prompts);
    CHECK(s.count == 36);
    CHECK(s.mean_ms >= s.min_ms);
    CHECK(s.mean_ms <= s.max_ms);
    CHECK(s.min_ms <= s.p50_ms);
    CHECK(s.p50_ms <= s.max_ms);
    CHECK(s.mean_ms < 5.0);

    Manifest small = d.manifest;
    small.samples.resize(29);
    CHECK_THROWS_AS(measure_inference_latency(m, small, prompts), ContractError);
  }
}
