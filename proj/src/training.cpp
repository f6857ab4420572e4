#include "clipose/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>

#include "clipose/errors.hpp"
#include "clipose/prompts.hpp"
#include "clipose/raster.hpp"
#include "clipose/rng.hpp"
#include "clipose/taxonomy.hpp"

namespace clipose {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<std::size_t> diagonal_targets(std::size_t n) {
  std::vector<std::size_t> t(n);
  std::iota(t.begin(), t.end(), 0);
  return t;
}

void require_square(const Shape& shape) {
  if (shape.size() != 2 || shape[0] != shape[1]) {
    throw ContractError("contrastive_loss: logits must be square, got " + shape_to_string(shape));
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!std::isfinite(learning_rate) || learning_rate < 0) throw ConfigError("learning rate must be non-negative");
  if (!std::isfinite(weight_decay) || weight_decay < 0) throw ConfigError("weight decay must be non-negative");
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (batch_size < 2) throw ConfigError("batch size must be at least 2 for a contrastive batch");
  (void)clipose::prompt_preset(prompt_preset);
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"seed", seed},
          {"prompt_preset", prompt_preset},
          {"freeze_logit_scale", freeze_logit_scale},
          {"checkpoint_every_epoch", checkpoint_every_epoch}};
}

nlohmann::json EpochLog::to_json(bool with_timing) const {
  nlohmann::json j = {{"epoch", epoch}, {"mean_loss", mean_loss}, {"batches", batch_losses.size()}};
  j["heldout_top1"] = heldout_top1 ? nlohmann::json(*heldout_top1) : nlohmann::json(nullptr);
  if (with_timing) j["seconds"] = seconds;
  return j;
}

ag::Var contrastive_loss(const ag::Var& logits) {
  require_square(logits.shape());
  const auto targets = diagonal_targets(logits.shape()[0]);
  ag::Var image_side = ag::cross_entropy_mean(logits, targets);
  ag::Var text_side = ag::cross_entropy_mean(ag::transpose(logits), targets);
  return ag::scale(ag::add(image_side, text_side), 0.5);
}

double contrastive_loss(const Tensor& logits) {
  require_square(logits.shape());
  const auto targets = diagonal_targets(logits.rows());
  return 0.5 * (cross_entropy_mean(logits, targets) + cross_entropy_mean(transpose(logits), targets));
}

BatchPlan make_batches(std::span<const std::size_t> labels, std::size_t batch_size, std::uint64_t seed,
                       std::size_t epoch) {
  if (batch_size < 2) throw ContractError("make_batches: batch size must be at least 2");
  Rng rng(derive_seed(derive_seed(seed, "batching"), static_cast<std::uint64_t>(epoch)));

  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  struct Queue {
    std::vector<std::size_t> items;
    std::size_t next = 0;
    std::size_t rank = 0;
    std::size_t remaining() const { return items.size() - next; }
  };
  std::vector<Queue> queues;
  for (auto& [label, items] : by_class) {
    rng.shuffle(items);
    queues.push_back({std::move(items), 0, 0});
  }
  std::vector<std::size_t> order(queues.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  for (std::size_t r = 0; r < order.size(); ++r) queues[order[r]].rank = r;

  auto by_priority = [&](std::size_t a, std::size_t b) {
    if (queues[a].remaining() != queues[b].remaining()) return queues[a].remaining() > queues[b].remaining();
    return queues[a].rank < queues[b].rank;
  };

  BatchPlan plan;
  std::size_t left = labels.size();
  std::vector<std::size_t> active(queues.size());
  while (left > 0) {
    std::vector<std::size_t> batch;
    std::vector<bool> used(queues.size(), false);
    bool distinct = true;
    while (batch.size() < batch_size && left > 0) {
      active.clear();
      for (std::size_t q = 0; q < queues.size(); ++q) {
        if (queues[q].remaining() > 0 && (!distinct || !used[q])) active.push_back(q);
      }
      if (active.empty()) {
        distinct = false;  // every class with supply is already in the batch
        continue;
      }
      std::sort(active.begin(), active.end(), by_priority);
      const std::size_t take = distinct ? std::min(batch_size - batch.size(), active.size()) : 1;
      for (std::size_t i = 0; i < take; ++i) {
        Queue& q = queues[active[i]];
        if (used[active[i]]) ++plan.duplicate_pairs;
        used[active[i]] = true;
        batch.push_back(q.items[q.next++]);
        --left;
      }
    }
    plan.batches.push_back(std::move(batch));
  }
  if (plan.batches.size() > 1 && plan.batches.back().size() == 1) {
    const std::size_t last = plan.batches.back().front();
    plan.batches.pop_back();
    if (std::any_of(plan.batches.back().begin(), plan.batches.back().end(),
                    [&](std::size_t i) { return labels[i] == labels[last]; })) {
      ++plan.duplicate_pairs;
    }
    plan.batches.back().push_back(last);
  }
  return plan;
}

Vocabulary prompt_vocabulary(const Taxonomy& taxonomy) {
  std::vector<std::string> corpus;
  for (const auto& preset : prompt_preset_names()) {
    for (auto& p : class_prompt_texts(taxonomy, prompt_preset(preset))) corpus.push_back(std::move(p));
  }
  return build_vocabulary(corpus);
}

TrainResult fine_tune(ClipModel& model, const Manifest& train, const Taxonomy& taxonomy, const TrainConfig& config,
                      const TrainHooks& hooks) {
  const auto images = load_rasters(train, model.config().image_side);
  const auto labels = train.labels();
  return fine_tune(model, images, labels, taxonomy, config, hooks);
}

TrainResult fine_tune(ClipModel& model, std::span<const Tensor> images, std::span<const std::size_t> labels,
                      const Taxonomy& taxonomy, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (images.size() != labels.size()) throw ContractError("fine_tune: images and labels differ in count");
  if (images.size() < 2) throw ContractError("fine_tune: need at least two training samples");
  if (config.batch_size > images.size()) {
    throw ConfigError("batch size " + std::to_string(config.batch_size) + " exceeds the " +
                      std::to_string(images.size()) + " training samples");
  }
  for (std::size_t l : labels) {
    if (l >= taxonomy.size()) throw ContractError("fine_tune: label " + std::to_string(l) + " outside taxonomy");
  }

  const auto prompts = class_prompt_texts(taxonomy, prompt_preset(config.prompt_preset));
  for (const auto& p : prompts) {
    for (const auto& w : split_words(p)) {
      if (!model.vocab().contains(w)) throw ConfigError("vocabulary lacks prompt token '" + w + "'");
    }
  }
  const auto tokens = tokenize_all(prompts, model.vocab(), model.config().max_text_len);

  model.set_logit_scale_frozen(config.freeze_logit_scale);
  const auto start = Clock::now();
  TrainResult result;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    const BatchPlan plan = make_batches(labels, config.batch_size, config.seed, epoch);
    result.duplicate_pairs += plan.duplicate_pairs;
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t b = 0; b < plan.batches.size(); ++b) {
      const auto& batch = plan.batches[b];
      std::vector<Tensor> batch_images;
      std::vector<TokenSequence> batch_tokens;
      for (std::size_t i : batch) {
        batch_images.push_back(images[i]);
        batch_tokens.push_back(tokens[labels[i]]);
      }
      try {
        const ag::ParamAccess params(model.params());
        ag::Var img = encode_images(params, stack_images(batch_images), model.config());
        ag::Var txt = encode_texts(params, batch_tokens, model.config());
        ag::Var loss = contrastive_loss(similarity_logits(img, txt, params(param_names::kLogitScale)));
        const double value = loss.value().item();
        if (!std::isfinite(value)) throw NumericError("loss is " + std::to_string(value));
        ag::backward(loss);
        optimizer_step(model.params(), config.learning_rate, config.weight_decay);
        log.batch_losses.push_back(value);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b + 1) + ": " + e.what());
      }
    }
    log.mean_loss = std::accumulate(log.batch_losses.begin(), log.batch_losses.end(), 0.0) /
                    static_cast<double>(log.batch_losses.size());
    if (hooks.heldout_top1) log.heldout_top1 = hooks.heldout_top1(model);
    log.seconds = seconds_since(epoch_start);
    if (hooks.log) *hooks.log << log.to_json().dump() << '\n' << std::flush;
    const bool last = epoch == config.epochs;
    if (!hooks.checkpoint.empty() && (last || config.checkpoint_every_epoch)) model.save(hooks.checkpoint);
    result.epochs.push_back(std::move(log));
  }
  result.seconds = seconds_since(start);
  return result;
}

}  // namespace clipose
