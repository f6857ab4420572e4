#include "clipose/encoders.hpp"

#include <cmath>

#include "clipose/errors.hpp"

namespace clipose {

namespace pn = param_names;

void EncoderConfig::validate() const {
  if (image_side == 0 || patch == 0 || embed_dim == 0 || hidden == 0 || max_text_len == 0) {
    throw ConfigError("encoder config: all sizes must be positive");
  }
  if (image_side % patch != 0) {
    throw ConfigError("encoder config: image side " + std::to_string(image_side) +
                      " is not divisible by patch size " + std::to_string(patch));
  }
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"image_side", image_side}, {"patch", patch},   {"embed_dim", embed_dim},
          {"hidden", hidden},         {"max_text_len", max_text_len}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.image_side = j.at("image_side").get<std::size_t>();
  c.patch = j.at("patch").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.max_text_len = j.at("max_text_len").get<std::size_t>();
  c.validate();
  return c;
}

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.mutable_values()) v = rng.uniform(-bound, bound);
  return t;
}

void add_image_tower_params(ParamStore& store, const EncoderConfig& c, Rng& rng) {
  store.add(pn::kPatchWeight, uniform_init({c.patch_dim(), c.hidden}, c.patch_dim(), rng));
  store.add(pn::kPatchBias, uniform_init({1, c.hidden}, c.patch_dim(), rng));
  store.add(pn::kImageOut, uniform_init({c.hidden, c.embed_dim}, c.hidden, rng));
}

ClipModel::ClipModel(EncoderConfig config, Vocabulary vocab, ParamStore params)
    : config_(config), vocab_(std::move(vocab)), params_(std::move(params)) {
  Parameter& scale = params_.at(pn::kLogitScale);
  scale.clamped = true;
  scale.upper_clamp = kMaxLogitScale;
}

ClipModel ClipModel::init(const EncoderConfig& config, Vocabulary vocab, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ParamStore store;
  add_image_tower_params(store, config, rng);
  // One-hot token input: fan-in of 1.
  store.add(pn::kTokenEmbedding, uniform_init({vocab.size(), config.hidden}, 1, rng));
  store.add(pn::kTextOut, uniform_init({config.hidden, config.embed_dim}, config.hidden, rng));
  store.add(pn::kLogitScale, Tensor::scalar(kInitialLogitScale));
  return ClipModel(config, std::move(vocab), std::move(store));
}

ClipModel ClipModel::from_checkpoint(Checkpoint checkpoint, Vocabulary vocab) {
  const auto& h = checkpoint.header;
  if (!h.contains("model") || h.at("model") != "clip") {
    throw ConfigError("checkpoint does not hold a dual-encoder model");
  }
  EncoderConfig config = EncoderConfig::from_json(h.at("encoder"));
  if (h.at("vocab_size").get<std::size_t>() != vocab.size()) {
    throw ConfigError("vocabulary size does not match checkpoint");
  }
  for (const char* name : {pn::kPatchWeight, pn::kPatchBias, pn::kImageOut, pn::kTokenEmbedding,
                           pn::kTextOut, pn::kLogitScale}) {
    if (!checkpoint.params.contains(name)) throw ConfigError(std::string("checkpoint lacks ") + name);
  }
  return ClipModel(config, std::move(vocab), std::move(checkpoint.params));
}

void ClipModel::set_logit_scale_frozen(bool frozen) { params_.at(pn::kLogitScale).frozen = frozen; }

nlohmann::json ClipModel::header() const {
  return {{"model", "clip"}, {"encoder", config_.to_json()}, {"vocab_size", vocab_.size()}};
}

void ClipModel::save(const std::filesystem::path& checkpoint_path) const {
  save_checkpoint(checkpoint_path, params_, header());
}

Tensor stack_images(std::span<const Tensor> images) {
  if (images.empty()) throw ContractError("stack_images: empty batch");
  const Shape& first = images.front().shape();
  if (first.size() != 2) throw DimensionError("stack_images: images must be H×W, got " + shape_to_string(first));
  std::vector<double> values;
  values.reserve(images.size() * images.front().size());
  for (const auto& img : images) {
    if (img.shape() != first) {
      throw DimensionError("stack_images: mixed image shapes " + shape_to_string(first) + " and " +
                           shape_to_string(img.shape()));
    }
    values.insert(values.end(), img.values().begin(), img.values().end());
  }
  return Tensor({images.size(), first[0], first[1]}, std::move(values));
}

Tensor patchify(const Tensor& batch, const EncoderConfig& c) {
  if (batch.rank() != 3 || batch.dim(1) != c.image_side || batch.dim(2) != c.image_side) {
    throw DimensionError("encode_images: expected N×" + std::to_string(c.image_side) + "×" +
                         std::to_string(c.image_side) + " images, got " + shape_to_string(batch.shape()));
  }
  const std::size_t n = batch.dim(0), side = c.image_side, p = c.patch, grid = side / p;
  std::vector<double> out;
  out.reserve(batch.size());
  const auto v = batch.values();
  for (std::size_t img = 0; img < n; ++img) {
    const double* base = v.data() + img * side * side;
    for (std::size_t gy = 0; gy < grid; ++gy)
      for (std::size_t gx = 0; gx < grid; ++gx)
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x) out.push_back(base[(gy * p + y) * side + gx * p + x]);
  }
  return Tensor({n * c.patches_per_image(), c.patch_dim()}, std::move(out));
}

ag::Var image_tower(const ag::ParamAccess& params, const Tensor& batch, const EncoderConfig& c) {
  ag::Var patches = ag::constant(patchify(batch, c));
  ag::Var hidden = ag::tanh(ag::add_row_bias(ag::matmul(patches, params(pn::kPatchWeight)),
                                             params(pn::kPatchBias)));
  const std::size_t per = c.patches_per_image();
  ag::Var pooled = ag::weighted_group_sum(
      hidden, per, std::vector<double>(hidden.value().rows(), 1.0 / static_cast<double>(per)));
  return ag::matmul(pooled, params(pn::kImageOut));
}

ag::Var encode_images(const ag::ParamAccess& params, const Tensor& batch, const EncoderConfig& c) {
  return ag::l2_normalize_rows(image_tower(params, batch, c));
}

ag::Var encode_texts(const ag::ParamAccess& params, std::span<const TokenSequence> tokens,
                     const EncoderConfig& c) {
  if (tokens.empty()) throw ContractError("encode_texts: no prompts");
  const std::size_t len = tokens.front().ids.size();
  if (len != c.max_text_len) {
    throw DimensionError("encode_texts: sequences of length " + std::to_string(len) +
                         ", config expects " + std::to_string(c.max_text_len));
  }
  std::vector<std::size_t> ids;
  std::vector<double> weights;
  ids.reserve(tokens.size() * len);
  weights.reserve(tokens.size() * len);
  for (const auto& seq : tokens) {
    if (seq.ids.size() != len) throw DimensionError("encode_texts: token sequences differ in length");
    const std::size_t real = seq.length();
    for (std::size_t i = 0; i < len; ++i) {
      ids.push_back(seq.ids[i]);
      weights.push_back(seq.mask[i] ? 1.0 / static_cast<double>(real) : 0.0);
    }
  }
  ag::Var embedded = ag::gather_rows(params(pn::kTokenEmbedding), std::move(ids));
  ag::Var pooled = ag::weighted_group_sum(embedded, len, std::move(weights));
  return ag::l2_normalize_rows(ag::matmul(pooled, params(pn::kTextOut)));
}

std::vector<TokenSequence> tokenize_all(std::span<const std::string> prompts, const Vocabulary& vocab,
                                        std::size_t max_len) {
  std::vector<TokenSequence> out;
  out.reserve(prompts.size());
  for (const auto& p : prompts) out.push_back(tokenize(p, vocab, max_len));
  return out;
}

ag::Var similarity_logits(const ag::Var& image_emb, const ag::Var& text_emb, const ag::Var& logit_scale) {
  if (image_emb.value().rank() != 2 || text_emb.value().rank() != 2 ||
      image_emb.value().dim(1) != text_emb.value().dim(1)) {
    throw DimensionError("similarity_logits: embedding widths differ: " +
                         shape_to_string(image_emb.shape()) + " vs " + shape_to_string(text_emb.shape()));
  }
  return ag::mul_exp_scalar(ag::matmul_nt(image_emb, text_emb), logit_scale);
}

Tensor similarity_logits(const Tensor& image_emb, const Tensor& text_emb, double logit_scale) {
  return similarity_logits(ag::view(image_emb), ag::view(text_emb),
                           ag::constant(Tensor::scalar(logit_scale)))
      .value();
}

Tensor embed_images(const ClipModel& model, const Tensor& batch) {
  return encode_images(ag::ParamAccess(model.params()), batch, model.config()).value();
}

Tensor embed_texts(const ClipModel& model, std::span<const std::string> prompts) {
  const auto tokens = tokenize_all(prompts, model.vocab(), model.config().max_text_len);
  return encode_texts(ag::ParamAccess(model.params()), tokens, model.config()).value();
}

}  // namespace clipose
