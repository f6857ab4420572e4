#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "clipose/autograd.hpp"
#include "clipose/checkpoint.hpp"
#include "clipose/rng.hpp"
#include "clipose/vocabulary.hpp"

namespace clipose {

struct EncoderConfig {
  std::size_t image_side = 32;
  std::size_t patch = 8;
  std::size_t embed_dim = 64;
  std::size_t hidden = 128;
  std::size_t max_text_len = 16;

  /// Throws ConfigError on a non-dividing patch size or zero widths.
  void validate() const;
  std::size_t patches_per_image() const { return (image_side / patch) * (image_side / patch); }
  std::size_t patch_dim() const { return patch * patch; }

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

namespace param_names {
inline constexpr const char* kPatchWeight = "image.patch.weight";    // patch_dim × hidden
inline constexpr const char* kPatchBias = "image.patch.bias";        // 1 × hidden
inline constexpr const char* kImageOut = "image.out.weight";         // hidden × d
inline constexpr const char* kTokenEmbedding = "text.embedding";     // vocab × hidden
inline constexpr const char* kTextOut = "text.out.weight";           // hidden × d
inline constexpr const char* kLogitScale = "logit_scale";            // 1, stored as log
}  // namespace param_names

/// ln(1/0.07), the usual CLIP starting temperature.
inline constexpr double kInitialLogitScale = 2.6592600369327779;
/// The largest double below ln(100). ln(100) itself rounds up, and its exp
/// lands a few ulps above 100.
inline constexpr double kMaxLogitScale = 4.605170185988091;

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] from a fixed seed.
Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng);

/// Adds the image tower parameters (patch projection, bias, output projection).
void add_image_tower_params(ParamStore& store, const EncoderConfig& config, Rng& rng);

/// The dual encoder: configuration, vocabulary and every learnable tensor.
class ClipModel {
 public:
  static ClipModel init(const EncoderConfig& config, Vocabulary vocab, std::uint64_t seed);
  /// Rebuilds a model from a checkpoint written by save(); the vocabulary is
  /// persisted separately.
  static ClipModel from_checkpoint(Checkpoint checkpoint, Vocabulary vocab);

  const EncoderConfig& config() const noexcept { return config_; }
  const Vocabulary& vocab() const noexcept { return vocab_; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }
  double logit_scale() const { return params_.at(param_names::kLogitScale).value.item(); }
  void set_logit_scale_frozen(bool frozen);

  nlohmann::json header() const;
  void save(const std::filesystem::path& checkpoint_path) const;

 private:
  ClipModel(EncoderConfig config, Vocabulary vocab, ParamStore params);
  EncoderConfig config_;
  Vocabulary vocab_;
  ParamStore params_;
};

/// Stacks H×W images into an N×H×W batch.
Tensor stack_images(std::span<const Tensor> images);

/// Cuts an N×side×side batch into (N·P)×(patch²) rows, patches in raster
/// order within each image.
Tensor patchify(const Tensor& batch, const EncoderConfig& config);

/// Patch projection, tanh, mean-pool over patches, projection to d (not normalized).
ag::Var image_tower(const ag::ParamAccess& params, const Tensor& batch, const EncoderConfig& config);

/// Image tower followed by row L2 normalization: N×d unit rows.
ag::Var encode_images(const ag::ParamAccess& params, const Tensor& batch, const EncoderConfig& config);

/// Token embedding, mean-pool over non-pad positions, projection, L2
/// normalization. An all-pad sequence yields a zero row.
ag::Var encode_texts(const ag::ParamAccess& params, std::span<const TokenSequence> tokens,
                     const EncoderConfig& config);

std::vector<TokenSequence> tokenize_all(std::span<const std::string> prompts, const Vocabulary& vocab,
                                        std::size_t max_len);

/// exp(logit_scale) · image_emb · text_embᵀ.
ag::Var similarity_logits(const ag::Var& image_emb, const ag::Var& text_emb, const ag::Var& logit_scale);
Tensor similarity_logits(const Tensor& image_emb, const Tensor& text_emb, double logit_scale);

/// Read-only conveniences over a model.
Tensor embed_images(const ClipModel& model, const Tensor& batch);
Tensor embed_texts(const ClipModel& model, std::span<const std::string> prompts);

}  // namespace clipose
