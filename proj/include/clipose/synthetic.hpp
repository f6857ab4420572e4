#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "clipose/manifest.hpp"
#include "clipose/tensor.hpp"

namespace clipose {

class Taxonomy;

/// Procedural stick-figure poses: 4 torso orientations × 4 arm placements ×
/// 6 leg placements.
inline constexpr std::size_t kArchetypeCount = 96;
inline constexpr std::string_view kSyntheticPrefix = "synthetic:";

struct SyntheticPoseSpec {
  std::size_t archetype = 0;
  std::uint64_t seed = 0;  // drives joint jitter and background noise
  double noise = 0.0;      // background noise amplitude in [0, 1]
  /// Stroke radius in pixels; 0 picks max(1, side/16).
  double thickness = 0.0;
  friend bool operator==(const SyntheticPoseSpec&, const SyntheticPoseSpec&) = default;
};

bool is_synthetic_source(std::string_view source);
/// `synthetic:<archetype>:<seed>:<noise>[:<thickness>]`
std::string format_synthetic_source(const SyntheticPoseSpec& spec);
/// Throws ConfigError on a malformed spec.
SyntheticPoseSpec parse_synthetic_source(std::string_view source);

/// side×side grayscale raster, values on the k/255 grid so PGM round trips
/// are exact. Pure function of (spec, side).
Tensor render_pose(const SyntheticPoseSpec& spec, std::size_t side);
/// The archetype with no jitter and no noise.
Tensor render_archetype(std::size_t archetype, std::size_t side);

struct SyntheticOptions {
  std::size_t images_per_class = 40;
  std::uint64_t seed = 0;
  double noise = 0.25;
  std::size_t side = 32;
};

struct SyntheticDataset {
  Manifest manifest;
  std::vector<Tensor> rasters;  // parallel to manifest.samples
};

/// `archetypes[c]` is the figure drawn for label c. Throws ConfigError on more
/// labels than archetypes, an out-of-range or repeated archetype, or zero
/// images per class.
SyntheticDataset generate_synthetic_dataset(std::span<const std::size_t> archetypes,
                                            const SyntheticOptions& options);

/// One archetype per class of `classes`: the class's position in `reference`
/// (normally the full 82-class taxonomy), so subsets draw the same figures as
/// the full taxonomy. Classes absent from `reference` take the lowest unused
/// archetypes.
std::vector<std::size_t> archetypes_for(const Taxonomy& classes, const Taxonomy& reference);

}  // namespace clipose
