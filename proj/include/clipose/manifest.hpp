#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace clipose {

struct Sample {
  std::string id;
  /// A raster path (relative paths resolve against the manifest directory) or
  /// a `synthetic:` spec.
  std::string source;
  std::size_t label = 0;  // L3 index
  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Manifest {
  std::vector<Sample> samples;
  std::filesystem::path base_dir;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  std::vector<std::size_t> labels() const;
};

/// Throws ConfigError on duplicate ids or labels outside [0, class_count).
void validate_manifest(const Manifest& manifest, std::size_t class_count);

/// `id<TAB>source<TAB>l3_index` per line; blank lines and `#` comments skipped.
Manifest parse_manifest(std::istream& in, const std::string& source, std::filesystem::path base_dir = {});
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);
std::string manifest_text(const Manifest& manifest);
/// SHA-256 of manifest_text(); independent of base_dir.
std::string manifest_digest(const Manifest& manifest);

std::vector<std::size_t> count_per_class(const Manifest& manifest, std::size_t class_count);

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  std::optional<std::size_t> per_class_cap;

  /// Throws ConfigError unless 0 < fraction < 1 and any cap is positive.
  void validate() const;
};

struct SplitResult {
  Manifest train;
  Manifest test;
};

/// Per class, in ascending label order: seeded shuffle, the first
/// round(fraction·n) go to train (clamped to [1, n-1]), the rest to test. Both
/// halves keep the input order. A class with fewer than two samples is a
/// SplitError; `class_names`, when given, names it. The cap, if any, is applied
/// to the train half afterwards.
SplitResult stratified_split(const Manifest& manifest, const SplitSpec& spec,
                             std::span<const std::string> class_names = {});

/// Keeps at most `cap` samples per class, chosen by seeded shuffle, preserving
/// input order.
Manifest subsample_per_class(const Manifest& manifest, std::size_t cap, std::uint64_t seed);

}  // namespace clipose
