#pragma once

#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace clipose {

enum class Level { kL1, kL2, kL3 };

const char* level_name(Level level);

struct TaxonomyClass {
  std::string name;  // L3 pose name
  std::string l2;    // variation superclass; identified together with its L1
  std::string l1;    // body-position superclass
  friend bool operator==(const TaxonomyClass&, const TaxonomyClass&) = default;
};

/// Three-level pose hierarchy. L2 superclasses are identified by the pair
/// (L1, L2 name) because names such as "Up-facing" recur under different
/// body positions. Orderings of L2 and L1 follow first appearance.
class Taxonomy {
 public:
  /// Validates: unique non-empty L3 names, non-empty superclass names.
  static Taxonomy from_classes(std::vector<TaxonomyClass> classes);

  std::size_t size() const noexcept { return classes_.size(); }
  std::size_t l2_count() const noexcept { return l2_names_.size(); }
  std::size_t l1_count() const noexcept { return l1_names_.size(); }
  std::size_t count(Level level) const;

  const std::vector<TaxonomyClass>& classes() const noexcept { return classes_; }
  const TaxonomyClass& cls(std::size_t l3) const { return classes_.at(l3); }
  std::optional<std::size_t> find(std::string_view name) const;

  std::size_t l2_of(std::size_t l3) const { return l2_of_.at(l3); }
  std::size_t l1_of(std::size_t l3) const { return l1_of_.at(l3); }
  std::size_t l1_of_l2(std::size_t l2) const { return l1_of_l2_.at(l2); }
  /// The L3 class rolled up to `level`.
  std::size_t index_at(Level level, std::size_t l3) const;

  /// "L1/L2" display name of an L2 superclass.
  const std::string& l2_name(std::size_t l2) const { return l2_names_.at(l2); }
  const std::string& l1_name(std::size_t l1) const { return l1_names_.at(l1); }
  /// L3 indices inside an L1 superclass, in taxonomy order.
  std::vector<std::size_t> members_of_l1(std::size_t l1) const;

  /// The listed classes, in the given order.
  Taxonomy subset(std::span<const std::string> names) const;

  friend bool operator==(const Taxonomy& a, const Taxonomy& b) { return a.classes_ == b.classes_; }

 private:
  std::vector<TaxonomyClass> classes_;
  std::vector<std::string> l2_names_;
  std::vector<std::string> l1_names_;
  std::vector<std::size_t> l2_of_;
  std::vector<std::size_t> l1_of_;
  std::vector<std::size_t> l1_of_l2_;
};

/// CSV with header `l3_name,l2_name,l1_name`, one row per L3 class. Errors
/// carry the line number.
Taxonomy parse_taxonomy(std::istream& in, const std::string& source);
Taxonomy load_taxonomy(const std::filesystem::path& path);
void save_taxonomy(const std::filesystem::path& path, const Taxonomy& taxonomy);

/// The six poses of the paper-style small subsets, in their customary order.
std::vector<std::string> six_pose_subset_names();

}  // namespace clipose
