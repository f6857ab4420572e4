#include "clipose/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "clipose/digest.hpp"
#include "clipose/errors.hpp"
#include "clipose/rng.hpp"

namespace clipose {

std::vector<std::size_t> Manifest::labels() const {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

void validate_manifest(const Manifest& manifest, std::size_t class_count) {
  std::set<std::string> ids;
  for (const auto& s : manifest.samples) {
    if (s.label >= class_count) {
      throw ConfigError("manifest: sample '" + s.id + "' has label " + std::to_string(s.label) +
                        " but the taxonomy has " + std::to_string(class_count) + " classes");
    }
    if (!ids.insert(s.id).second) throw ConfigError("manifest: duplicate sample id '" + s.id + "'");
  }
}

Manifest parse_manifest(std::istream& in, const std::string& source, std::filesystem::path base_dir) {
  Manifest m;
  m.base_dir = std::move(base_dir);
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::istringstream ss(line);
    for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
      throw ParseError(source, lineno, "expected id<TAB>source<TAB>label");
    }
    std::size_t label = 0;
    std::size_t used = 0;
    try {
      label = std::stoul(fields[2], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != fields[2].size()) throw ParseError(source, lineno, "bad label '" + fields[2] + "'");
    if (!ids.insert(fields[0]).second) throw ParseError(source, lineno, "duplicate id '" + fields[0] + "'");
    m.samples.push_back({fields[0], fields[1], label});
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  return parse_manifest(in, path.string(), path.parent_path());
}

std::string manifest_text(const Manifest& manifest) {
  std::string out;
  for (const auto& s : manifest.samples) {
    out += s.id + '\t' + s.source + '\t' + std::to_string(s.label) + '\n';
  }
  return out;
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << manifest_text(manifest);
  if (!out) throw IoError("failed writing manifest " + path.string());
}

std::string manifest_digest(const Manifest& manifest) { return sha256_hex(manifest_text(manifest)); }

std::vector<std::size_t> count_per_class(const Manifest& manifest, std::size_t class_count) {
  std::vector<std::size_t> counts(class_count, 0);
  for (const auto& s : manifest.samples) counts.at(s.label) += 1;
  return counts;
}

void SplitSpec::validate() const {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("split: train fraction must lie strictly between 0 and 1, got " +
                      std::to_string(train_fraction));
  }
  if (per_class_cap && *per_class_cap == 0) throw ConfigError("split: per-class cap must be positive");
}

namespace {

std::map<std::size_t, std::vector<std::size_t>> positions_by_class(const Manifest& m) {
  std::map<std::size_t, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < m.samples.size(); ++i) out[m.samples[i].label].push_back(i);
  return out;
}

Manifest select(const Manifest& m, const std::vector<bool>& keep) {
  Manifest out;
  out.base_dir = m.base_dir;
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    if (keep[i]) out.samples.push_back(m.samples[i]);
  }
  return out;
}

}  // namespace

SplitResult stratified_split(const Manifest& manifest, const SplitSpec& spec,
                             std::span<const std::string> class_names) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<bool> in_train(manifest.size(), false);
  for (auto& [label, positions] : positions_by_class(manifest)) {
    const std::size_t n = positions.size();
    if (n < 2) {
      std::string name = label < class_names.size() ? " (" + class_names[label] + ")" : "";
      throw SplitError("class " + std::to_string(label) + name + " has " + std::to_string(n) +
                       " sample; a split needs at least 2");
    }
    rng.shuffle(positions);
    auto k = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
    k = std::clamp<std::size_t>(k, 1, n - 1);
    for (std::size_t j = 0; j < k; ++j) in_train[positions[j]] = true;
  }
  std::vector<bool> in_test(in_train.size());
  for (std::size_t i = 0; i < in_train.size(); ++i) in_test[i] = !in_train[i];
  SplitResult result{select(manifest, in_train), select(manifest, in_test)};
  if (spec.per_class_cap) {
    result.train = subsample_per_class(result.train, *spec.per_class_cap, derive_seed(spec.seed, "cap"));
  }
  return result;
}

Manifest subsample_per_class(const Manifest& manifest, std::size_t cap, std::uint64_t seed) {
  if (cap == 0) throw ContractError("subsample_per_class: cap must be at least 1");
  Rng rng(seed);
  std::vector<bool> keep(manifest.size(), false);
  for (auto& [label, positions] : positions_by_class(manifest)) {
    if (positions.size() > cap) rng.shuffle(positions);
    for (std::size_t j = 0; j < std::min(cap, positions.size()); ++j) keep[positions[j]] = true;
  }
  return select(manifest, keep);
}

}  // namespace clipose
