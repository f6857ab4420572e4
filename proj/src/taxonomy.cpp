#include "clipose/taxonomy.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "clipose/errors.hpp"

namespace clipose {

namespace {

constexpr std::string_view kHeader = "l3_name,l2_name,l1_name";

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

const char* level_name(Level level) {
  switch (level) {
    case Level::kL1: return "L1";
    case Level::kL2: return "L2";
    case Level::kL3: return "L3";
  }
  return "?";
}

Taxonomy Taxonomy::from_classes(std::vector<TaxonomyClass> classes) {
  Taxonomy t;
  std::map<std::string, std::size_t> l3_seen, l2_index, l1_index;
  for (const auto& c : classes) {
    if (c.name.empty()) throw ConfigError("taxonomy: empty class name");
    if (c.l2.empty() || c.l1.empty()) throw ConfigError("taxonomy: class '" + c.name + "' has a dangling superclass");
    if (!l3_seen.emplace(c.name, l3_seen.size()).second) {
      throw ConfigError("taxonomy: duplicate class '" + c.name + "'");
    }
    auto [l1it, new_l1] = l1_index.emplace(c.l1, t.l1_names_.size());
    if (new_l1) t.l1_names_.push_back(c.l1);
    const std::string l2_key = c.l1 + "/" + c.l2;
    auto [l2it, new_l2] = l2_index.emplace(l2_key, t.l2_names_.size());
    if (new_l2) {
      t.l2_names_.push_back(l2_key);
      t.l1_of_l2_.push_back(l1it->second);
    }
    t.l2_of_.push_back(l2it->second);
    t.l1_of_.push_back(l1it->second);
  }
  if (classes.empty()) throw ConfigError("taxonomy: no classes");
  t.classes_ = std::move(classes);
  return t;
}

std::size_t Taxonomy::count(Level level) const {
  switch (level) {
    case Level::kL1: return l1_count();
    case Level::kL2: return l2_count();
    case Level::kL3: return size();
  }
  return 0;
}

std::optional<std::size_t> Taxonomy::find(std::string_view name) const {
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    if (classes_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t Taxonomy::index_at(Level level, std::size_t l3) const {
  switch (level) {
    case Level::kL1: return l1_of(l3);
    case Level::kL2: return l2_of(l3);
    case Level::kL3: return l3;
  }
  return l3;
}

std::vector<std::size_t> Taxonomy::members_of_l1(std::size_t l1) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (l1_of_[i] == l1) out.push_back(i);
  }
  return out;
}

Taxonomy Taxonomy::subset(std::span<const std::string> names) const {
  std::vector<TaxonomyClass> picked;
  for (const auto& n : names) {
    auto idx = find(n);
    if (!idx) throw ConfigError("taxonomy subset: unknown class '" + n + "'");
    picked.push_back(classes_[*idx]);
  }
  return from_classes(std::move(picked));
}

Taxonomy parse_taxonomy(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  std::vector<TaxonomyClass> classes;
  std::map<std::string, std::size_t> first_line;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    if (!header_seen) {
      if (stripped != kHeader) {
        throw ParseError(source, lineno, "expected header '" + std::string(kHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    const auto fields = split_csv(stripped);
    if (fields.size() != 3) {
      throw ParseError(source, lineno, "malformed row: expected 3 fields, got " + std::to_string(fields.size()));
    }
    if (fields[0].empty()) throw ParseError(source, lineno, "empty class name");
    if (fields[1].empty() || fields[2].empty()) {
      throw ParseError(source, lineno, "dangling superclass for '" + fields[0] + "'");
    }
    auto [it, inserted] = first_line.emplace(fields[0], lineno);
    if (!inserted) {
      throw ParseError(source, lineno,
                       "class '" + fields[0] + "' already defined on line " + std::to_string(it->second));
    }
    classes.push_back({fields[0], fields[1], fields[2]});
  }
  if (!header_seen) throw ParseError(source, lineno + 1, "missing header");
  if (classes.empty()) throw ParseError(source, lineno + 1, "no classes");
  return Taxonomy::from_classes(std::move(classes));
}

Taxonomy load_taxonomy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read taxonomy " + path.string());
  return parse_taxonomy(in, path.string());
}

void save_taxonomy(const std::filesystem::path& path, const Taxonomy& taxonomy) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write taxonomy " + path.string());
  out << kHeader << '\n';
  for (const auto& c : taxonomy.classes()) out << c.name << ',' << c.l2 << ',' << c.l1 << '\n';
  if (!out) throw IoError("failed writing taxonomy " + path.string());
}

std::vector<std::string> six_pose_subset_names() {
  return {"Balasana", "Dhanurasana", "Marjaryasana", "Salamba Sarvangasana", "Ustrasana", "Utkatasana"};
}

}  // namespace clipose
