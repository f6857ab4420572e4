#include "clipose/prompts.hpp"

#include <set>

#include "clipose/errors.hpp"
#include "clipose/taxonomy.hpp"
#include "clipose/vocabulary.hpp"

namespace clipose {

namespace {

std::size_t count_placeholders(std::string_view text) {
  std::size_t n = 0;
  for (auto pos = text.find(kCategoryPlaceholder); pos != std::string_view::npos;
       pos = text.find(kCategoryPlaceholder, pos + kCategoryPlaceholder.size())) {
    ++n;
  }
  return n;
}

struct Preset {
  std::string_view name;
  std::string_view text;
  PromptMode mode;
};

constexpr Preset kPresets[] = {
    {"person-doing", "Image of a person doing the yoga pose <category>", PromptMode::kLiteralName},
    {"yoga-pose", "Yoga pose <category>", PromptMode::kLiteralName},
    {"category", "<category>", PromptMode::kLiteralName},
    {"numeric", "<category>", PromptMode::kNumericId},
};

}  // namespace

PromptTemplate::PromptTemplate(std::string text, PromptMode mode) : text_(std::move(text)), mode_(mode) {
  const std::size_t n = count_placeholders(text_);
  if (n != 1) {
    throw ConfigError("prompt template must contain exactly one <category> placeholder, found " +
                      std::to_string(n) + ": \"" + text_ + "\"");
  }
}

PromptTemplate prompt_preset(std::string_view name) {
  for (const auto& p : kPresets) {
    if (p.name == name) return PromptTemplate(std::string(p.text), p.mode);
  }
  throw ConfigError("unknown prompt preset: " + std::string(name));
}

std::vector<std::string> prompt_preset_names() {
  std::vector<std::string> out;
  for (const auto& p : kPresets) out.emplace_back(p.name);
  return out;
}

std::string render_prompt(const PromptTemplate& tmpl, std::string_view class_name, std::size_t class_index) {
  if (class_name.empty()) throw ContractError("render_prompt: empty class name");
  std::string out = tmpl.text();
  const auto pos = out.find(kCategoryPlaceholder);
  const std::string value =
      tmpl.mode() == PromptMode::kNumericId ? std::to_string(class_index) : std::string(class_name);
  out.replace(pos, kCategoryPlaceholder.size(), value);
  return out;
}

std::vector<std::pair<std::size_t, std::string>> build_class_prompts(const Taxonomy& taxonomy,
                                                                     const PromptTemplate& tmpl) {
  if (tmpl.mode() == PromptMode::kLiteralName) {
    // Names are compared after tokenization: "Tortoise" and "tortoise!" read
    // identically to the text encoder.
    std::set<std::vector<std::string>> seen;
    for (const auto& c : taxonomy.classes()) {
      if (!seen.insert(split_words(c.name)).second) {
        throw AmbiguityError("class name '" + c.name + "' duplicates another after tokenization");
      }
    }
  }
  std::vector<std::pair<std::size_t, std::string>> out;
  out.reserve(taxonomy.size());
  for (std::size_t i = 0; i < taxonomy.size(); ++i) {
    out.emplace_back(i, render_prompt(tmpl, taxonomy.cls(i).name, i));
  }
  return out;
}

std::vector<std::string> class_prompt_texts(const Taxonomy& taxonomy, const PromptTemplate& tmpl) {
  std::vector<std::string> out;
  for (auto& [index, text] : build_class_prompts(taxonomy, tmpl)) out.push_back(std::move(text));
  return out;
}

}  // namespace clipose
