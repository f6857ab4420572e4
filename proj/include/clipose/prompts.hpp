#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace clipose {

class Taxonomy;

inline constexpr std::string_view kCategoryPlaceholder = "<category>";

enum class PromptMode { kLiteralName, kNumericId };

/// A caption template with exactly one `<category>` placeholder.
class PromptTemplate {
 public:
  /// Throws ConfigError unless the placeholder occurs exactly once.
  explicit PromptTemplate(std::string text, PromptMode mode = PromptMode::kLiteralName);

  const std::string& text() const noexcept { return text_; }
  PromptMode mode() const noexcept { return mode_; }

 private:
  std::string text_;
  PromptMode mode_;
};

/// Named caption syntaxes:
///   "person-doing"  Image of a person doing the yoga pose <category>   (default)
///   "yoga-pose"     Yoga pose <category>
///   "category"      <category>
///   "numeric"       <category>, replaced by the class index
PromptTemplate prompt_preset(std::string_view name);
std::vector<std::string> prompt_preset_names();
inline constexpr std::string_view kDefaultPromptPreset = "person-doing";

std::string render_prompt(const PromptTemplate& tmpl, std::string_view class_name, std::size_t class_index);

/// One prompt per L3 class in taxonomy order. Literal mode rejects duplicate
/// class names with AmbiguityError.
std::vector<std::pair<std::size_t, std::string>> build_class_prompts(const Taxonomy& taxonomy,
                                                                     const PromptTemplate& tmpl);

/// The prompt strings alone, indexed by class.
std::vector<std::string> class_prompt_texts(const Taxonomy& taxonomy, const PromptTemplate& tmpl);

}  // namespace clipose
