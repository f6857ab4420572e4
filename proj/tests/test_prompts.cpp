#include <set>
#include <sstream>

#include "clipose/errors.hpp"
#include "clipose/prompts.hpp"
#include "clipose/taxonomy.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace clipose;
namespace t = clipose::testing;

TEST_CASE("default caption") {
  const PromptTemplate tmpl("Image of a person doing the yoga pose <category>");
  CHECK(render_prompt(tmpl, "Balasana", 0) == "Image of a person doing the yoga pose Balasana");
  CHECK(render_prompt(prompt_preset(kDefaultPromptPreset), "Balasana", 3) ==
        "Image of a person doing the yoga pose Balasana");
}

TEST_CASE("short caption") {
  CHECK(render_prompt(PromptTemplate("Yoga pose <category>"), "Utkatasana", 5) == "Yoga pose Utkatasana");
  CHECK(render_prompt(prompt_preset("yoga-pose"), "Utkatasana", 5) == "Yoga pose Utkatasana");
}

TEST_CASE("numeric mode renders the index") {
  CHECK(render_prompt(PromptTemplate("<category>", PromptMode::kNumericId), "Balasana", 0) == "0");
  CHECK(render_prompt(prompt_preset("numeric"), "Balasana", 41) == "41");
}

TEST_CASE("templates need exactly one placeholder") {
  CHECK_THROWS_AS(PromptTemplate("a photo of a pose"), ConfigError);
  CHECK_THROWS_AS(PromptTemplate("<category> and <category>"), ConfigError);
  CHECK_THROWS_AS(prompt_preset("no-such-preset"), ConfigError);
}

TEST_CASE("every preset is constructible") {
  CHECK(prompt_preset_names().size() == 4);
  for (const auto& name : prompt_preset_names()) CHECK_NOTHROW(prompt_preset(name));
}

TEST_CASE("six-class subset gives six distinct prompts") {
  const auto prompts = class_prompt_texts(t::six_taxonomy(), prompt_preset(kDefaultPromptPreset));
  CHECK(prompts.size() == 6);
  CHECK(std::set<std::string>(prompts.begin(), prompts.end()).size() == 6);
}

TEST_CASE("full taxonomy gives 82 prompts in taxonomy order") {
  const Taxonomy full = t::full_taxonomy();
  for (const auto& name : prompt_preset_names()) {
    const auto pairs = build_class_prompts(full, prompt_preset(name));
    REQUIRE(pairs.size() == 82);
    std::set<std::string> distinct;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      CHECK(pairs[i].first == i);
      distinct.insert(pairs[i].second);
    }
    CHECK(distinct.size() == 82);
    CHECK(pairs == build_class_prompts(full, prompt_preset(name)));
  }
}

TEST_CASE("numeric prompts are 0..81") {
  const auto prompts = class_prompt_texts(t::full_taxonomy(), prompt_preset("numeric"));
  for (std::size_t i = 0; i < prompts.size(); ++i) CHECK(prompts[i] == std::to_string(i));
}

TEST_CASE("names equal after tokenization are ambiguous in literal mode") {
  std::istringstream csv("l3_name,l2_name,l1_name\nHalf-Moon,A,X\nhalf-moon!,B,X\n");
  const Taxonomy tax = parse_taxonomy(csv, "test");
  CHECK_THROWS_AS(build_class_prompts(tax, prompt_preset("yoga-pose")), AmbiguityError);
  CHECK(build_class_prompts(tax, prompt_preset("numeric")).size() == 2);
}
