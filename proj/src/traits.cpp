#include "pa3/traits.hpp"

#include <fstream>
#include <sstream>

#include "pa3/errors.hpp"

namespace pa3 {

namespace {

constexpr std::array<std::string_view, kTraitCount> kTags{"OPN", "CON", "EXT", "AGR", "NEU"};
constexpr std::array<std::string_view, kTraitCount> kWords{"openness", "conscientiousness", "extraversion",
                                                           "agreeableness", "neuroticism"};
constexpr std::array<std::string_view, kTraitCount> kTemplates{
    "The speaker has high openness trait. They embrace new ideas, are curious about the world, and are often "
    "drawn to creative and unconventional pursuits.",
    "The speaker has conscientiousness trait. They are reliable, organized, and detail-oriented, demonstrating a "
    "strong work ethic and a commitment to achieving their goals.",
    "The speaker has extraversion trait. They thrive in social settings, energized by interactions with others, and "
    "enjoy being at the center of activities.",
    "The speaker has agreeableness trait. They prioritize cooperation, are empathetic, and often go out of their way "
    "to maintain harmonious relationships and help others.",
    "The speaker has high neuroticism trait. They have a greater tendency for emotional instability, anxiety, and a "
    "propensity to experience negative emotions such as fear, sadness, and anger.",
};

}  // namespace

std::string_view trait_tag(Trait trait) { return kTags.at(index_of(trait)); }
std::string_view trait_word(Trait trait) { return kWords.at(index_of(trait)); }

std::optional<Trait> parse_trait(std::string_view text) {
  for (std::size_t i = 0; i < kTraitCount; ++i) {
    if (text == kTags[i] || text == kWords[i]) return static_cast<Trait>(i);
  }
  return std::nullopt;
}

PersonaDefinition trait_to_template(Trait trait) {
  return {trait, std::string(kTemplates.at(index_of(trait)))};
}

void verify_template_registry(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open template registry " + path.string());
  std::string line;
  std::size_t count = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("registry line without tab: " + line);
    const auto trait = parse_trait(std::string_view(line).substr(0, tab));
    if (!trait || trait_tag(*trait) != std::string_view(line).substr(0, tab)) {
      throw DataError("registry has unknown trait tag in: " + line);
    }
    if (std::string_view(line).substr(tab + 1) != kTemplates[index_of(*trait)]) {
      throw DataError("registry text for " + std::string(trait_tag(*trait)) + " differs from the built-in template");
    }
    ++count;
  }
  if (count != kTraitCount) throw DataError("registry has " + std::to_string(count) + " entries, expected 5");
}

}  // namespace pa3
