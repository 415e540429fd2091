#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace pa3 {

/// Big Five dominant trait.
enum class Trait : std::size_t {
  kOpenness = 0,
  kConscientiousness = 1,
  kExtraversion = 2,
  kAgreeableness = 3,
  kNeuroticism = 4,
};

inline constexpr std::size_t kTraitCount = 5;
inline constexpr std::array<Trait, kTraitCount> kAllTraits{Trait::kOpenness, Trait::kConscientiousness,
                                                           Trait::kExtraversion, Trait::kAgreeableness,
                                                           Trait::kNeuroticism};

constexpr std::size_t index_of(Trait t) { return static_cast<std::size_t>(t); }

/// "OPN", "CON", "EXT", "AGR", "NEU".
std::string_view trait_tag(Trait trait);
/// Bare trait word, e.g. "openness".
std::string_view trait_word(Trait trait);
/// Parses a tag ("OPN") or a bare trait word; nullopt when unrecognized.
std::optional<Trait> parse_trait(std::string_view text);

struct PersonaDefinition {
  Trait trait;
  std::string template_text;
};

/// The fixed templatic definition for a trait.
PersonaDefinition trait_to_template(Trait trait);

/// Verifies that a registry asset (one "TAG<TAB>text" line per trait) matches
/// the built-in definitions byte for byte. Throws DataError on mismatch.
void verify_template_registry(const std::filesystem::path& path);

}  // namespace pa3
