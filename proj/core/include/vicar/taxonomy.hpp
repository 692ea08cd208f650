#pragma once

// Closed utterance taxonomies: nine tutor categories, five learner
// categories, and four teaching strategies.

#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "vicar/model.hpp"

namespace vicar {

std::span<const Category> categories_for(Speaker speaker);
std::span<const TeachingStrategy> all_strategies();

bool category_allowed(Speaker speaker, Category category);

std::string_view to_string(Speaker speaker);
std::string_view to_string(Category category);
std::string_view to_string(TeachingStrategy strategy);
std::string_view to_string(Provenance provenance);

// Lenient parsers: case-insensitive, ignore spaces, hyphens and underscores,
// so "Self-monitoring", "self_monitoring" and "SelfMonitoring" all match.
std::optional<Speaker> parse_speaker(std::string_view text);
std::optional<Category> parse_category(std::string_view text);
std::optional<TeachingStrategy> parse_strategy(std::string_view text);
std::optional<Provenance> parse_provenance(std::string_view text);

// Human-readable definition used when rendering prompts.
std::string_view describe(Category category, Speaker speaker);
std::string_view describe(TeachingStrategy strategy);

}  // namespace vicar
