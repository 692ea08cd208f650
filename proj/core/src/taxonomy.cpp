#include "vicar/taxonomy.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <utility>

namespace vicar {
namespace {

constexpr std::array kTutorCategories = {
    Category::SelfMonitoring, Category::Lecturing,   Category::Demonstrating,
    Category::Questioning,    Category::OffTopic,    Category::Summarizing,
    Category::Answering,      Category::Scaffolding, Category::Diagnosing,
};

constexpr std::array kLearnerCategories = {
    Category::Questioning, Category::Answering, Category::Reflecting,
    Category::Explanation, Category::OffTopic,
};

constexpr std::array kStrategies = {
    TeachingStrategy::CognitiveConflict,
    TeachingStrategy::MetacognitivePrompting,
    TeachingStrategy::CognitivePrompting,
    TeachingStrategy::SpontaneousDeepQuestion,
};

constexpr std::array kAllCategories = {
    Category::SelfMonitoring, Category::Lecturing,   Category::Demonstrating,
    Category::Questioning,    Category::OffTopic,    Category::Summarizing,
    Category::Answering,      Category::Scaffolding, Category::Diagnosing,
    Category::Reflecting,     Category::Explanation,
};

std::string squash(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c) || ch == '-' || ch == '_') continue;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

template <typename Enum, std::size_t N>
std::optional<Enum> parse_in(std::string_view text, const std::array<Enum, N>& values) {
  const std::string key = squash(text);
  for (Enum v : values) {
    if (squash(to_string(v)) == key) return v;
  }
  return std::nullopt;
}

}  // namespace

std::span<const Category> categories_for(Speaker speaker) {
  if (speaker == Speaker::Tutor) return kTutorCategories;
  return kLearnerCategories;
}

std::span<const TeachingStrategy> all_strategies() { return kStrategies; }

bool category_allowed(Speaker speaker, Category category) {
  auto allowed = categories_for(speaker);
  return std::find(allowed.begin(), allowed.end(), category) != allowed.end();
}

std::string_view to_string(Speaker speaker) {
  return speaker == Speaker::Tutor ? "Tutor" : "Learner";
}

std::string_view to_string(Category category) {
  switch (category) {
    case Category::SelfMonitoring: return "SelfMonitoring";
    case Category::Lecturing: return "Lecturing";
    case Category::Demonstrating: return "Demonstrating";
    case Category::Questioning: return "Questioning";
    case Category::OffTopic: return "OffTopic";
    case Category::Summarizing: return "Summarizing";
    case Category::Answering: return "Answering";
    case Category::Scaffolding: return "Scaffolding";
    case Category::Diagnosing: return "Diagnosing";
    case Category::Reflecting: return "Reflecting";
    case Category::Explanation: return "Explanation";
  }
  return "?";
}

std::string_view to_string(TeachingStrategy strategy) {
  switch (strategy) {
    case TeachingStrategy::CognitiveConflict: return "CognitiveConflict";
    case TeachingStrategy::MetacognitivePrompting: return "MetacognitivePrompting";
    case TeachingStrategy::CognitivePrompting: return "CognitivePrompting";
    case TeachingStrategy::SpontaneousDeepQuestion: return "SpontaneousDeepQuestion";
  }
  return "?";
}

std::string_view to_string(Provenance provenance) {
  return provenance == Provenance::Generated ? "generated" : "refined";
}

std::optional<Speaker> parse_speaker(std::string_view text) {
  const std::string key = squash(text);
  if (key == "tutor") return Speaker::Tutor;
  if (key == "learner") return Speaker::Learner;
  return std::nullopt;
}

std::optional<Category> parse_category(std::string_view text) {
  return parse_in(text, kAllCategories);
}

std::optional<TeachingStrategy> parse_strategy(std::string_view text) {
  if (auto s = parse_in(text, kStrategies)) return s;
  // Long form of the learner-initiated strategy.
  if (squash(text) == "spontaneousdeeplevelreasoningquestion") {
    return TeachingStrategy::SpontaneousDeepQuestion;
  }
  return std::nullopt;
}

std::optional<Provenance> parse_provenance(std::string_view text) {
  const std::string key = squash(text);
  if (key == "generated") return Provenance::Generated;
  if (key == "refined") return Provenance::Refined;
  return std::nullopt;
}

std::string_view describe(Category category, Speaker speaker) {
  switch (category) {
    case Category::SelfMonitoring: return "the tutor checks or comments on their own way of teaching";
    case Category::Lecturing: return "the tutor explains facts or conceptual principles";
    case Category::Demonstrating: return "the tutor works through a concrete problem step by step as a model";
    case Category::Questioning:
      return speaker == Speaker::Tutor
                 ? "the tutor asks a recall, short-answer or deep reasoning question"
                 : "the learner asks the tutor a simple or deep question";
    case Category::OffTopic: return "greetings or small talk unrelated to the material";
    case Category::Summarizing: return "the tutor recaps progress or restates what the learner said";
    case Category::Answering:
      return speaker == Speaker::Tutor ? "the tutor replies to a learner question"
                                       : "the learner replies to a tutor question or completes a hint";
    case Category::Scaffolding: return "the tutor gives a hint so the learner can reach the answer alone";
    case Category::Diagnosing: return "the tutor probes how well the learner currently understands";
    case Category::Reflecting: return "the learner judges their own level of understanding";
    case Category::Explanation: return "the learner thinks aloud without being prompted";
  }
  return "";
}

std::string_view describe(TeachingStrategy strategy) {
  switch (strategy) {
    case TeachingStrategy::CognitiveConflict:
      return "the tutor surfaces a contradiction with the learner's prior belief and resolves it";
    case TeachingStrategy::MetacognitivePrompting:
      return "the tutor asks the learner to plan, monitor or state how well they understand";
    case TeachingStrategy::CognitivePrompting:
      return "the tutor asks the learner to restate, organize or connect the material to prior knowledge";
    case TeachingStrategy::SpontaneousDeepQuestion:
      return "the learner volunteers a why/how/what-if question comparing or linking concepts";
  }
  return "";
}

}  // namespace vicar
