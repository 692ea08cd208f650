#include <gtest/gtest.h>

#include "vicar/assets.hpp"
#include "vicar/llm/schema.hpp"

using nlohmann::json;
using vicar::llm::extract_json;
using vicar::llm::validate_schema;

namespace {

json rubric_schema() {
  for (const auto& a : vicar::assets::schemas()) {
    if (a.id == "rubric_v1") return json::parse(a.body);
  }
  return json();
}

}  // namespace

TEST(Schema, AcceptsAWellFormedRubric) {
  json doc = {{"concepts", {{{"name", "wave"}, {"levels", {"a", "b", "c", "d"}}}}}};
  EXPECT_TRUE(validate_schema(rubric_schema(), doc).empty());
}

TEST(Schema, MissingRequiredFieldNamesThePointer) {
  json doc = {{"concepts", {{{"name", "wave"}}}}};
  auto errors = validate_schema(rubric_schema(), doc);
  ASSERT_EQ(errors.size(), 1u);
  EXPECT_NE(errors[0].find("/concepts/0"), std::string::npos);
  EXPECT_NE(errors[0].find("levels"), std::string::npos);
}

TEST(Schema, CardinalityBoundsAreEnforced) {
  json three = {{"concepts", {{{"name", "wave"}, {"levels", {"a", "b", "c"}}}}}};
  json five = {{"concepts", {{{"name", "wave"}, {"levels", {"a", "b", "c", "d", "e"}}}}}};
  EXPECT_EQ(validate_schema(rubric_schema(), three).size(), 1u);
  EXPECT_EQ(validate_schema(rubric_schema(), five).size(), 1u);
}

TEST(Schema, TypeEnumAndLengthChecks) {
  json schema = {{"type", "object"},
                 {"properties",
                  {{"kind", {{"type", "string"}, {"enum", {"a", "b"}}}},
                   {"n", {{"type", "integer"}, {"minimum", 0}, {"maximum", 3}}},
                   {"s", {{"type", "string"}, {"minLength", 2}}},
                   {"x", {{"type", {"integer", "null"}}}}}},
                 {"additionalProperties", false}};
  EXPECT_TRUE(validate_schema(schema, {{"kind", "a"}, {"n", 2}, {"s", "ok"}, {"x", nullptr}}).empty());
  EXPECT_EQ(validate_schema(schema, {{"kind", "c"}}).size(), 1u);
  EXPECT_EQ(validate_schema(schema, {{"n", 4}}).size(), 1u);
  EXPECT_EQ(validate_schema(schema, {{"n", 1.5}}).size(), 1u);
  EXPECT_EQ(validate_schema(schema, {{"s", "x"}}).size(), 1u);
  EXPECT_EQ(validate_schema(schema, {{"x", "str"}}).size(), 1u);
  EXPECT_EQ(validate_schema(schema, {{"other", 1}}).size(), 1u);
  EXPECT_EQ(validate_schema(schema, json::array()).size(), 1u);
}

TEST(Schema, EveryEmbeddedSchemaIsAnObjectSchema) {
  ASSERT_EQ(vicar::assets::schemas().size(), 6u);
  for (const auto& a : vicar::assets::schemas()) {
    auto s = json::parse(a.body);
    EXPECT_EQ(s.at("type"), "object") << a.id;
    EXPECT_TRUE(s.contains("required")) << a.id;
  }
}

TEST(ExtractJson, PlainObject) {
  auto j = extract_json(R"({"a": 1})");
  ASSERT_TRUE(j);
  EXPECT_EQ((*j)["a"], 1);
}

TEST(ExtractJson, FencedBlockWithProse) {
  auto j = extract_json("Here you go:\n```json\n{\"a\": [1, 2]}\n```\nHope this helps.");
  ASSERT_TRUE(j);
  EXPECT_EQ((*j)["a"].size(), 2u);
}

TEST(ExtractJson, ObjectEmbeddedInProseWithBracesInStrings) {
  auto j = extract_json(R"(Sure! {"text": "a } inside", "n": 3} trailing)");
  ASSERT_TRUE(j);
  EXPECT_EQ((*j)["text"], "a } inside");
}

TEST(ExtractJson, NoDocumentReportsAnError) {
  std::string error;
  EXPECT_FALSE(extract_json("I cannot help with that.", &error));
  EXPECT_FALSE(error.empty());
  EXPECT_FALSE(extract_json("{\"a\": ", &error));
}
