#pragma once

#include <string_view>
#include <vector>

namespace vicar::assets {

struct Asset {
  std::string_view id;    // file stem, e.g. "rubric_v1"
  std::string_view body;  // file contents
};

const std::vector<Asset>& prompts();
const std::vector<Asset>& schemas();

}  // namespace vicar::assets
