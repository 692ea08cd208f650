#include "vicar/llm/provider.hpp"

#include <cmath>

#include "vicar/errors.hpp"

namespace vicar::llm {

Temperature Temperature::fixed(double value) {
  if (!std::isfinite(value) || value < 0.0 || value > 2.0) {
    throw Error(ErrorCode::InvalidPrompt, "temperature must lie in [0, 2]");
  }
  Temperature t;
  t.value_ = value;
  return t;
}

nlohmann::json Temperature::to_json() const {
  if (value_) return *value_;
  return "provider_default";
}

FunctionProvider::FunctionProvider(Fn fn, std::string name) : fn_(std::move(fn)), name_(std::move(name)) {}

ChatResponse UnavailableProvider::send(const ChatRequest&) {
  ChatResponse r;
  r.status = 0;
  r.error = "no language model endpoint configured";
  return r;
}

}  // namespace vicar::llm
