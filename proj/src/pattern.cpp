#include "fedlake/pattern.hpp"

#include <algorithm>
#include <cctype>

#include "fedlake/error.hpp"

namespace fedlake {

namespace {

const std::vector<PredictionTask>& tasks() {
  static const std::vector<PredictionTask> kTasks = {
      {Pattern::predict_treatment, "treatment", "treatment",
       {"sex", "age", "cancer_type", "tnm_stage"}},
      {Pattern::ae_causation, "ae_caused", "ae_caused_by_treatment",
       {"treatment", "frequency", "ae_type", "days_since_start"}},
      {Pattern::ae_risk, "ae_risk", "ae_occurred",
       {"sex", "age", "cancer_type", "tnm_stage", "treatment", "frequency"}},
      {Pattern::ae_type, "ae_type", "ae_type",
       {"sex", "age", "cancer_type", "tnm_stage", "treatment", "frequency"}},
  };
  return kTasks;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

std::string_view pattern_name(Pattern p) {
  switch (p) {
    case Pattern::retrieve:
      return "RETRIEVE";
    case Pattern::tree_insight:
      return "TREE_INSIGHT";
    case Pattern::predict_treatment:
      return "PREDICT_TREATMENT";
    case Pattern::ae_causation:
      return "AE_CAUSATION";
    case Pattern::ae_risk:
      return "AE_RISK";
    case Pattern::ae_type:
      return "AE_TYPE";
  }
  return "?";
}

std::optional<Pattern> pattern_from_name(std::string_view name) {
  for (Pattern p : kAllPatterns) {
    if (pattern_name(p) == name) return p;
  }
  return std::nullopt;
}

bool is_prediction(Pattern p) { return p != Pattern::retrieve && p != Pattern::tree_insight; }

const PredictionTask& prediction_task(Pattern p) {
  for (const auto& t : tasks()) {
    if (t.pattern == p) return t;
  }
  throw ValidationError(std::string("not a prediction pattern: ") +
                        std::string(pattern_name(p)));
}

std::optional<Pattern> prediction_from_keyword(std::string_view keyword) {
  const std::string k = lower(keyword);
  for (const auto& t : tasks()) {
    if (t.keyword == k) return t.pattern;
  }
  return std::nullopt;
}

std::optional<Pattern> prediction_from_any(std::string_view text) {
  if (auto p = prediction_from_keyword(text)) return p;
  std::string upper(text);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (auto p = pattern_from_name(upper); p && is_prediction(*p)) return p;
  return std::nullopt;
}

}  // namespace fedlake
