#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fedlake {

/// Retrieval plus the five analytical patterns.
enum class Pattern {
  retrieve,
  tree_insight,
  predict_treatment,
  ae_causation,
  ae_risk,
  ae_type,
};

inline constexpr Pattern kAllPatterns[] = {Pattern::retrieve,          Pattern::tree_insight,
                                           Pattern::predict_treatment, Pattern::ae_causation,
                                           Pattern::ae_risk,           Pattern::ae_type};

/// Upper-case IR name, e.g. "AE_TYPE".
std::string_view pattern_name(Pattern p);
std::optional<Pattern> pattern_from_name(std::string_view name);

bool is_prediction(Pattern p);

/// Prediction patterns only: keyword after PREDICT, the target attribute and
/// the feature attributes the model is trained on.
struct PredictionTask {
  Pattern pattern;
  std::string_view keyword;
  std::string target;
  std::vector<std::string> features;
};

const PredictionTask& prediction_task(Pattern p);
std::optional<Pattern> prediction_from_keyword(std::string_view keyword);
/// Accepts either the PREDICT keyword ("ae_type") or the IR name ("AE_TYPE").
std::optional<Pattern> prediction_from_any(std::string_view text);

}  // namespace fedlake
