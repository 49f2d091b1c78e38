#pragma once

#include <optional>
#include <vector>

#include "higo/array.hpp"

namespace higo {

struct EvalRecord {
  double score = 0;  // binary fire probability
  int label = 0;     // 1 = fire (any class >= 1)
  int cell = 0;
  int time = 0;
};

/// Unweighted mean of the fire and no-fire F1 scores. A class with zero
/// predicted and zero actual positives scores 1; any other zero denominator
/// scores 0.
double macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels);

double fire_f1(const std::vector<int>& predictions, const std::vector<int>& labels);

/// Average precision (step-integrated PR curve). Empty when there are no
/// positive labels.
std::optional<double> auprc(const std::vector<EvalRecord>& records);

std::vector<int> threshold_predictions(const std::vector<double>& scores, double threshold = 0.5);

}  // namespace higo
