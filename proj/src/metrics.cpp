#include "higo/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace higo {

namespace {

double f1_for(const std::vector<int>& pred, const std::vector<int>& lab, int positive) {
  double tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    bool p = pred[i] == positive, a = lab[i] == positive;
    if (p && a) ++tp;
    else if (p) ++fp;
    else if (a) ++fn;
  }
  if (tp == 0 && fp == 0 && fn == 0) return 1.0;  // class absent on both sides
  double denom = 2 * tp + fp + fn;
  return denom > 0 ? 2 * tp / denom : 0.0;
}

}  // namespace

double macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) throw ShapeError("macro_f1: size mismatch");
  return 0.5 * (f1_for(predictions, labels, 1) + f1_for(predictions, labels, 0));
}

double fire_f1(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) throw ShapeError("fire_f1: size mismatch");
  return f1_for(predictions, labels, 1);
}

std::optional<double> auprc(const std::vector<EvalRecord>& records) {
  size_t n_pos = 0;
  for (const EvalRecord& r : records) n_pos += r.label == 1;
  if (n_pos == 0) return std::nullopt;

  std::vector<size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return records[a].score > records[b].score; });

  double ap = 0, tp = 0;
  for (size_t rank = 0; rank < order.size(); ++rank) {
    if (records[order[rank]].label == 1) {
      tp += 1;
      double precision = tp / static_cast<double>(rank + 1);
      ap += precision / static_cast<double>(n_pos);  // recall increment is 1/n_pos
    }
  }
  return ap;
}

std::vector<int> threshold_predictions(const std::vector<double>& scores, double threshold) {
  std::vector<int> out(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] >= threshold ? 1 : 0;
  return out;
}

}  // namespace higo
