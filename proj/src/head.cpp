#include "higo/head.hpp"

#include <limits>

namespace higo {

HeadParams::HeadParams(int d, int k, InitRng& rng)
    : dec("head.dec", d, d, k, rng) {}

void HeadParams::collect(std::vector<Parameter*>& out) { dec.collect(out); }

Array decode(Tape* t, const Array& fine_state, const HeadParams& p) {
  Array logits = p.dec.apply(t, fine_state);
  if (p.sigmoid_binary) {
    if (logits.cols2d() != 2)
      throw ConfigError("decode: sigmoid head requires K = 2");
    Array s = sigmoid(slice_cols(logits, 1, 1));
    return concat_cols({sub(ones(s.shape), s), s});
  }
  return softmax(logits, 1);
}

Vec fire_probability(const Array& probs) {
  int n = probs.rows2d();
  Vec out(n);
  for (int i = 0; i < n; ++i) out[i] = 1.0 - probs.mat()(i, 0);
  return out;
}

Vec class_weights(const std::vector<uint8_t>& labels, int k) {
  if (labels.empty()) throw ValueError("class_weights: empty label set");
  std::vector<double> count(static_cast<size_t>(k), 0.0);
  for (uint8_t y : labels) {
    if (y >= k) throw ValueError("class_weights: label out of range");
    count[y] += 1.0;
  }
  double total = static_cast<double>(labels.size());
  double rarest = std::numeric_limits<double>::infinity();
  for (double c : count)
    if (c > 0) rarest = std::min(rarest, c);
  Vec w(k);
  for (int c = 0; c < k; ++c) {
    double n_c = count[static_cast<size_t>(c)] > 0 ? count[static_cast<size_t>(c)] : rarest;
    w[c] = total / (k * n_c);
  }
  w *= static_cast<double>(k) / w.sum();  // mean 1
  return w;
}

Array weighted_ce(Tape* t, const Array& probs, const std::vector<uint8_t>& labels,
                  const Vec& weights) {
  int n = probs.rows2d(), k = probs.cols2d();
  if (static_cast<int>(labels.size()) != n) throw ShapeError("weighted_ce: label count mismatch");
  std::vector<int> cols(labels.size());
  Vec w_cell(n);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= k) throw ValueError("weighted_ce: label out of range");
    cols[i] = labels[i];
    w_cell[static_cast<Eigen::Index>(i)] = weights[labels[i]];
  }
  Array py = pick_cols(probs, cols);
  Array lp = log_clamped(py);
  Array wc = from_vec({n, 1}, std::move(w_cell));
  if (t) wc = t->input(wc);
  return scale(sum(mul(lp, wc)), -1.0 / n);
}

}  // namespace higo
