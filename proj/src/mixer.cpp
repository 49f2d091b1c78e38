#include "higo/mixer.hpp"

#include <cmath>

namespace higo {

MixerParams::MixerParams(int d, InitRng& rng)
    : ba_proj("mixer.ba_proj", 1, d, rng),
      wq("mixer.Wq", rng.uniform_fan_in({d, d}, d)),
      wk("mixer.Wk", rng.uniform_fan_in({d, d}, d)),
      wv("mixer.Wv", rng.uniform_fan_in({d, d}, d)),
      ffn("mixer.ffn", d, d, d, rng),
      ln_g("mixer.ln.g", ones({d})),
      ln_b("mixer.ln.b", zeros({d})) {}

void MixerParams::collect(std::vector<Parameter*>& out) {
  ba_proj.collect(out);
  out.push_back(&wq);
  out.push_back(&wk);
  out.push_back(&wv);
  ffn.collect(out);
  out.push_back(&ln_g);
  out.push_back(&ln_b);
}

Array encode_ba(Tape* t, const std::vector<uint8_t>& ba, int h, int w, int k,
                const MixerParams& p) {
  if (static_cast<int>(ba.size()) != h * w) throw ShapeError("encode_ba: label count mismatch");
  Vec scaled(h * w);
  for (size_t i = 0; i < ba.size(); ++i) {
    if (ba[i] >= k) throw ValueError("encode_ba: class out of range");
    scaled[static_cast<Eigen::Index>(i)] = k > 1 ? static_cast<double>(ba[i]) / (k - 1) : 0.0;
  }
  Array x = from_vec({h * w, 1}, std::move(scaled));
  if (t) x = t->input(x);
  Array b = p.ba_proj.apply(t, x);
  return reshape(b, {h, w, b.cols2d()});
}

Array cross_attention(Tape* t, const Array& hf, const Array& bhat, const MixerParams& p) {
  if (hf.shape != bhat.shape) throw ShapeError("cross_attention: shape mismatch");
  auto& self = const_cast<MixerParams&>(p);
  int n = hf.rows2d(), d = hf.cols2d();
  Array hq = reshape(hf, {n, d});
  Array bk = reshape(bhat, {n, d});
  Array q = matmul(hq, use(t, self.wq));
  Array kk = matmul(bk, use(t, self.wk));
  Array v = matmul(bk, use(t, self.wv));
  Array logits = scale(matmul(q, transpose(kk)), 1.0 / std::sqrt(static_cast<double>(d)));
  Array att = softmax(logits, 1);
  Array out = matmul(att, v);
  return reshape(out, hf.shape);
}

Array mix(Tape* t, const Array& hf, const Array& bhat, const MixerParams& p) {
  auto& self = const_cast<MixerParams&>(p);
  Array a = cross_attention(t, hf, bhat, p);
  int n = a.rows2d(), d = a.cols2d();
  Array y = p.ffn.apply(t, reshape(a, {n, d}));
  y = layer_norm(y, use(t, self.ln_g), use(t, self.ln_b));
  Array res = p.residual_drivers ? reshape(hf, {n, d}) : reshape(bhat, {n, d});
  return reshape(add(y, res), hf.shape);
}

}  // namespace higo
