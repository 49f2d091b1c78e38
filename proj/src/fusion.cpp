#include "higo/fusion.hpp"

namespace higo {

FusionParams::FusionParams(int cx, int cz, int d, int modes, InitRng& rng)
    : enc("fusion.enc", cx, d, d, rng),
      att{Mlp2("fusion.a1", cz, std::max(1, d / 2), d, rng),
          Mlp2("fusion.a2", cz, std::max(1, d / 2), d, rng),
          Mlp2("fusion.a3", cz, std::max(1, d / 2), d, rng)},
      conv1_w("fusion.conv1.W", rng.uniform_fan_in({d, d}, d)),
      conv1_b("fusion.conv1.b", zeros({d})),
      dw_w("fusion.dw.W", rng.uniform_fan_in({3, 3, d}, 9)),
      spec_w("fusion.spec.W", rng.uniform_fan_in({modes, modes, d, 2}, modes * modes)) {}

void FusionParams::collect(std::vector<Parameter*>& out) {
  enc.collect(out);
  for (auto& a : att) a.collect(out);
  out.push_back(&conv1_w);
  out.push_back(&conv1_b);
  out.push_back(&dw_w);
  out.push_back(&spec_w);
}

Array encode_drivers(Tape* t, const Array& drivers, const FusionParams& p) {
  if (drivers.rank() != 3) throw ShapeError("encode_drivers: expected H x W x C input");
  int h = drivers.dim(0), w = drivers.dim(1), cx = drivers.dim(2);
  if (cx != p.enc.l1.w.value.dim(0)) throw ShapeError("encode_drivers: channel count mismatch");
  Array flat = reshape(t ? t->input(drivers) : drivers, {h * w, cx});
  Array z = p.enc.apply(t, flat);
  return reshape(z, {h, w, z.cols2d()});
}

std::array<Array, 3> climate_attention(Tape* t, const Vec& indices, const FusionParams& p) {
  Array z = from_vec({1, static_cast<int>(indices.size())}, indices);
  if (t) z = t->input(z);
  std::array<Array, 3> out;
  for (int i = 0; i < 3; ++i) {
    Array a = p.att[static_cast<size_t>(i)].apply(t, z);
    out[static_cast<size_t>(i)] = p.sigmoid_gate ? sigmoid(a) : a;
  }
  return out;
}

Array gated_fuse(Tape* t, const Array& z, const std::array<Array, 3>& a, const FusionParams& p) {
  auto& self = const_cast<FusionParams&>(p);
  Array u1 = conv_1x1(z, use(t, self.conv1_w), use(t, self.conv1_b));
  Array u2 = depthwise_conv3x3(z, use(t, self.dw_w));
  Array u3 = spectral_conv2d(z, use(t, self.spec_w));
  Array h = add(z, mul(u1, a[0]));
  h = add(h, mul(u2, a[1]));
  h = add(h, mul(u3, a[2]));
  return h;
}

}  // namespace higo
