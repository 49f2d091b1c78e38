#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "higo/array.hpp"

namespace testutil {

using higo::Array;
using higo::Parameter;
using higo::Tape;
using higo::Vec;

inline Vec vec(std::initializer_list<double> vals) {
  Vec v(static_cast<Eigen::Index>(vals.size()));
  Eigen::Index i = 0;
  for (double x : vals) v[i++] = x;
  return v;
}

inline Array arr(std::vector<int> shape, std::initializer_list<double> vals) {
  return higo::from_vec(std::move(shape), vec(vals));
}

/// Central finite-difference check of reverse-mode gradients. `f` computes a
/// scalar loss; with a tape it records, detached it just evaluates. Up to
/// `max_coords` coordinates per parameter are probed, always including the
/// one with the largest analytic gradient. Returns the worst relative error.
inline double grad_check(const std::function<Array(Tape*)>& f,
                         const std::vector<Parameter*>& params, int max_coords = 6,
                         double h = 1e-5) {
  for (Parameter* p : params) p->zero_grad();
  Tape tape;
  Array loss = f(&tape);
  tape.backward(loss);

  double worst = 0;
  for (Parameter* p : params) {
    int n = p->value.size();
    std::vector<int> coords;
    int argmax = 0;
    for (int i = 1; i < n; ++i)
      if (std::abs(p->grad[i]) > std::abs(p->grad[argmax])) argmax = i;
    coords.push_back(argmax);
    int stride = std::max(1, n / max_coords);
    for (int i = 0; i < n && static_cast<int>(coords.size()) < max_coords; i += stride)
      if (i != argmax) coords.push_back(i);

    for (int i : coords) {
      double saved = p->value.data[i];
      p->value.data[i] = saved + h;
      double fp = f(nullptr).scalar();
      p->value.data[i] = saved - h;
      double fm = f(nullptr).scalar();
      p->value.data[i] = saved;
      double fd = (fp - fm) / (2 * h);
      double g = p->grad[i];
      double rel = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace testutil
