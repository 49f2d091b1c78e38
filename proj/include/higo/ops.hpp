#pragma once

#include <vector>

#include "higo/array.hpp"

namespace higo {

// Elementwise binary ops. The second operand may broadcast against the
// first: same shape, a row vector [D] over an N x D array, a column [N,1],
// or a scalar [1].
Array add(const Array& a, const Array& b);
Array axpy(const Array& a, const Array& b, double c);
Array rk4_combine(const Array& x, const Array& k1, const Array& k2, const Array& k3,
                  const Array& k4, double h);
Array sub(const Array& a, const Array& b);
Array mul(const Array& a, const Array& b);
Array div(const Array& a, const Array& b);

Array scale(const Array& a, double c);
Array add_scalar(const Array& a, double c);
Array neg(const Array& a);

inline Array operator+(const Array& a, const Array& b) { return add(a, b); }
inline Array operator-(const Array& a, const Array& b) { return sub(a, b); }
inline Array operator*(double c, const Array& a) { return scale(a, c); }

Array matmul(const Array& a, const Array& b);
Array transpose(const Array& a);
Array reshape(const Array& a, std::vector<int> shape);
Array concat_cols(const std::vector<Array>& parts);
Array slice_cols(const Array& a, int start, int len);
Array gather_rows(const Array& a, const std::vector<int>& idx);
Array pick_cols(const Array& a, const std::vector<int>& cols);

Array sum(const Array& a);
Array row_sum(const Array& a);
Array col_sum(const Array& a);

Array gelu(const Array& a);
Array sigmoid(const Array& a);
Array log_clamped(const Array& a, double floor = 1e-12);

Array softmax(const Array& a, int axis);
Array segment_softmax(const Array& scores, const std::vector<int>& seg, int n_seg);
Array segment_sum(const Array& a, const std::vector<int>& seg, int n_seg);

Array layer_norm(const Array& a, const Array& gain, const Array& bias, double eps = 1e-5);

Array conv_1x1(const Array& a, const Array& w, const Array& b);
Array depthwise_conv3x3(const Array& a, const Array& w);
Array spectral_conv2d(const Array& a, const Array& w);

}  // namespace higo
