#pragma once

#include "earsr/nn/autograd.hpp"
#include "earsr/random.hpp"

namespace earsr::nn {

// 2D cross-correlation with zero padding. weight: [cout, cin, k, k]; bias: [1, cout, 1, 1].
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);

// Fractionally-strided convolution. weight: [cin, cout, k, k]. Output size is
// (in - 1) * stride - 2 * pad + k + output_pad.
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad,
                     int output_pad);

Var reflect_pad(const Var& x, int pad);
Var instance_norm(const Var& x, double eps = 1e-5);
Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope = 0.2);
Var sigmoid(const Var& x);

// Inverted dropout: zeroes each element with probability `rate` and scales
// survivors by 1 / (1 - rate). Masks are drawn from `rng`.
Var dropout(const Var& x, double rate, Rng& rng);

Var add(const Var& a, const Var& b);

// Scalar reductions.
Var mean_abs_diff(const Var& a, const Var& b);
Var mean_log(const Var& p, double floor);        // mean(log(max(p, floor)))
Var mean_log1m(const Var& p, double floor);      // mean(log(max(1 - p, floor)))
Var weighted_sum(const std::vector<std::pair<Var, double>>& terms);

// Detached copy: same value, no gradient path.
Var detach(const Var& x);

}  // namespace earsr::nn
