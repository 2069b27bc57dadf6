#pragma once

#include <cstddef>
#include <span>

#include "pimms/tape.hpp"

namespace pimms::ad {

enum class Padding { zero_same, valid };

/// Cross-correlation of an [H, W, Cin] image with a [k, k, Cin, Cout] kernel.
/// zero_same follows the usual "SAME" convention (output extent ceil(H/stride),
/// padding split with the extra pixel after); valid uses no padding.
Var conv2d(Var input, Var kernel, Var bias, Padding padding, std::size_t stride = 1);

/// max(0, x); the subgradient at 0 is 0.
Var relu(Var x);

/// Window max over [H, W, C]. Ties route the gradient to the first element in
/// row-major order; zero padding never receives gradient.
Var maxpool2d(Var x, std::size_t window = 2, std::size_t stride = 1, Padding padding = Padding::zero_same);

/// Max-subtracted softmax along `axis`.
Var softmax(Var x, std::size_t axis);
inline Var softmax(Var x) { return softmax(x, x.shape().size() - 1); }

/// [F] x [F, O] + [O] -> [O]
Var dense(Var x, Var weights, Var bias);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var add_n(std::span<const Var> xs);
Var scale(Var x, double c);
Var add_scalar(Var x, double c);
/// x * s for a single-element `s`.
Var scale_by(Var x, Var s);
Var square(Var x);
/// log(max(x, floor)); zero gradient where clamped.
Var log_clamped(Var x, double floor);

/// Sum of all elements, shape [1].
Var sum(Var x);
Var mean(Var x);
/// Element `index` of the flattened tensor, shape [1].
Var element(Var x, std::size_t index);
Var reshape(Var x, Shape shape);
/// Channel `c` of an [H, W, C] tensor, shape [H, W].
Var take_channel(Var x, std::size_t c);
/// Concatenation along the last axis; leading extents must agree.
Var concat_last(std::span<const Var> xs);
/// [H, W, C] -> [C]
Var global_avg_pool(Var x);

}  // namespace pimms::ad
