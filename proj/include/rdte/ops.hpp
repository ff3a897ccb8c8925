// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "rdte/tape.hpp"

namespace rdte {

enum class Elementwise { add, sub, mul, relu, silu, tanh, cos, sin, softplus, exp, sigmoid };

/// Elementwise op. Binary ops accept `b` of the same shape as `a`, of shape
/// [C] where C is a's last extent (channel broadcast), or a single element.
/// ReLU uses subgradient 0 at its kink.
Var elementwise(Elementwise op, const Var& a, std::optional<Var> b = std::nullopt);

inline Var add(const Var& a, const Var& b) { return elementwise(Elementwise::add, a, b); }
inline Var sub(const Var& a, const Var& b) { return elementwise(Elementwise::sub, a, b); }
inline Var mul(const Var& a, const Var& b) { return elementwise(Elementwise::mul, a, b); }
inline Var relu(const Var& a) { return elementwise(Elementwise::relu, a); }
inline Var silu(const Var& a) { return elementwise(Elementwise::silu, a); }
inline Var tanh(const Var& a) { return elementwise(Elementwise::tanh, a); }
inline Var cos(const Var& a) { return elementwise(Elementwise::cos, a); }
inline Var sin(const Var& a) { return elementwise(Elementwise::sin, a); }
inline Var softplus(const Var& a) { return elementwise(Elementwise::softplus, a); }
inline Var exp(const Var& a) { return elementwise(Elementwise::exp, a); }
inline Var sigmoid(const Var& a) { return elementwise(Elementwise::sigmoid, a); }

Var scale(const Var& a, real s);
Var add_scalar(const Var& a, real s);
/// Sum of any number of same-shape terms.
Var add_n(const std::vector<Var>& terms);

/// [m,k] x [k,n] -> [m,n].
Var matmul(const Var& a, const Var& b);
/// [m,k] x [n,k]^T -> [m,n].
Var matmul_nt(const Var& a, const Var& b);
/// Row-wise softmax of a 2-D tensor, stabilized by subtracting the row max.
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);

/// Scalar [1] sum of all elements (accumulated in double).
Var sum(const Var& a);
Var mean(const Var& a);

Var reshape(const Var& a, Shape shape);
/// Concatenate along the last axis; all leading extents must agree.
Var concat_last(const std::vector<Var>& parts);
/// Channels [start, start+count) of the last axis.
Var slice_last(const Var& a, std::size_t start, std::size_t count);
/// Concatenate along the first (batch) axis.
Var concat_first(const std::vector<Var>& parts);
/// Index `i` of the first axis, keeping it as an extent of 1.
Var select_first(const Var& a, std::size_t i);
/// [re_0..re_{c-1}, im_0..im_{c-1}] -> [re_0, im_0, re_1, im_1, ...] on the last axis.
Var interleave_halves(const Var& a);

/// Throws NumericError naming `where` if any element is NaN or infinite.
void check_finite(const Var& a, const char* where);

}  // namespace rdte
