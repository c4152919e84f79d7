#pragma once

#include "sbwm/numkit/tensor.hpp"

#include <cstddef>
#include <vector>

// Differentiable ops over rank-0/1/2 tensors.
//
// Binary elementwise ops accept equal shapes, or one operand whose shape
// equals the other's shape without its leading (batch) dimension; that
// operand is broadcast across the batch. Nothing else broadcasts.

namespace sbwm::nk {

Tensor matmul(const Tensor& a, const Tensor& b); // [m,k] x [k,n]

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

Tensor concat(const std::vector<Tensor>& parts); // along the last axis
Tensor slice(const Tensor& a, std::size_t begin, std::size_t end); // last axis, [begin, end)
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end); // rank 2, first axis

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);

/// max(a, floor) elementwise; zero gradient where a < floor.
Tensor clamp_min(const Tensor& a, double floor);

Tensor sum(const Tensor& a);       // all elements -> scalar
Tensor mean(const Tensor& a);      // all elements -> scalar
Tensor sum_last(const Tensor& a);  // reduces the last axis
Tensor mean_last(const Tensor& a); // reduces the last axis

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }

} // namespace sbwm::nk
