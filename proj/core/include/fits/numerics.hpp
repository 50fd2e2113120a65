#pragma once

#include <functional>
#include <vector>

#include "fits/autograd.hpp"
#include "fits/tensor.hpp"

namespace fits {

// Central-difference gradients of a scalar loss over every coordinate of
// every parameter. The loss callable must be deterministic.
std::vector<Tensor> finite_diff_grad(
    const std::function<double(const ParamStore&)>& loss, ParamStore& params,
    double eps = 1e-5);

// Relative error with a small floor so near-zero pairs compare cleanly.
double rel_error(double a, double b);

// Worst-coordinate relative disagreement between a store's accumulated
// gradients and a finite-difference sweep (same parameter order). The
// denominator floor keeps central-difference roundoff on near-zero
// coordinates from registering as relative error.
double max_rel_error(const ParamStore& params, const std::vector<Tensor>& fd,
                     double denom_floor = 1e-4);

// Pearson correlation; throws DegenerateInput on zero variance.
double pearson_r(const std::vector<double>& x, const std::vector<double>& y);

struct PcaResult {
  Tensor projected;   // [rows, n_components]
  Tensor components;  // [n_components, dim], rows orthonormal
};

// Mean-centered power iteration with deflation. Sign convention: the first
// nonzero coordinate of each component is positive.
PcaResult pca_project(const Tensor& rows, int n_components = 2);

}  // namespace fits
