#pragma once

#include <vector>

#include "pttt/tensor.hpp"

namespace pttt::nn {

// 3x3 convolutions are lowered to matmul via im2col. Zero padding of 1, so
// stride 1 preserves spatial dims and stride 2 halves them exactly for even
// inputs. cols holds (C*9) x (OH*OW).
void im2col_3x3(const Volume& in, int stride, std::vector<double>& cols, int& oh, int& ow);
// Scatter-add of column gradients back to the input layout.
void col2im_3x3(const std::vector<double>& dcols, int stride, Volume& din_accum);

// out[co x OH*OW] = w[co x ci*9] * cols + b
void conv3x3_forward(const Volume& in, const double* w, const double* b, int co, int stride,
                     Volume& out, std::vector<double>& cols_cache);
// Accumulates dw/db when non-null; din overwritten when non-null.
void conv3x3_backward(const Volume& dout, const std::vector<double>& cols, const double* w,
                      int ci, int in_h, int in_w, int stride,
                      double* dw, double* db, Volume* din);

void conv1x1_forward(const Volume& in, const double* w, const double* b, int co, Volume& out);
void conv1x1_backward(const Volume& dout, const Volume& in, const double* w,
                      double* dw, double* db, Volume* din);

double sigmoid(double z);

// x  <- silu(x) = x * sigmoid(x); caches sigmoid(x) for the backward pass.
void silu_forward(Volume& x, Volume& sig_cache);
// dx = dy * sig * (1 + pre * (1 - sig)); pre is the pre-activation input.
void silu_backward(const Volume& dy, const Volume& pre, const Volume& sig, Volume& dx);

void upsample2x_nearest(const Volume& in, Volume& out);
void upsample2x_nearest_backward(const Volume& dout, Volume& din);

// Fixed bilinear upscaling by an integer factor (half-pixel centers).
void upsample_bilinear(const Grid2& in, int factor, Grid2& out);
void upsample_bilinear_backward(const Grid2& dout, int factor, Grid2& din);

}  // namespace pttt::nn
