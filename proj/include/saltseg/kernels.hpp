#pragma once

// Differentiable building blocks of the segmentation network: convolution,
// activations, 2x2 max pooling and nearest-neighbour resizing, each with a
// hand-derived backward pass. All functions are pure.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "saltseg/tensor.hpp"

namespace saltseg {

template <typename T>
struct BasicConvKernel {
  BasicTensor<T> weights;  // (out_channels, in_channels, k_h, k_w)
  BasicTensor<T> bias;     // (out_channels)

  std::size_t out_channels() const { return weights.dim(0); }
  std::size_t in_channels() const { return weights.dim(1); }
  std::size_t kernel_h() const { return weights.dim(2); }
  std::size_t kernel_w() const { return weights.dim(3); }

  friend bool operator==(const BasicConvKernel&, const BasicConvKernel&) = default;
};

using ConvKernel = BasicConvKernel<double>;

template <typename T>
struct BasicConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  BasicTensor<T> bias;
};

using ConvGrads = BasicConvGrads<double>;

/// Flat input offset of each 2x2 window maximum, laid out like the pooled output.
struct PoolIndices {
  Dims input_dims;
  Dims output_dims;
  std::vector<std::size_t> source_index;
};

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::size_t pad_before(std::size_t k) { return (k - 1) / 2; }

template <typename T>
void check_kernel(const BasicConvKernel<T>& kernel) {
  require_rank(kernel.weights.dims(), 4, "conv kernel weights");
  require_rank(kernel.bias.dims(), 1, "conv kernel bias");
  if (kernel.bias.dim(0) != kernel.out_channels())
    throw ShapeError("conv kernel: bias length " + std::to_string(kernel.bias.dim(0)) +
                     " != out_channels " + std::to_string(kernel.out_channels()));
}

// Valid x range [lo, hi) for column offset b under "same" padding.
inline std::pair<std::size_t, std::size_t> valid_span(std::size_t width, std::size_t b, std::size_t pad) {
  const std::size_t lo = b < pad ? pad - b : 0;
  const std::size_t hi = b > pad ? width - std::min(width, b - pad) : width;
  return {std::min(lo, hi), hi};
}

// Unfolds one image (C, H, W) into a (C*kh*kw, H*W) matrix for "same" zero padding.
template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kh, std::size_t kw, T* cols) {
  const std::size_t ph = pad_before(kh), pw = pad_before(kw);
  const std::size_t plane = height * width;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = image + c * plane;
    for (std::size_t a = 0; a < kh; ++a) {
      for (std::size_t b = 0; b < kw; ++b) {
        T* row = cols + ((c * kh + a) * kw + b) * plane;
        const auto [lo, hi] = valid_span(width, b, pw);
        for (std::size_t y = 0; y < height; ++y) {
          T* dst = row + y * width;
          const std::size_t sy = y + a;  // source row + ph
          if (sy < ph || sy - ph >= height) {
            std::fill(dst, dst + width, T{});
            continue;
          }
          const T* line = src + (sy - ph) * width;
          std::fill(dst, dst + lo, T{});
          for (std::size_t x = lo; x < hi; ++x) dst[x] = line[x + b - pw];
          std::fill(dst + hi, dst + width, T{});
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column gradients back onto the image.
template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kh, std::size_t kw, T* image) {
  const std::size_t ph = pad_before(kh), pw = pad_before(kw);
  const std::size_t plane = height * width;
  for (std::size_t c = 0; c < channels; ++c) {
    T* dst = image + c * plane;
    for (std::size_t a = 0; a < kh; ++a) {
      for (std::size_t b = 0; b < kw; ++b) {
        const T* row = cols + ((c * kh + a) * kw + b) * plane;
        const auto [lo, hi] = valid_span(width, b, pw);
        for (std::size_t y = 0; y < height; ++y) {
          const std::size_t sy = y + a;
          if (sy < ph || sy - ph >= height) continue;
          T* line = dst + (sy - ph) * width;
          const T* src = row + y * width;
          for (std::size_t x = lo; x < hi; ++x) line[x + b - pw] += src[x];
        }
      }
    }
  }
}

inline std::vector<std::size_t> nearest_source_map(std::size_t in, std::size_t out) {
  std::vector<std::size_t> map(out);
  for (std::size_t d = 0; d < out; ++d) map[d] = d * in / out;
  return map;
}

}  // namespace detail

/// Direct evaluation of the flipped-kernel convolution
///   (f * g)(m, n) = sum_{i,j} f(i, j) g(m - i, n - j)
/// with f zero outside its support. The full result is cropped back to f's
/// extent with the same alignment the padded layers use, so this equals
/// conv2d_forward with a 180-degree rotated kernel.
template <typename T>
BasicTensor<T> conv2d_ref(const BasicTensor<T>& f, const BasicTensor<T>& g) {
  require_rank(f.dims(), 2, "conv2d_ref input");
  require_rank(g.dims(), 2, "conv2d_ref kernel");
  const std::size_t height = f.dim(0), width = f.dim(1);
  const std::size_t kh = g.dim(0), kw = g.dim(1);
  // Output (m, n) reads full-convolution index (m + oh, n + ow).
  const std::size_t oh = kh - 1 - detail::pad_before(kh);
  const std::size_t ow = kw - 1 - detail::pad_before(kw);
  BasicTensor<T> out({height, width});
  for (std::size_t m = 0; m < height; ++m) {
    for (std::size_t n = 0; n < width; ++n) {
      const std::ptrdiff_t fm = static_cast<std::ptrdiff_t>(m + oh);
      const std::ptrdiff_t fn = static_cast<std::ptrdiff_t>(n + ow);
      T acc{};
      for (std::size_t i = 0; i < height; ++i) {
        for (std::size_t j = 0; j < width; ++j) {
          const std::ptrdiff_t gi = fm - static_cast<std::ptrdiff_t>(i);
          const std::ptrdiff_t gj = fn - static_cast<std::ptrdiff_t>(j);
          if (gi < 0 || gj < 0 || gi >= static_cast<std::ptrdiff_t>(kh) ||
              gj >= static_cast<std::ptrdiff_t>(kw))
            continue;
          acc += f.at(i, j) * g.at(static_cast<std::size_t>(gi), static_cast<std::size_t>(gj));
        }
      }
      out.at(m, n) = acc;
    }
  }
  return out;
}

/// Stride-1 cross-correlation with "same" zero padding plus bias. No activation.
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicConvKernel<T>& kernel) {
  require_rank(input.dims(), 4, "conv2d_forward input");
  detail::check_kernel(kernel);
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t height = input.dim(2), width = input.dim(3);
  if (channels != kernel.in_channels())
    throw ShapeError("conv2d_forward: input has " + std::to_string(channels) +
                     " channels, kernel expects " + std::to_string(kernel.in_channels()));
  const std::size_t out_ch = kernel.out_channels();
  const std::size_t kh = kernel.kernel_h(), kw = kernel.kernel_w();
  const std::size_t plane = height * width;
  const std::size_t patch = channels * kh * kw;

  BasicTensor<T> out({batch, out_ch, height, width});
  std::vector<T, AlignedAllocator<T>> cols(patch * plane);
  Eigen::Map<const detail::RowMatrix<T>> w(kernel.weights.data(), out_ch, patch);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(kernel.bias.data(), out_ch);
  Eigen::Map<const detail::RowMatrix<T>> col_mat(cols.data(), patch, plane);
  for (std::size_t n = 0; n < batch; ++n) {
    detail::im2col(input.data() + n * channels * plane, channels, height, width, kh, kw,
                   cols.data());
    Eigen::Map<detail::RowMatrix<T>> o(out.data() + n * out_ch * plane, out_ch, plane);
    o.noalias() = w * col_mat;
    o.colwise() += b;
  }
  return out;
}

template <typename T>
BasicConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicConvKernel<T>& kernel,
                                  const BasicTensor<T>& grad_output) {
  require_rank(input.dims(), 4, "conv2d_backward input");
  detail::check_kernel(kernel);
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t height = input.dim(2), width = input.dim(3);
  if (channels != kernel.in_channels())
    throw ShapeError("conv2d_backward: channel mismatch");
  const std::size_t out_ch = kernel.out_channels();
  require_same_dims(grad_output.dims(), Dims{batch, out_ch, height, width},
                    "conv2d_backward grad_output");
  const std::size_t kh = kernel.kernel_h(), kw = kernel.kernel_w();
  const std::size_t plane = height * width;
  const std::size_t patch = channels * kh * kw;

  BasicConvGrads<T> grads{BasicTensor<T>(input.dims()), BasicTensor<T>(kernel.weights.dims()),
                          BasicTensor<T>(kernel.bias.dims())};
  std::vector<T, AlignedAllocator<T>> cols(patch * plane);
  std::vector<T, AlignedAllocator<T>> grad_cols(patch * plane);
  Eigen::Map<const detail::RowMatrix<T>> w(kernel.weights.data(), out_ch, patch);
  Eigen::Map<detail::RowMatrix<T>> gw(grads.weights.data(), out_ch, patch);
  Eigen::Map<detail::RowMatrix<T>> col_mat(cols.data(), patch, plane);
  Eigen::Map<detail::RowMatrix<T>> grad_col_mat(grad_cols.data(), patch, plane);
  for (std::size_t n = 0; n < batch; ++n) {
    detail::im2col(input.data() + n * channels * plane, channels, height, width, kh, kw,
                   cols.data());
    Eigen::Map<const detail::RowMatrix<T>> go(grad_output.data() + n * out_ch * plane, out_ch,
                                              plane);
    gw.noalias() += go * col_mat.transpose();
    for (std::size_t o = 0; o < out_ch; ++o) {
      const T* row = grad_output.data() + (n * out_ch + o) * plane;
      T acc{};
      for (std::size_t i = 0; i < plane; ++i) acc += row[i];
      grads.bias[o] += acc;
    }
    grad_col_mat.noalias() = w.transpose() * go;
    detail::col2im(grad_cols.data(), channels, height, width, kh, kw,
                   grads.input.data() + n * channels * plane);
  }
  return grads;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (auto& v : out.values()) v = v > T{} ? v : T{};
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_output) {
  require_same_dims(input.dims(), grad_output.dims(), "relu_backward");
  BasicTensor<T> grad = grad_output;
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(input[i] > T{})) grad[i] = T{};
  return grad;
}

// Only ever exponentiates a non-positive argument, so it cannot overflow.
template <typename T>
T sigmoid(T x) {
  if (x >= T{}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (auto& v : out.values()) v = sigmoid(v);
  return out;
}

/// Non-overlapping 2x2 max pooling, stride 2. Ties go to the first element in
/// row-major window order.
template <typename T>
std::pair<BasicTensor<T>, PoolIndices> maxpool2x2_forward(const BasicTensor<T>& input) {
  require_rank(input.dims(), 4, "maxpool2x2_forward input");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t height = input.dim(2), width = input.dim(3);
  if (height % 2 != 0 || width % 2 != 0)
    throw ShapeError("maxpool2x2_forward: odd spatial extent " + dims_to_string(input.dims()));
  const std::size_t oh = height / 2, ow = width / 2;
  BasicTensor<T> out({batch, channels, oh, ow});
  PoolIndices idx{input.dims(), out.dims(), std::vector<std::size_t>(out.size())};
  std::size_t o = 0;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x, ++o) {
          std::size_t best = input.offset(n, c, 2 * y, 2 * x);
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t at = input.offset(n, c, 2 * y + dy, 2 * x + dx);
              if (input[at] > input[best]) best = at;
            }
          }
          out[o] = input[best];
          idx.source_index[o] = best;
        }
      }
    }
  }
  return {std::move(out), std::move(idx)};
}

template <typename T>
BasicTensor<T> maxpool2x2_backward(const PoolIndices& indices, const BasicTensor<T>& grad_output) {
  require_same_dims(grad_output.dims(), indices.output_dims, "maxpool2x2_backward grad_output");
  if (indices.source_index.size() != grad_output.size())
    throw ShapeError("maxpool2x2_backward: stale pool indices");
  BasicTensor<T> grad(indices.input_dims);
  for (std::size_t o = 0; o < grad_output.size(); ++o) {
    const std::size_t src = indices.source_index[o];
    if (src >= grad.size()) throw ShapeError("maxpool2x2_backward: index out of range");
    grad[src] += grad_output[o];
  }
  return grad;
}

/// Nearest-neighbour resize with source index floor(dst * in / out). Integral
/// upscaling replicates each pixel into an s x s block.
template <typename T>
BasicTensor<T> resize_nearest_forward(const BasicTensor<T>& input, std::size_t out_h,
                                      std::size_t out_w) {
  require_rank(input.dims(), 4, "resize_nearest_forward input");
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_nearest_forward: zero target extent");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t height = input.dim(2), width = input.dim(3);
  const auto rows = detail::nearest_source_map(height, out_h);
  const auto cols = detail::nearest_source_map(width, out_w);
  BasicTensor<T> out({batch, channels, out_h, out_w});
  T* dst = out.data();
  for (std::size_t nc = 0; nc < batch * channels; ++nc) {
    const T* src = input.data() + nc * height * width;
    for (std::size_t y = 0; y < out_h; ++y) {
      const T* line = src + rows[y] * width;
      for (std::size_t x = 0; x < out_w; ++x) *dst++ = line[cols[x]];
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> resize_nearest_backward(const Dims& in_dims, const Dims& out_dims,
                                       const BasicTensor<T>& grad_output) {
  require_rank(in_dims, 4, "resize_nearest_backward in_dims");
  require_rank(out_dims, 4, "resize_nearest_backward out_dims");
  require_same_dims(grad_output.dims(), out_dims, "resize_nearest_backward grad_output");
  if (in_dims[0] != out_dims[0] || in_dims[1] != out_dims[1])
    throw ShapeError("resize_nearest_backward: batch/channel mismatch");
  const std::size_t height = in_dims[2], width = in_dims[3];
  const std::size_t out_h = out_dims[2], out_w = out_dims[3];
  const auto rows = detail::nearest_source_map(height, out_h);
  const auto cols = detail::nearest_source_map(width, out_w);
  BasicTensor<T> grad(in_dims);
  const T* src = grad_output.data();
  for (std::size_t nc = 0; nc < in_dims[0] * in_dims[1]; ++nc) {
    T* dst = grad.data() + nc * height * width;
    for (std::size_t y = 0; y < out_h; ++y) {
      T* line = dst + rows[y] * width;
      for (std::size_t x = 0; x < out_w; ++x) line[cols[x]] += *src++;
    }
  }
  return grad;
}

}  // namespace saltseg
