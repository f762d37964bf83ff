#pragma once

#include <string_view>
#include <vector>

#include "gf/tensor.h"

namespace gf::kernels {

// Forward kernels. All single-threaded with a fixed accumulation order
// (channels outermost, then kernel rows, then kernel columns) so results
// are reproducible bit for bit.

// input CxHxW, kernel OxCxKxK, bias O (may be empty) -> OxH'xW'.
// Cross-correlation with symmetric zero padding.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              const ConvSpec& spec);

// y = gamma * (x - mean) / sqrt(var + eps) + beta, per channel of a
// CxHxW map (or per element of a rank-1 vector).
Tensor batchnorm_infer(const Tensor& input, const Tensor& mean, const Tensor& var,
                       const Tensor& gamma, const Tensor& beta, float eps);

Tensor relu(const Tensor& input);

// Valid windows only: out extent = (in - k) / stride + 1.
Tensor max_pool2d(const Tensor& input, int k, int stride);

// input: vector D_in; weight: D_out x D_in; bias: D_out.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Shift-invariant softmax over a rank-1 vector.
Tensor softmax(const Tensor& input);

// Bin (i,j) of a CxHxW map averages rows [floor(i*H/OH), ceil((i+1)*H/OH))
// and the analogous column range.
Tensor adaptive_avg_pool2d(const Tensor& input, int out_h, int out_w);

// Nearest neighbour: out (i,j) reads in (floor(i*H/OH), floor(j*W/OW)).
Tensor upsample_nearest(const Tensor& input, int out_h, int out_w);

Tensor concat_channels(const std::vector<const Tensor*>& maps);

// CxHxW -> C vector of spatial means.
Tensor global_avg_pool(const Tensor& input);

// Expands an OxCxKxK kernel to the zero-inserted equivalent with
// K' = dilation*(K-1)+1, so conv2d(x, dilate_kernel(w,d), stride, d=1)
// equals conv2d(x, w, stride, d).
Tensor dilate_kernel(const Tensor& kernel, int dilation);

// Backward kernels: exact reverse-mode gradients of the forwards above.

struct Conv2dGrads {
    Tensor input;
    Tensor kernel;
    Tensor bias;
};
Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernel,
                            const ConvSpec& spec, const Tensor& upstream);

struct BatchnormGrads {
    Tensor input;
    Tensor gamma;
    Tensor beta;
};
BatchnormGrads batchnorm_infer_backward(const Tensor& input, const Tensor& mean,
                                        const Tensor& var, const Tensor& gamma,
                                        float eps, const Tensor& upstream);

Tensor relu_backward(const Tensor& input, const Tensor& upstream);

Tensor max_pool2d_backward(const Tensor& input, int k, int stride,
                           const Tensor& upstream);

struct LinearGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};
LinearGrads linear_backward(const Tensor& input, const Tensor& weight,
                            const Tensor& upstream);

// Needs the forward output (softmax values), not the input.
Tensor softmax_backward(const Tensor& output, const Tensor& upstream);

Tensor adaptive_avg_pool2d_backward(const Tensor& input, int out_h, int out_w,
                                    const Tensor& upstream);

Tensor upsample_nearest_backward(const Tensor& input, int out_h, int out_w,
                                 const Tensor& upstream);

// Generic dispatch by op name. Inputs are the forward inputs in signature
// order; attrs carry the non-tensor arguments. Returns one gradient per
// tensor input. Unknown op ids throw.
struct KernelAttrs {
    ConvSpec conv;
    int pool_k = 2;
    int pool_stride = 2;
    int out_h = 1;
    int out_w = 1;
    float eps = 1e-5f;
};
std::vector<Tensor> backward(std::string_view op_id, const std::vector<Tensor>& inputs,
                             const Tensor& upstream, const KernelAttrs& attrs = {});

// Per-thread op trace, for audits of which kernel configurations a forward
// pass actually executed. Only conv2d records entries.
struct TraceEntry {
    int stride = 1;
    int dilation = 1;
};

class TraceScope {
public:
    TraceScope();
    ~TraceScope();
    TraceScope(const TraceScope&) = delete;
    TraceScope& operator=(const TraceScope&) = delete;
    const std::vector<TraceEntry>& entries() const;
};

}  // namespace gf::kernels
