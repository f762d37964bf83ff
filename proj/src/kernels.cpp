#include "gf/kernels.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace gf::kernels {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

thread_local bool g_tracing = false;
thread_local std::vector<TraceEntry> g_trace;

}  // namespace

TraceScope::TraceScope() {
    g_tracing = true;
    g_trace.clear();
}

TraceScope::~TraceScope() { g_tracing = false; }

const std::vector<TraceEntry>& TraceScope::entries() const { return g_trace; }

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              const ConvSpec& spec) {
    require(input.rank() == 3, "conv2d: input must be CxHxW");
    require(kernel.rank() == 4, "conv2d: kernel must be OxCxKhxKw");
    require(spec.stride >= 1 && spec.dilation >= 1 && spec.padding >= 0,
            "conv2d: bad ConvSpec");
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    const int O = kernel.dim(0), KH = kernel.dim(2), KW = kernel.dim(3);
    require(kernel.dim(1) == C, "conv2d: channel mismatch");
    if (!bias.empty()) {
        require(bias.rank() == 1 && bias.dim(0) == O, "conv2d: bias length mismatch");
    }
    const int OH = conv_out_extent(H, KH, spec);
    const int OW = conv_out_extent(W, KW, spec);
    require(OH >= 1 && OW >= 1, "conv2d: output extents must be >= 1");
    if (g_tracing) g_trace.push_back(TraceEntry{spec.stride, spec.dilation});

    Tensor out({O, OH, OW});
    const float* x = input.data();
    const float* w = kernel.data();
    const int s = spec.stride, d = spec.dilation, p = spec.padding;

    for (int o = 0; o < O; ++o) {
        const float bias_val = bias.empty() ? 0.0f : bias.at(o);
        for (int ho = 0; ho < OH; ++ho) {
            const int hi0 = ho * s - p;
            for (int wo = 0; wo < OW; ++wo) {
                const int wi0 = wo * s - p;
                float acc = bias_val;
                for (int ci = 0; ci < C; ++ci) {
                    const float* xc = x + static_cast<size_t>(ci) * H * W;
                    const float* wc = w + (static_cast<size_t>(o) * C + ci) * KH * KW;
                    for (int kh = 0; kh < KH; ++kh) {
                        const int hi = hi0 + kh * d;
                        if (hi < 0 || hi >= H) continue;
                        const float* xrow = xc + static_cast<size_t>(hi) * W;
                        const float* wrow = wc + static_cast<size_t>(kh) * KW;
                        if (d == 1) {
                            const int kw_lo = std::max(0, -wi0);
                            const int kw_hi = std::min(KW, W - wi0);
                            for (int kw = kw_lo; kw < kw_hi; ++kw) {
                                acc += xrow[wi0 + kw] * wrow[kw];
                            }
                        } else {
                            for (int kw = 0; kw < KW; ++kw) {
                                const int wi = wi0 + kw * d;
                                if (wi < 0 || wi >= W) continue;
                                acc += xrow[wi] * wrow[kw];
                            }
                        }
                    }
                }
                out.at(o, ho, wo) = acc;
            }
        }
    }
    check_finite(out, "conv2d");
    return out;
}

namespace {

// Channel layout shared by batchnorm for rank-1 and rank-3 inputs:
// rank-3 maps normalize per leading channel, vectors per element.
void bn_layout(const Tensor& input, int& channels, int& inner) {
    if (input.rank() == 3) {
        channels = input.dim(0);
        inner = input.dim(1) * input.dim(2);
    } else if (input.rank() == 1) {
        channels = input.dim(0);
        inner = 1;
    } else {
        throw std::invalid_argument("batchnorm_infer: input must be rank 1 or 3");
    }
}

}  // namespace

Tensor batchnorm_infer(const Tensor& input, const Tensor& mean, const Tensor& var,
                       const Tensor& gamma, const Tensor& beta, float eps) {
    int C = 0, inner = 0;
    bn_layout(input, C, inner);
    require(mean.numel() == C && var.numel() == C && gamma.numel() == C &&
                beta.numel() == C,
            "batchnorm_infer: per-channel parameter length mismatch");
    for (int c = 0; c < C; ++c) {
        if (var.at(c) < 0.0f) {
            throw std::invalid_argument("batchnorm_infer: negative variance");
        }
    }
    Tensor out(input.shape());
    for (int c = 0; c < C; ++c) {
        const float inv = 1.0f / std::sqrt(var.at(c) + eps);
        const float g = gamma.at(c), b = beta.at(c), m = mean.at(c);
        const float* src = input.data() + static_cast<size_t>(c) * inner;
        float* dst = out.data() + static_cast<size_t>(c) * inner;
        for (int i = 0; i < inner; ++i) dst[i] = g * (src[i] - m) * inv + b;
    }
    check_finite(out, "batchnorm_infer");
    return out;
}

Tensor relu(const Tensor& input) {
    Tensor out(input.shape());
    const float* src = input.data();
    float* dst = out.data();
    for (int64_t i = 0; i < input.numel(); ++i) dst[i] = src[i] > 0.0f ? src[i] : 0.0f;
    return out;
}

Tensor max_pool2d(const Tensor& input, int k, int stride) {
    require(input.rank() == 3, "max_pool2d: input must be CxHxW");
    require(k >= 1 && stride >= 1, "max_pool2d: bad window");
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    const int OH = (H - k) / stride + 1;
    const int OW = (W - k) / stride + 1;
    require(H >= k && W >= k, "max_pool2d: window larger than input");
    Tensor out({C, OH, OW});
    for (int c = 0; c < C; ++c) {
        for (int ho = 0; ho < OH; ++ho) {
            for (int wo = 0; wo < OW; ++wo) {
                float m = input.at(c, ho * stride, wo * stride);
                for (int kh = 0; kh < k; ++kh) {
                    for (int kw = 0; kw < k; ++kw) {
                        m = std::max(m, input.at(c, ho * stride + kh, wo * stride + kw));
                    }
                }
                out.at(c, ho, wo) = m;
            }
        }
    }
    check_finite(out, "max_pool2d");
    return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require(input.rank() == 1, "linear: input must be a vector");
    require(weight.rank() == 2, "linear: weight must be a matrix");
    const int D_in = input.dim(0);
    const int D_out = weight.dim(0);
    require(weight.dim(1) == D_in, "linear: weight/input dim mismatch");
    if (!bias.empty()) {
        require(bias.rank() == 1 && bias.dim(0) == D_out, "linear: bias length mismatch");
    }
    Tensor out({D_out});
    const float* x = input.data();
    for (int i = 0; i < D_out; ++i) {
        const float* wrow = weight.data() + static_cast<size_t>(i) * D_in;
        float acc = bias.empty() ? 0.0f : bias.at(i);
        for (int j = 0; j < D_in; ++j) acc += wrow[j] * x[j];
        out.at(i) = acc;
    }
    check_finite(out, "linear");
    return out;
}

Tensor softmax(const Tensor& input) {
    require(input.rank() == 1, "softmax: input must be a vector");
    const int n = input.dim(0);
    float m = input.at(0);
    for (int i = 1; i < n; ++i) m = std::max(m, input.at(i));
    Tensor out({n});
    double sum = 0.0;  // double accumulation keeps the unit-sum tight at any n
    for (int i = 0; i < n; ++i) {
        const float e = std::exp(input.at(i) - m);
        out.at(i) = e;
        sum += e;
    }
    for (int i = 0; i < n; ++i) {
        out.at(i) = static_cast<float>(static_cast<double>(out.at(i)) / sum);
    }
    check_finite(out, "softmax");
    return out;
}

namespace {

inline int bin_lo(int i, int in, int out) { return (i * in) / out; }
inline int bin_hi(int i, int in, int out) { return ((i + 1) * in + out - 1) / out; }

}  // namespace

Tensor adaptive_avg_pool2d(const Tensor& input, int out_h, int out_w) {
    require(input.rank() == 3, "adaptive_avg_pool2d: input must be CxHxW");
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    require(out_h >= 1 && out_h <= H && out_w >= 1 && out_w <= W,
            "adaptive_avg_pool2d: output extents must be in [1, input extents]");
    Tensor out({C, out_h, out_w});
    for (int c = 0; c < C; ++c) {
        for (int i = 0; i < out_h; ++i) {
            const int r0 = bin_lo(i, H, out_h), r1 = bin_hi(i, H, out_h);
            for (int j = 0; j < out_w; ++j) {
                const int c0 = bin_lo(j, W, out_w), c1 = bin_hi(j, W, out_w);
                float acc = 0.0f;
                for (int r = r0; r < r1; ++r) {
                    for (int q = c0; q < c1; ++q) acc += input.at(c, r, q);
                }
                out.at(c, i, j) = acc / static_cast<float>((r1 - r0) * (c1 - c0));
            }
        }
    }
    check_finite(out, "adaptive_avg_pool2d");
    return out;
}

Tensor upsample_nearest(const Tensor& input, int out_h, int out_w) {
    require(input.rank() == 3, "upsample_nearest: input must be CxHxW");
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    require(out_h >= 1 && out_w >= 1, "upsample_nearest: bad output extents");
    Tensor out({C, out_h, out_w});
    for (int c = 0; c < C; ++c) {
        for (int i = 0; i < out_h; ++i) {
            const int si = static_cast<int>((static_cast<int64_t>(i) * H) / out_h);
            for (int j = 0; j < out_w; ++j) {
                const int sj = static_cast<int>((static_cast<int64_t>(j) * W) / out_w);
                out.at(c, i, j) = input.at(c, si, sj);
            }
        }
    }
    return out;
}

Tensor concat_channels(const std::vector<const Tensor*>& maps) {
    require(!maps.empty(), "concat_channels: no inputs");
    const int H = maps[0]->dim(1), W = maps[0]->dim(2);
    int C = 0;
    for (const Tensor* t : maps) {
        require(t->rank() == 3 && t->dim(1) == H && t->dim(2) == W,
                "concat_channels: spatial extents mismatch");
        C += t->dim(0);
    }
    Tensor out({C, H, W});
    float* dst = out.data();
    for (const Tensor* t : maps) {
        std::copy(t->data(), t->data() + t->numel(), dst);
        dst += t->numel();
    }
    return out;
}

Tensor global_avg_pool(const Tensor& input) {
    require(input.rank() == 3, "global_avg_pool: input must be CxHxW");
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    Tensor out({C});
    for (int c = 0; c < C; ++c) {
        float acc = 0.0f;
        const float* src = input.data() + static_cast<size_t>(c) * H * W;
        for (int i = 0; i < H * W; ++i) acc += src[i];
        out.at(c) = acc / static_cast<float>(H * W);
    }
    check_finite(out, "global_avg_pool");
    return out;
}

Tensor dilate_kernel(const Tensor& kernel, int dilation) {
    require(kernel.rank() == 4, "dilate_kernel: kernel must be OxCxKhxKw");
    require(dilation >= 1, "dilate_kernel: dilation must be >= 1");
    const int O = kernel.dim(0), C = kernel.dim(1), KH = kernel.dim(2), KW = kernel.dim(3);
    const int DKH = dilation * (KH - 1) + 1;
    const int DKW = dilation * (KW - 1) + 1;
    Tensor out({O, C, DKH, DKW});
    for (int o = 0; o < O; ++o) {
        for (int c = 0; c < C; ++c) {
            for (int kh = 0; kh < KH; ++kh) {
                for (int kw = 0; kw < KW; ++kw) {
                    out.at(o, c, kh * dilation, kw * dilation) = kernel.at(o, c, kh, kw);
                }
            }
        }
    }
    return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernel,
                            const ConvSpec& spec, const Tensor& upstream) {
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    const int O = kernel.dim(0), KH = kernel.dim(2), KW = kernel.dim(3);
    const int OH = conv_out_extent(H, KH, spec);
    const int OW = conv_out_extent(W, KW, spec);
    require(upstream.rank() == 3 && upstream.dim(0) == O && upstream.dim(1) == OH &&
                upstream.dim(2) == OW,
            "conv2d_backward: upstream shape mismatch");

    Conv2dGrads g{Tensor(input.shape()), Tensor(kernel.shape()), Tensor({O})};
    const int s = spec.stride, d = spec.dilation, p = spec.padding;
    for (int o = 0; o < O; ++o) {
        float db = 0.0f;
        for (int ho = 0; ho < OH; ++ho) {
            const int hi0 = ho * s - p;
            for (int wo = 0; wo < OW; ++wo) {
                const int wi0 = wo * s - p;
                const float up = upstream.at(o, ho, wo);
                db += up;
                if (up == 0.0f) continue;
                for (int ci = 0; ci < C; ++ci) {
                    for (int kh = 0; kh < KH; ++kh) {
                        const int hi = hi0 + kh * d;
                        if (hi < 0 || hi >= H) continue;
                        for (int kw = 0; kw < KW; ++kw) {
                            const int wi = wi0 + kw * d;
                            if (wi < 0 || wi >= W) continue;
                            g.input.at(ci, hi, wi) += kernel.at(o, ci, kh, kw) * up;
                            g.kernel.at(o, ci, kh, kw) += input.at(ci, hi, wi) * up;
                        }
                    }
                }
            }
        }
        g.bias.at(o) = db;
    }
    return g;
}

BatchnormGrads batchnorm_infer_backward(const Tensor& input, const Tensor& mean,
                                        const Tensor& var, const Tensor& gamma,
                                        float eps, const Tensor& upstream) {
    int C = 0, inner = 0;
    bn_layout(input, C, inner);
    require(upstream.same_shape(input), "batchnorm_infer_backward: upstream shape mismatch");
    BatchnormGrads g{Tensor(input.shape()), Tensor({C}), Tensor({C})};
    for (int c = 0; c < C; ++c) {
        const float inv = 1.0f / std::sqrt(var.at(c) + eps);
        const float gm = gamma.at(c), m = mean.at(c);
        const float* x = input.data() + static_cast<size_t>(c) * inner;
        const float* up = upstream.data() + static_cast<size_t>(c) * inner;
        float* dx = g.input.data() + static_cast<size_t>(c) * inner;
        float dgamma = 0.0f, dbeta = 0.0f;
        for (int i = 0; i < inner; ++i) {
            dx[i] = up[i] * gm * inv;
            dgamma += up[i] * (x[i] - m) * inv;
            dbeta += up[i];
        }
        g.gamma.at(c) = dgamma;
        g.beta.at(c) = dbeta;
    }
    return g;
}

Tensor relu_backward(const Tensor& input, const Tensor& upstream) {
    require(upstream.same_shape(input), "relu_backward: upstream shape mismatch");
    Tensor g(input.shape());
    for (int64_t i = 0; i < input.numel(); ++i) {
        g.at(static_cast<int>(i)) =
            input.at(static_cast<int>(i)) > 0.0f ? upstream.at(static_cast<int>(i)) : 0.0f;
    }
    return g;
}

Tensor max_pool2d_backward(const Tensor& input, int k, int stride,
                           const Tensor& upstream) {
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    const int OH = (H - k) / stride + 1;
    const int OW = (W - k) / stride + 1;
    require(upstream.rank() == 3 && upstream.dim(0) == C && upstream.dim(1) == OH &&
                upstream.dim(2) == OW,
            "max_pool2d_backward: upstream shape mismatch");
    Tensor g(input.shape());
    for (int c = 0; c < C; ++c) {
        for (int ho = 0; ho < OH; ++ho) {
            for (int wo = 0; wo < OW; ++wo) {
                // first maximum in row-major window order receives the gradient
                int bh = ho * stride, bw = wo * stride;
                float m = input.at(c, bh, bw);
                for (int kh = 0; kh < k; ++kh) {
                    for (int kw = 0; kw < k; ++kw) {
                        const float v = input.at(c, ho * stride + kh, wo * stride + kw);
                        if (v > m) {
                            m = v;
                            bh = ho * stride + kh;
                            bw = wo * stride + kw;
                        }
                    }
                }
                g.at(c, bh, bw) += upstream.at(c, ho, wo);
            }
        }
    }
    return g;
}

LinearGrads linear_backward(const Tensor& input, const Tensor& weight,
                            const Tensor& upstream) {
    const int D_in = input.dim(0);
    const int D_out = weight.dim(0);
    require(upstream.rank() == 1 && upstream.dim(0) == D_out,
            "linear_backward: upstream shape mismatch");
    LinearGrads g{Tensor({D_in}), Tensor(weight.shape()), Tensor({D_out})};
    for (int i = 0; i < D_out; ++i) {
        const float up = upstream.at(i);
        g.bias.at(i) = up;
        const float* wrow = weight.data() + static_cast<size_t>(i) * D_in;
        float* gwrow = g.weight.data() + static_cast<size_t>(i) * D_in;
        for (int j = 0; j < D_in; ++j) {
            g.input.at(j) += wrow[j] * up;
            gwrow[j] = input.at(j) * up;
        }
    }
    return g;
}

Tensor softmax_backward(const Tensor& output, const Tensor& upstream) {
    require(upstream.same_shape(output), "softmax_backward: upstream shape mismatch");
    const int n = output.dim(0);
    float dot = 0.0f;
    for (int i = 0; i < n; ++i) dot += output.at(i) * upstream.at(i);
    Tensor g({n});
    for (int i = 0; i < n; ++i) g.at(i) = output.at(i) * (upstream.at(i) - dot);
    return g;
}

Tensor adaptive_avg_pool2d_backward(const Tensor& input, int out_h, int out_w,
                                    const Tensor& upstream) {
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    require(upstream.rank() == 3 && upstream.dim(0) == C && upstream.dim(1) == out_h &&
                upstream.dim(2) == out_w,
            "adaptive_avg_pool2d_backward: upstream shape mismatch");
    Tensor g(input.shape());
    for (int c = 0; c < C; ++c) {
        for (int i = 0; i < out_h; ++i) {
            const int r0 = bin_lo(i, H, out_h), r1 = bin_hi(i, H, out_h);
            for (int j = 0; j < out_w; ++j) {
                const int c0 = bin_lo(j, W, out_w), c1 = bin_hi(j, W, out_w);
                const float share =
                    upstream.at(c, i, j) / static_cast<float>((r1 - r0) * (c1 - c0));
                for (int r = r0; r < r1; ++r) {
                    for (int q = c0; q < c1; ++q) g.at(c, r, q) += share;
                }
            }
        }
    }
    return g;
}

Tensor upsample_nearest_backward(const Tensor& input, int out_h, int out_w,
                                 const Tensor& upstream) {
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    require(upstream.rank() == 3 && upstream.dim(0) == C && upstream.dim(1) == out_h &&
                upstream.dim(2) == out_w,
            "upsample_nearest_backward: upstream shape mismatch");
    Tensor g(input.shape());
    for (int c = 0; c < C; ++c) {
        for (int i = 0; i < out_h; ++i) {
            const int si = static_cast<int>((static_cast<int64_t>(i) * H) / out_h);
            for (int j = 0; j < out_w; ++j) {
                const int sj = static_cast<int>((static_cast<int64_t>(j) * W) / out_w);
                g.at(c, si, sj) += upstream.at(c, i, j);
            }
        }
    }
    return g;
}

std::vector<Tensor> backward(std::string_view op_id, const std::vector<Tensor>& inputs,
                             const Tensor& upstream, const KernelAttrs& attrs) {
    if (op_id == "conv2d") {
        require(inputs.size() == 3, "backward(conv2d): expected input, kernel, bias");
        auto g = conv2d_backward(inputs[0], inputs[1], attrs.conv, upstream);
        return {g.input, g.kernel, g.bias};
    }
    if (op_id == "batchnorm_infer") {
        require(inputs.size() == 5,
                "backward(batchnorm_infer): expected input, mean, var, gamma, beta");
        const Tensor& input = inputs[0];
        const Tensor& mean = inputs[1];
        const Tensor& var = inputs[2];
        const Tensor& gamma = inputs[3];
        auto g = batchnorm_infer_backward(input, mean, var, gamma, attrs.eps, upstream);
        // frozen statistics still have well-defined gradients
        int C = 0, inner = 0;
        bn_layout(input, C, inner);
        Tensor dmean({C}), dvar({C});
        for (int c = 0; c < C; ++c) {
            const float inv = 1.0f / std::sqrt(var.at(c) + attrs.eps);
            float sum_up = 0.0f, sum_up_xm = 0.0f;
            for (int i = 0; i < inner; ++i) {
                const float up = upstream.values()[static_cast<size_t>(c) * inner + i];
                const float xm = input.values()[static_cast<size_t>(c) * inner + i] - mean.at(c);
                sum_up += up;
                sum_up_xm += up * xm;
            }
            dmean.at(c) = -gamma.at(c) * inv * sum_up;
            dvar.at(c) = -0.5f * gamma.at(c) * inv * inv * inv * sum_up_xm;
        }
        return {g.input, dmean, dvar, g.gamma, g.beta};
    }
    if (op_id == "relu") {
        require(inputs.size() == 1, "backward(relu): expected one input");
        return {relu_backward(inputs[0], upstream)};
    }
    if (op_id == "max_pool2d") {
        require(inputs.size() == 1, "backward(max_pool2d): expected one input");
        return {max_pool2d_backward(inputs[0], attrs.pool_k, attrs.pool_stride, upstream)};
    }
    if (op_id == "linear") {
        require(inputs.size() == 3, "backward(linear): expected input, weight, bias");
        auto g = linear_backward(inputs[0], inputs[1], upstream);
        return {g.input, g.weight, g.bias};
    }
    if (op_id == "softmax") {
        require(inputs.size() == 1, "backward(softmax): expected one input");
        return {softmax_backward(softmax(inputs[0]), upstream)};
    }
    if (op_id == "adaptive_avg_pool2d") {
        require(inputs.size() == 1, "backward(adaptive_avg_pool2d): expected one input");
        return {adaptive_avg_pool2d_backward(inputs[0], attrs.out_h, attrs.out_w, upstream)};
    }
    if (op_id == "upsample_nearest") {
        require(inputs.size() == 1, "backward(upsample_nearest): expected one input");
        return {upsample_nearest_backward(inputs[0], attrs.out_h, attrs.out_w, upstream)};
    }
    throw std::invalid_argument("backward: unknown op_id '" + std::string(op_id) + "'");
}

}  // namespace gf::kernels
