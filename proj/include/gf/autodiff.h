#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "gf/box.h"
#include "gf/kernels.h"
#include "gf/tensor.h"

namespace gf::ad {

// Reverse-mode tape over the pure kernels. Forward ops record their parents
// and a closure that routes the node's gradient to them; backward() walks
// the graph once in reverse topological order. With requires_grad unset on
// every leaf the same code path doubles as plain inference.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    void accumulate(const Tensor& g);
};

using Var = std::shared_ptr<Node>;

Var leaf(Tensor value, bool requires_grad = false);
Var constant(Tensor value);

// Seeds the root gradient (all-ones unless given) and propagates.
void backward(const Var& root);
void backward(const Var& root, const Tensor& upstream);

// --- kernels on the tape ---
Var conv2d(const Var& x, const Var& w, const Var& b, const ConvSpec& spec);
Var batchnorm(const Var& x, const Var& gamma, const Var& beta, const Tensor& mean,
              const Tensor& var, float eps = 1e-5f);
Var relu(const Var& x);
Var max_pool2d(const Var& x, int k, int stride);
Var adaptive_avg_pool2d(const Var& x, int out_h, int out_w);
Var upsample_nearest(const Var& x, int out_h, int out_w);
Var concat_channels(const std::vector<Var>& xs);
Var global_avg_pool(const Var& x);
Var linear(const Var& x, const Var& w, const Var& b);

// --- structure ops ---
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float c);
Var concat_vec(const Var& a, const Var& b);
Var stack_scalars(const std::vector<Var>& scalars);
Var row(const Var& matrix, int i);
// gathers flat-indexed elements into a rank-1 vector
Var elements(const Var& x, const std::vector<int64_t>& flat_indices);
// map CxHxW -> (H*W) x C matrix, row r*W+c holds the channel vector of cell (r,c)
Var rows_from_grid(const Var& map);
Var flatten(const Var& x);
// mean of the table rows selected by ids
Var embedding_mean(const Var& table, const std::vector<int>& ids);
// softmax over scores with masked entries forced to exactly zero
Var masked_softmax(const Var& scores, const std::vector<bool>& mask);
// weights: N, rows: NxD -> D
Var weighted_sum_rows(const Var& weights, const Var& rows);

// Max RoI pooling on the tape (gradient flows to the argmax cells).
Var roi_pool(const Var& map, const Box& box, int k, int stride, bool mean_pool = false);

// --- losses (scalar outputs, shape [1]) ---
Var bce_with_logits_mean(const Var& logits, const Tensor& targets);
Var softmax_cross_entropy(const Var& logits, int label);
Var smooth_l1_mean(const Var& pred, const Tensor& target, float beta = 1.0f);
Var sum_scalars(const std::vector<Var>& scalars);
Var mean_scalars(const std::vector<Var>& scalars);

}  // namespace gf::ad
