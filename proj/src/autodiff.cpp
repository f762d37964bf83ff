#include "gf/autodiff.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "gf/roi.h"

namespace gf::ad {

namespace {

Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents) {
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) n->backprop = std::move(fn);
    return n;
}

Tensor scalar(float v) { return Tensor({1}, std::vector<float>{v}); }

}  // namespace

void Node::accumulate(const Tensor& g) {
    if (!g.same_shape(value)) {
        throw std::invalid_argument("autodiff: gradient shape mismatch");
    }
    if (grad.empty()) {
        grad = g;
        return;
    }
    float* dst = grad.data();
    const float* src = g.data();
    for (int64_t i = 0; i < grad.numel(); ++i) dst[i] += src[i];
}

Var leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

void backward(const Var& root, const Tensor& upstream) {
    if (!root->requires_grad) return;
    // iterative post-order over grad-requiring nodes
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
        Node* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            Node* p = f.node->parents[f.next_parent++].get();
            if (p->requires_grad && visited.insert(p).second) {
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
    root->accumulate(upstream);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->grad.empty() && n->backprop) n->backprop(*n);
    }
}

void backward(const Var& root) { backward(root, Tensor(root->value.shape(), 1.0f)); }

Var conv2d(const Var& x, const Var& w, const Var& b, const ConvSpec& spec) {
    Tensor out = kernels::conv2d(x->value, w->value, b ? b->value : Tensor(), spec);
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make(std::move(out), std::move(parents), [x, w, b, spec](Node& self) {
        auto g = kernels::conv2d_backward(x->value, w->value, spec, self.grad);
        if (x->requires_grad) x->accumulate(g.input);
        if (w->requires_grad) w->accumulate(g.kernel);
        if (b && b->requires_grad) b->accumulate(g.bias);
    });
}

Var batchnorm(const Var& x, const Var& gamma, const Var& beta, const Tensor& mean,
              const Tensor& var, float eps) {
    Tensor out =
        kernels::batchnorm_infer(x->value, mean, var, gamma->value, beta->value, eps);
    return make(std::move(out), {x, gamma, beta}, [x, gamma, beta, mean, var, eps](Node& self) {
        auto g = kernels::batchnorm_infer_backward(x->value, mean, var, gamma->value, eps,
                                                   self.grad);
        if (x->requires_grad) x->accumulate(g.input);
        if (gamma->requires_grad) gamma->accumulate(g.gamma);
        if (beta->requires_grad) beta->accumulate(g.beta);
    });
}

Var relu(const Var& x) {
    return make(kernels::relu(x->value), {x}, [x](Node& self) {
        x->accumulate(kernels::relu_backward(x->value, self.grad));
    });
}

Var max_pool2d(const Var& x, int k, int stride) {
    return make(kernels::max_pool2d(x->value, k, stride), {x}, [x, k, stride](Node& self) {
        x->accumulate(kernels::max_pool2d_backward(x->value, k, stride, self.grad));
    });
}

Var adaptive_avg_pool2d(const Var& x, int out_h, int out_w) {
    return make(kernels::adaptive_avg_pool2d(x->value, out_h, out_w), {x},
                [x, out_h, out_w](Node& self) {
                    x->accumulate(kernels::adaptive_avg_pool2d_backward(x->value, out_h,
                                                                        out_w, self.grad));
                });
}

Var upsample_nearest(const Var& x, int out_h, int out_w) {
    return make(kernels::upsample_nearest(x->value, out_h, out_w), {x},
                [x, out_h, out_w](Node& self) {
                    x->accumulate(kernels::upsample_nearest_backward(x->value, out_h, out_w,
                                                                     self.grad));
                });
}

Var concat_channels(const std::vector<Var>& xs) {
    std::vector<const Tensor*> maps;
    maps.reserve(xs.size());
    for (const auto& v : xs) maps.push_back(&v->value);
    Tensor out = kernels::concat_channels(maps);
    return make(std::move(out), xs, [xs](Node& self) {
        int64_t offset = 0;
        for (const auto& p : xs) {
            if (p->requires_grad) {
                Tensor g(p->value.shape());
                std::copy(self.grad.data() + offset, self.grad.data() + offset + g.numel(),
                          g.data());
                p->accumulate(g);
            }
            offset += p->value.numel();
        }
    });
}

Var global_avg_pool(const Var& x) {
    return make(kernels::global_avg_pool(x->value), {x}, [x](Node& self) {
        const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
        Tensor g(x->value.shape());
        for (int c = 0; c < C; ++c) {
            const float share = self.grad.at(c) / static_cast<float>(H * W);
            float* dst = g.data() + static_cast<size_t>(c) * H * W;
            for (int i = 0; i < H * W; ++i) dst[i] = share;
        }
        x->accumulate(g);
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    Tensor out = kernels::linear(x->value, w->value, b ? b->value : Tensor());
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make(std::move(out), std::move(parents), [x, w, b](Node& self) {
        auto g = kernels::linear_backward(x->value, w->value, self.grad);
        if (x->requires_grad) x->accumulate(g.input);
        if (w->requires_grad) w->accumulate(g.weight);
        if (b && b->requires_grad) b->accumulate(g.bias);
    });
}

Var add(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) {
        throw std::invalid_argument("add: shape mismatch");
    }
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        out.data()[i] = a->value.data()[i] + b->value.data()[i];
    }
    return make(std::move(out), {a, b}, [a, b](Node& self) {
        if (a->requires_grad) a->accumulate(self.grad);
        if (b->requires_grad) b->accumulate(self.grad);
    });
}

Var mul(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) {
        throw std::invalid_argument("mul: shape mismatch");
    }
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        out.data()[i] = a->value.data()[i] * b->value.data()[i];
    }
    return make(std::move(out), {a, b}, [a, b](Node& self) {
        if (a->requires_grad) {
            Tensor g(a->value.shape());
            for (int64_t i = 0; i < g.numel(); ++i) {
                g.data()[i] = self.grad.data()[i] * b->value.data()[i];
            }
            a->accumulate(g);
        }
        if (b->requires_grad) {
            Tensor g(b->value.shape());
            for (int64_t i = 0; i < g.numel(); ++i) {
                g.data()[i] = self.grad.data()[i] * a->value.data()[i];
            }
            b->accumulate(g);
        }
    });
}

Var scale(const Var& a, float c) {
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = a->value.data()[i] * c;
    return make(std::move(out), {a}, [a, c](Node& self) {
        Tensor g(a->value.shape());
        for (int64_t i = 0; i < g.numel(); ++i) g.data()[i] = self.grad.data()[i] * c;
        a->accumulate(g);
    });
}

Var concat_vec(const Var& a, const Var& b) {
    if (a->value.rank() != 1 || b->value.rank() != 1) {
        throw std::invalid_argument("concat_vec: rank-1 inputs expected");
    }
    const int na = a->value.dim(0), nb = b->value.dim(0);
    Tensor out({na + nb});
    std::copy(a->value.data(), a->value.data() + na, out.data());
    std::copy(b->value.data(), b->value.data() + nb, out.data() + na);
    return make(std::move(out), {a, b}, [a, b, na, nb](Node& self) {
        if (a->requires_grad) {
            Tensor g({na});
            std::copy(self.grad.data(), self.grad.data() + na, g.data());
            a->accumulate(g);
        }
        if (b->requires_grad) {
            Tensor g({nb});
            std::copy(self.grad.data() + na, self.grad.data() + na + nb, g.data());
            b->accumulate(g);
        }
    });
}

Var stack_scalars(const std::vector<Var>& scalars) {
    if (scalars.empty()) throw std::invalid_argument("stack_scalars: empty input");
    Tensor out({static_cast<int>(scalars.size())});
    for (size_t i = 0; i < scalars.size(); ++i) {
        if (scalars[i]->value.numel() != 1) {
            throw std::invalid_argument("stack_scalars: inputs must be scalars");
        }
        out.at(static_cast<int>(i)) = scalars[i]->value.at(0);
    }
    return make(std::move(out), scalars, [scalars](Node& self) {
        for (size_t i = 0; i < scalars.size(); ++i) {
            if (scalars[i]->requires_grad) {
                scalars[i]->accumulate(scalar(self.grad.at(static_cast<int>(i))));
            }
        }
    });
}

Var row(const Var& matrix, int i) {
    if (matrix->value.rank() != 2) throw std::invalid_argument("row: matrix expected");
    const int N = matrix->value.dim(0), D = matrix->value.dim(1);
    if (i < 0 || i >= N) throw std::out_of_range("row: index out of range");
    Tensor out({D});
    std::copy(matrix->value.data() + static_cast<size_t>(i) * D,
              matrix->value.data() + static_cast<size_t>(i + 1) * D, out.data());
    return make(std::move(out), {matrix}, [matrix, i, D](Node& self) {
        Tensor g(matrix->value.shape());
        std::copy(self.grad.data(), self.grad.data() + D,
                  g.data() + static_cast<size_t>(i) * D);
        matrix->accumulate(g);
    });
}

Var elements(const Var& x, const std::vector<int64_t>& flat_indices) {
    if (flat_indices.empty()) throw std::invalid_argument("elements: empty index list");
    Tensor out({static_cast<int>(flat_indices.size())});
    for (size_t i = 0; i < flat_indices.size(); ++i) {
        const int64_t idx = flat_indices[i];
        if (idx < 0 || idx >= x->value.numel()) {
            throw std::out_of_range("elements: index out of range");
        }
        out.at(static_cast<int>(i)) = x->value.data()[idx];
    }
    return make(std::move(out), {x}, [x, flat_indices](Node& self) {
        Tensor g(x->value.shape());
        for (size_t i = 0; i < flat_indices.size(); ++i) {
            g.data()[flat_indices[i]] += self.grad.at(static_cast<int>(i));
        }
        x->accumulate(g);
    });
}

Var rows_from_grid(const Var& map) {
    if (map->value.rank() != 3) throw std::invalid_argument("rows_from_grid: CxHxW expected");
    const int C = map->value.dim(0), H = map->value.dim(1), W = map->value.dim(2);
    Tensor out({H * W, C});
    for (int c = 0; c < C; ++c) {
        for (int r = 0; r < H; ++r) {
            for (int q = 0; q < W; ++q) out.at(r * W + q, c) = map->value.at(c, r, q);
        }
    }
    return make(std::move(out), {map}, [map, C, H, W](Node& self) {
        Tensor g(map->value.shape());
        for (int c = 0; c < C; ++c) {
            for (int r = 0; r < H; ++r) {
                for (int q = 0; q < W; ++q) g.at(c, r, q) = self.grad.at(r * W + q, c);
            }
        }
        map->accumulate(g);
    });
}

Var flatten(const Var& x) {
    Tensor out({static_cast<int>(x->value.numel())}, x->value.values());
    return make(std::move(out), {x}, [x](Node& self) {
        x->accumulate(Tensor(x->value.shape(), self.grad.values()));
    });
}

Var embedding_mean(const Var& table, const std::vector<int>& ids) {
    if (table->value.rank() != 2) {
        throw std::invalid_argument("embedding_mean: table must be VxE");
    }
    if (ids.empty()) throw std::invalid_argument("embedding_mean: empty id list");
    const int V = table->value.dim(0), E = table->value.dim(1);
    for (int id : ids) {
        if (id < 0 || id >= V) throw std::out_of_range("embedding_mean: id out of range");
    }
    Tensor out({E});
    for (int id : ids) {
        const float* r = table->value.data() + static_cast<size_t>(id) * E;
        for (int e = 0; e < E; ++e) out.at(e) += r[e];
    }
    const float inv = 1.0f / static_cast<float>(ids.size());
    for (int e = 0; e < E; ++e) out.at(e) *= inv;
    return make(std::move(out), {table}, [table, ids, E, inv](Node& self) {
        Tensor g(table->value.shape());
        for (int id : ids) {
            float* r = g.data() + static_cast<size_t>(id) * E;
            for (int e = 0; e < E; ++e) r[e] += self.grad.at(e) * inv;
        }
        table->accumulate(g);
    });
}

Var masked_softmax(const Var& scores, const std::vector<bool>& mask) {
    if (scores->value.rank() != 1) {
        throw std::invalid_argument("masked_softmax: vector expected");
    }
    const int n = scores->value.dim(0);
    if (static_cast<int>(mask.size()) != n) {
        throw std::invalid_argument("masked_softmax: mask length mismatch");
    }
    float m = -std::numeric_limits<float>::infinity();
    for (int i = 0; i < n; ++i) {
        if (mask[static_cast<size_t>(i)]) m = std::max(m, scores->value.at(i));
    }
    if (!std::isfinite(m)) throw std::invalid_argument("masked_softmax: all rows masked");
    Tensor out({n});
    double sum = 0.0;  // double accumulation keeps the unit-sum tight at any n
    for (int i = 0; i < n; ++i) {
        if (mask[static_cast<size_t>(i)]) {
            out.at(i) = std::exp(scores->value.at(i) - m);
            sum += out.at(i);
        }
    }
    for (int i = 0; i < n; ++i) {
        out.at(i) = static_cast<float>(static_cast<double>(out.at(i)) / sum);
    }
    Tensor saved = out;
    return make(std::move(out), {scores}, [scores, saved, n](Node& self) {
        float dot = 0.0f;
        for (int i = 0; i < n; ++i) dot += saved.at(i) * self.grad.at(i);
        Tensor g({n});
        for (int i = 0; i < n; ++i) g.at(i) = saved.at(i) * (self.grad.at(i) - dot);
        scores->accumulate(g);
    });
}

Var weighted_sum_rows(const Var& weights, const Var& rows) {
    if (weights->value.rank() != 1 || rows->value.rank() != 2 ||
        weights->value.dim(0) != rows->value.dim(0)) {
        throw std::invalid_argument("weighted_sum_rows: shape mismatch");
    }
    const int N = rows->value.dim(0), D = rows->value.dim(1);
    Tensor out({D});
    for (int i = 0; i < N; ++i) {
        const float w = weights->value.at(i);
        const float* r = rows->value.data() + static_cast<size_t>(i) * D;
        for (int d = 0; d < D; ++d) out.at(d) += w * r[d];
    }
    return make(std::move(out), {weights, rows}, [weights, rows, N, D](Node& self) {
        if (weights->requires_grad) {
            Tensor g({N});
            for (int i = 0; i < N; ++i) {
                const float* r = rows->value.data() + static_cast<size_t>(i) * D;
                float acc = 0.0f;
                for (int d = 0; d < D; ++d) acc += r[d] * self.grad.at(d);
                g.at(i) = acc;
            }
            weights->accumulate(g);
        }
        if (rows->requires_grad) {
            Tensor g(rows->value.shape());
            for (int i = 0; i < N; ++i) {
                const float w = weights->value.at(i);
                float* r = g.data() + static_cast<size_t>(i) * D;
                for (int d = 0; d < D; ++d) r[d] = w * self.grad.at(d);
            }
            rows->accumulate(g);
        }
    });
}

Var roi_pool(const Var& map, const Box& box, int k, int stride, bool mean_pool) {
    auto res = roi_pool_with_indices(map->value, box, k, stride, mean_pool);
    auto argmax = std::make_shared<std::vector<int>>(std::move(res.argmax));
    return make(std::move(res.pooled), {map},
                [map, box, k, stride, mean_pool, argmax](Node& self) {
                    const int D = map->value.dim(0);
                    const int H = map->value.dim(1), W = map->value.dim(2);
                    Tensor g(map->value.shape());
                    if (mean_pool) {
                        const auto bins = roi_bins(H, W, box, k, stride);
                        for (int d = 0; d < D; ++d) {
                            for (int bi = 0; bi < k * k; ++bi) {
                                const RoiBin& b = bins[static_cast<size_t>(bi)];
                                if (b.empty()) continue;
                                const float share =
                                    self.grad.data()[static_cast<size_t>(d) * k * k + bi] /
                                    static_cast<float>((b.r1 - b.r0) * (b.c1 - b.c0));
                                for (int r = b.r0; r < b.r1; ++r) {
                                    for (int c = b.c0; c < b.c1; ++c) {
                                        g.data()[(static_cast<size_t>(d) * H + r) * W + c] +=
                                            share;
                                    }
                                }
                            }
                        }
                    } else {
                        for (int d = 0; d < D; ++d) {
                            for (int bi = 0; bi < k * k; ++bi) {
                                const int arg = (*argmax)[static_cast<size_t>(d) * k * k + bi];
                                if (arg < 0) continue;
                                g.data()[static_cast<size_t>(d) * H * W + arg] +=
                                    self.grad.data()[static_cast<size_t>(d) * k * k + bi];
                            }
                        }
                    }
                    map->accumulate(g);
                });
}

Var bce_with_logits_mean(const Var& logits, const Tensor& targets) {
    if (!logits->value.same_shape(targets)) {
        throw std::invalid_argument("bce_with_logits_mean: target shape mismatch");
    }
    for (float t : targets.values()) {
        if (t < 0.0f || t > 1.0f) {
            throw std::invalid_argument("bce_with_logits_mean: targets must be in [0,1]");
        }
    }
    const int64_t n = targets.numel();
    float loss = 0.0f;
    for (int64_t i = 0; i < n; ++i) {
        const float z = logits->value.data()[i];
        const float t = targets.data()[i];
        loss += std::max(z, 0.0f) - z * t + std::log1p(std::exp(-std::abs(z)));
    }
    loss /= static_cast<float>(n);
    return make(scalar(loss), {logits}, [logits, targets, n](Node& self) {
        const float up = self.grad.at(0) / static_cast<float>(n);
        Tensor g(logits->value.shape());
        for (int64_t i = 0; i < n; ++i) {
            const float z = logits->value.data()[i];
            const float sig = 1.0f / (1.0f + std::exp(-z));
            g.data()[i] = (sig - targets.data()[i]) * up;
        }
        logits->accumulate(g);
    });
}

Var softmax_cross_entropy(const Var& logits, int label) {
    if (logits->value.rank() != 1) {
        throw std::invalid_argument("softmax_cross_entropy: vector expected");
    }
    const int n = logits->value.dim(0);
    if (label < 0 || label >= n) {
        throw std::out_of_range("softmax_cross_entropy: label index out of range");
    }
    float m = logits->value.at(0);
    for (int i = 1; i < n; ++i) m = std::max(m, logits->value.at(i));
    float sum = 0.0f;
    for (int i = 0; i < n; ++i) sum += std::exp(logits->value.at(i) - m);
    const float loss = std::log(sum) + m - logits->value.at(label);
    return make(scalar(loss), {logits}, [logits, label, n, m, sum](Node& self) {
        const float up = self.grad.at(0);
        Tensor g({n});
        for (int i = 0; i < n; ++i) {
            const float p = std::exp(logits->value.at(i) - m) / sum;
            g.at(i) = (p - (i == label ? 1.0f : 0.0f)) * up;
        }
        logits->accumulate(g);
    });
}

Var smooth_l1_mean(const Var& pred, const Tensor& target, float beta) {
    if (!pred->value.same_shape(target)) {
        throw std::invalid_argument("smooth_l1_mean: target shape mismatch");
    }
    const int64_t n = target.numel();
    float loss = 0.0f;
    for (int64_t i = 0; i < n; ++i) {
        const float e = pred->value.data()[i] - target.data()[i];
        const float a = std::abs(e);
        loss += a < beta ? 0.5f * e * e / beta : a - 0.5f * beta;
    }
    loss /= static_cast<float>(n);
    return make(scalar(loss), {pred}, [pred, target, beta, n](Node& self) {
        const float up = self.grad.at(0) / static_cast<float>(n);
        Tensor g(pred->value.shape());
        for (int64_t i = 0; i < n; ++i) {
            const float e = pred->value.data()[i] - target.data()[i];
            g.data()[i] = std::clamp(e / beta, -1.0f, 1.0f) * up;
        }
        pred->accumulate(g);
    });
}

Var sum_scalars(const std::vector<Var>& scalars) {
    if (scalars.empty()) throw std::invalid_argument("sum_scalars: empty input");
    float s = 0.0f;
    for (const auto& v : scalars) s += v->value.at(0);
    return make(scalar(s), scalars, [scalars](Node& self) {
        for (const auto& v : scalars) {
            if (v->requires_grad) v->accumulate(scalar(self.grad.at(0)));
        }
    });
}

Var mean_scalars(const std::vector<Var>& scalars) {
    Var s = sum_scalars(scalars);
    return scale(s, 1.0f / static_cast<float>(scalars.size()));
}

}  // namespace gf::ad
