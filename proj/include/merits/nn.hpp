#pragma once

#include <random>
#include <string>
#include <vector>

#include "merits/graph.hpp"
#include "merits/matrix.hpp"

namespace merits::nn {

using Rng = std::mt19937_64;

void xavier_uniform(Parameter& p, Rng& rng);
void normal_init(Parameter& p, double sd, Rng& rng);

struct Linear {
    Parameter w;  // in x out
    Parameter b;  // 1 x out

    Linear() = default;
    Linear(const std::string& name, std::size_t in, std::size_t out)
        : w(name + ".w", in, out), b(name + ".b", 1, out) {}

    void init(Rng& rng) { xavier_uniform(w, rng); }

    ad::Var operator()(ad::Graph& g, ad::Var x) {
        return g.add_rowvec(g.matmul(x, g.param(w)), g.param(b));
    }

    std::size_t in_dim() const { return w.value.rows(); }
    std::size_t out_dim() const { return w.value.cols(); }

    void collect(std::vector<Parameter*>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

struct LayerNorm {
    Parameter gain;  // 1 x dim
    Parameter bias;  // 1 x dim

    LayerNorm() = default;
    LayerNorm(const std::string& name, std::size_t dim)
        : gain(name + ".gain", 1, dim), bias(name + ".bias", 1, dim) {
        gain.value.fill(1.0);
    }

    ad::Var operator()(ad::Graph& g, ad::Var x) {
        return g.layer_norm(x, g.param(gain), g.param(bias));
    }

    void collect(std::vector<Parameter*>& out) {
        out.push_back(&gain);
        out.push_back(&bias);
    }
};

// One attention map per head, rows = query positions.
struct AttentionTrace {
    std::vector<Matrix> head_weights;
};

struct Attention {
    Linear wq, wk, wv, wo;
    std::size_t heads = 1;

    Attention() = default;
    Attention(const std::string& name, std::size_t dim, std::size_t n_heads)
        : wq(name + ".q", dim, dim),
          wk(name + ".k", dim, dim),
          wv(name + ".v", dim, dim),
          wo(name + ".o", dim, dim),
          heads(n_heads) {}

    void init(Rng& rng) {
        wq.init(rng);
        wk.init(rng);
        wv.init(rng);
        wo.init(rng);
    }

    void collect(std::vector<Parameter*>& out) {
        wq.collect(out);
        wk.collect(out);
        wv.collect(out);
        wo.collect(out);
    }
};

// Scaled dot-product attention over `heads` column blocks. Queries come from
// q_in, keys and values from kv_in (pass the same node for self-attention).
// key_valid masks key positions; masked keys get weight exactly 0. `trace`
// captures the post-softmax maps when provided.
ad::Var multihead_attention(ad::Graph& g, Attention& at, ad::Var q_in, ad::Var kv_in,
                            const std::vector<bool>* key_valid = nullptr,
                            AttentionTrace* trace = nullptr);

struct AdamW {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    long steps = 0;

    void step(const std::vector<Parameter*>& params);
};

double global_grad_norm(const std::vector<Parameter*>& params);
void clip_grad_norm(const std::vector<Parameter*>& params, double max_norm);
void zero_grads(const std::vector<Parameter*>& params);

std::vector<Matrix> snapshot_values(const std::vector<Parameter*>& params);
void restore_values(const std::vector<Parameter*>& params,
                    const std::vector<Matrix>& snap);
std::size_t count_scalars(const std::vector<Parameter*>& params);

}  // namespace merits::nn
