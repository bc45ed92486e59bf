#include "merits/nn.hpp"

#include <cassert>
#include <cmath>

namespace merits::nn {

void xavier_uniform(Parameter& p, Rng& rng) {
    const double fan_in = static_cast<double>(p.value.rows());
    const double fan_out = static_cast<double>(p.value.cols());
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    double* d = p.value.data();
    for (std::size_t i = 0, e = p.value.size(); i < e; ++i) d[i] = dist(rng);
}

void normal_init(Parameter& p, double sd, Rng& rng) {
    std::normal_distribution<double> dist(0.0, sd);
    double* d = p.value.data();
    for (std::size_t i = 0, e = p.value.size(); i < e; ++i) d[i] = dist(rng);
}

ad::Var multihead_attention(ad::Graph& g, Attention& at, ad::Var q_in, ad::Var kv_in,
                            const std::vector<bool>* key_valid,
                            AttentionTrace* trace) {
    const std::size_t dim = at.wq.in_dim();
    assert(q_in->v().cols() == dim && kv_in->v().cols() == dim);
    assert(dim % at.heads == 0);
    const std::size_t dh = dim / at.heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    ad::Var q = at.wq(g, q_in);
    ad::Var k = at.wk(g, kv_in);
    ad::Var v = at.wv(g, kv_in);

    std::vector<ad::Var> ctx;
    ctx.reserve(at.heads);
    ad::Var merged = nullptr;
    for (std::size_t h = 0; h < at.heads; ++h) {
        ad::Var qh = g.slice_cols(q, h * dh, (h + 1) * dh);
        ad::Var kh = g.slice_cols(k, h * dh, (h + 1) * dh);
        ad::Var vh = g.slice_cols(v, h * dh, (h + 1) * dh);
        ad::Var scores = g.scale(g.matmul_nt(qh, kh), inv_scale);
        ad::Var w = g.softmax_rows(scores, key_valid);
        if (trace) trace->head_weights.push_back(w->v());
        ad::Var c = g.matmul(w, vh);
        merged = merged ? g.concat_cols(merged, c) : c;
    }
    return at.wo(g, merged);
}

void AdamW::step(const std::vector<Parameter*>& params) {
    ++steps;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    for (Parameter* p : params) {
        if (p->adam_m.empty()) {
            p->adam_m = Matrix(p->value.rows(), p->value.cols());
            p->adam_v = Matrix(p->value.rows(), p->value.cols());
        }
        double* val = p->value.data();
        double* grd = p->grad.data();
        double* m = p->adam_m.data();
        double* v = p->adam_v.data();
        for (std::size_t i = 0, e = p->value.size(); i < e; ++i) {
            // Decoupled weight decay, applied before the moment update.
            val[i] -= lr * weight_decay * val[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * grd[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grd[i] * grd[i];
            val[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }
}

double global_grad_norm(const std::vector<Parameter*>& params) {
    double total = 0.0;
    for (const Parameter* p : params) total += dot_all(p->grad, p->grad);
    return std::sqrt(total);
}

void clip_grad_norm(const std::vector<Parameter*>& params, double max_norm) {
    if (max_norm <= 0.0) return;
    const double norm = global_grad_norm(params);
    if (norm <= max_norm) return;
    const double s = max_norm / norm;
    for (Parameter* p : params) scale_inplace(p->grad, s);
}

void zero_grads(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) p->zero_grad();
}

std::vector<Matrix> snapshot_values(const std::vector<Parameter*>& params) {
    std::vector<Matrix> snap;
    snap.reserve(params.size());
    for (const Parameter* p : params) snap.push_back(p->value);
    return snap;
}

void restore_values(const std::vector<Parameter*>& params,
                    const std::vector<Matrix>& snap) {
    assert(params.size() == snap.size());
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = snap[i];
}

std::size_t count_scalars(const std::vector<Parameter*>& params) {
    std::size_t n = 0;
    for (const Parameter* p : params) n += p->value.size();
    return n;
}

}  // namespace merits::nn
