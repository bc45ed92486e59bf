#include "merits/graph.hpp"

#include <cassert>
#include <cmath>
#include <limits>
#include <memory>

namespace merits::ad {

Var Graph::make(Matrix value, bool needs_grad) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.owned = std::move(value);
    n.value = &n.owned;
    n.needs_grad = needs_grad;
    if (needs_grad) n.grad = Matrix(n.owned.rows(), n.owned.cols());
    order_.push_back(&n);
    return &n;
}

Var Graph::make_from(const Matrix* external, bool needs_grad) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.value = external;
    n.needs_grad = needs_grad;
    if (needs_grad) n.grad = Matrix(external->rows(), external->cols());
    order_.push_back(&n);
    return &n;
}

Var Graph::leaf(Matrix v, bool needs_grad) { return make(std::move(v), needs_grad); }

Var Graph::param(Parameter& p) {
    auto it = param_lookup_.find(&p);
    if (it != param_lookup_.end()) return it->second;
    Var n = make_from(&p.value, true);
    n->param = &p;
    param_nodes_.push_back(n);
    param_lookup_.emplace(&p, n);
    return n;
}

Var Graph::zeros(std::size_t rows, std::size_t cols) {
    return make(Matrix(rows, cols), false);
}

Var Graph::matmul(Var a, Var b) {
    Var out = make(mm(a->v(), b->v()), a->needs_grad || b->needs_grad);
    if (out->needs_grad)
        out->back = [a, b, out] {
            if (a->needs_grad) add_inplace(a->grad, mm_nt(out->grad, b->v()));
            if (b->needs_grad) add_inplace(b->grad, mm_tn(a->v(), out->grad));
        };
    return out;
}

Var Graph::matmul_nt(Var a, Var b) {
    Var out = make(mm_nt(a->v(), b->v()), a->needs_grad || b->needs_grad);
    if (out->needs_grad)
        out->back = [a, b, out] {
            if (a->needs_grad) add_inplace(a->grad, mm(out->grad, b->v()));
            if (b->needs_grad) add_inplace(b->grad, mm_tn(out->grad, a->v()));
        };
    return out;
}

Var Graph::add(Var a, Var b) {
    assert(a->v().same_shape(b->v()));
    Matrix v = a->v();
    add_inplace(v, b->v());
    Var out = make(std::move(v), a->needs_grad || b->needs_grad);
    if (out->needs_grad)
        out->back = [a, b, out] {
            if (a->needs_grad) add_inplace(a->grad, out->grad);
            if (b->needs_grad) add_inplace(b->grad, out->grad);
        };
    return out;
}

Var Graph::sub(Var a, Var b) {
    assert(a->v().same_shape(b->v()));
    Matrix v = a->v();
    axpy_inplace(v, -1.0, b->v());
    Var out = make(std::move(v), a->needs_grad || b->needs_grad);
    if (out->needs_grad)
        out->back = [a, b, out] {
            if (a->needs_grad) add_inplace(a->grad, out->grad);
            if (b->needs_grad) axpy_inplace(b->grad, -1.0, out->grad);
        };
    return out;
}

Var Graph::add_rowvec(Var a, Var bias) {
    assert(bias->v().rows() == 1 && bias->v().cols() == a->v().cols());
    Matrix v = a->v();
    for (std::size_t i = 0; i < v.rows(); ++i)
        for (std::size_t j = 0; j < v.cols(); ++j) v(i, j) += bias->v()(0, j);
    Var out = make(std::move(v), a->needs_grad || bias->needs_grad);
    if (out->needs_grad)
        out->back = [a, bias, out] {
            if (a->needs_grad) add_inplace(a->grad, out->grad);
            if (bias->needs_grad) {
                const Matrix& g = out->grad;
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j)
                        bias->grad(0, j) += g(i, j);
            }
        };
    return out;
}

Var Graph::hadamard(Var a, Var b) {
    assert(a->v().same_shape(b->v()));
    Matrix v = a->v();
    {
        double* d = v.data();
        const double* s = b->v().data();
        for (std::size_t i = 0, e = v.size(); i < e; ++i) d[i] *= s[i];
    }
    Var out = make(std::move(v), a->needs_grad || b->needs_grad);
    if (out->needs_grad)
        out->back = [a, b, out] {
            const double* g = out->grad.data();
            if (a->needs_grad) {
                double* ga = a->grad.data();
                const double* vb = b->v().data();
                for (std::size_t i = 0, e = out->grad.size(); i < e; ++i)
                    ga[i] += g[i] * vb[i];
            }
            if (b->needs_grad) {
                double* gb = b->grad.data();
                const double* va = a->v().data();
                for (std::size_t i = 0, e = out->grad.size(); i < e; ++i)
                    gb[i] += g[i] * va[i];
            }
        };
    return out;
}

Var Graph::scale(Var a, double s) {
    Matrix v = a->v();
    scale_inplace(v, s);
    Var out = make(std::move(v), a->needs_grad);
    if (out->needs_grad)
        out->back = [a, s, out] { axpy_inplace(a->grad, s, out->grad); };
    return out;
}

Var Graph::one_minus(Var a) {
    Matrix v = a->v();
    {
        double* d = v.data();
        for (std::size_t i = 0, e = v.size(); i < e; ++i) d[i] = 1.0 - d[i];
    }
    Var out = make(std::move(v), a->needs_grad);
    if (out->needs_grad)
        out->back = [a, out] { axpy_inplace(a->grad, -1.0, out->grad); };
    return out;
}

Var Graph::tanh_op(Var a) {
    Matrix v = a->v();
    {
        double* d = v.data();
        for (std::size_t i = 0, e = v.size(); i < e; ++i) d[i] = std::tanh(d[i]);
    }
    Var out = make(std::move(v), a->needs_grad);
    if (out->needs_grad)
        out->back = [a, out] {
            double* ga = a->grad.data();
            const double* y = out->v().data();
            const double* g = out->grad.data();
            for (std::size_t i = 0, e = out->grad.size(); i < e; ++i)
                ga[i] += g[i] * (1.0 - y[i] * y[i]);
        };
    return out;
}

Var Graph::sigmoid_op(Var a) {
    Matrix v = a->v();
    {
        double* d = v.data();
        for (std::size_t i = 0, e = v.size(); i < e; ++i)
            d[i] = 1.0 / (1.0 + std::exp(-d[i]));
    }
    Var out = make(std::move(v), a->needs_grad);
    if (out->needs_grad)
        out->back = [a, out] {
            double* ga = a->grad.data();
            const double* y = out->v().data();
            const double* g = out->grad.data();
            for (std::size_t i = 0, e = out->grad.size(); i < e; ++i)
                ga[i] += g[i] * y[i] * (1.0 - y[i]);
        };
    return out;
}

Var Graph::relu_op(Var a) {
    Matrix v = a->v();
    {
        double* d = v.data();
        for (std::size_t i = 0, e = v.size(); i < e; ++i)
            if (d[i] < 0.0) d[i] = 0.0;
    }
    Var out = make(std::move(v), a->needs_grad);
    if (out->needs_grad)
        out->back = [a, out] {
            double* ga = a->grad.data();
            const double* x = a->v().data();
            const double* g = out->grad.data();
            for (std::size_t i = 0, e = out->grad.size(); i < e; ++i)
                if (x[i] > 0.0) ga[i] += g[i];
        };
    return out;
}

Var Graph::concat_cols(Var a, Var b) {
    assert(a->v().rows() == b->v().rows());
    const std::size_t r = a->v().rows(), ca = a->v().cols(), cb = b->v().cols();
    Matrix v(r, ca + cb);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < ca; ++j) v(i, j) = a->v()(i, j);
        for (std::size_t j = 0; j < cb; ++j) v(i, ca + j) = b->v()(i, j);
    }
    Var out = make(std::move(v), a->needs_grad || b->needs_grad);
    if (out->needs_grad)
        out->back = [a, b, ca, out] {
            const Matrix& g = out->grad;
            if (a->needs_grad)
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < ca; ++j) a->grad(i, j) += g(i, j);
            if (b->needs_grad)
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = ca; j < g.cols(); ++j)
                        b->grad(i, j - ca) += g(i, j);
        };
    return out;
}

Var Graph::slice_cols(Var a, std::size_t j0, std::size_t j1) {
    assert(j0 < j1 && j1 <= a->v().cols());
    const std::size_t r = a->v().rows(), w = j1 - j0;
    Matrix v(r, w);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) v(i, j) = a->v()(i, j0 + j);
    Var out = make(std::move(v), a->needs_grad);
    if (out->needs_grad)
        out->back = [a, j0, out] {
            const Matrix& g = out->grad;
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j)
                    a->grad(i, j0 + j) += g(i, j);
        };
    return out;
}

Var Graph::concat_rows(const std::vector<Var>& parts) {
    assert(!parts.empty());
    const std::size_t c = parts[0]->v().cols();
    std::size_t total = 0;
    bool needs = false;
    for (Var p : parts) {
        assert(p->v().cols() == c);
        total += p->v().rows();
        needs = needs || p->needs_grad;
    }
    Matrix v(total, c);
    std::size_t at = 0;
    for (Var p : parts) {
        for (std::size_t i = 0; i < p->v().rows(); ++i)
            for (std::size_t j = 0; j < c; ++j) v(at + i, j) = p->v()(i, j);
        at += p->v().rows();
    }
    Var out = make(std::move(v), needs);
    if (out->needs_grad) {
        std::vector<Var> ps = parts;
        out->back = [ps, out] {
            const Matrix& g = out->grad;
            std::size_t at = 0;
            for (Var p : ps) {
                if (p->needs_grad)
                    for (std::size_t i = 0; i < p->v().rows(); ++i)
                        for (std::size_t j = 0; j < g.cols(); ++j)
                            p->grad(i, j) += g(at + i, j);
                at += p->v().rows();
            }
        };
    }
    return out;
}

Var Graph::slice_rows(Var a, std::size_t i0, std::size_t i1) {
    assert(i0 < i1 && i1 <= a->v().rows());
    const std::size_t h = i1 - i0, c = a->v().cols();
    Matrix v(h, c);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < c; ++j) v(i, j) = a->v()(i0 + i, j);
    Var out = make(std::move(v), a->needs_grad);
    if (out->needs_grad)
        out->back = [a, i0, out] {
            const Matrix& g = out->grad;
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j)
                    a->grad(i0 + i, j) += g(i, j);
        };
    return out;
}

Var Graph::softmax_rows(Var scores, const std::vector<bool>* key_valid) {
    const Matrix& s = scores->v();
    assert(!key_valid || key_valid->size() == s.cols());
    Matrix w(s.rows(), s.cols());
    for (std::size_t i = 0; i < s.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < s.cols(); ++j)
            if (!key_valid || (*key_valid)[j]) mx = std::max(mx, s(i, j));
        assert(mx > -std::numeric_limits<double>::infinity());
        double z = 0.0;
        for (std::size_t j = 0; j < s.cols(); ++j) {
            if (!key_valid || (*key_valid)[j]) {
                w(i, j) = std::exp(s(i, j) - mx);
                z += w(i, j);
            } else {
                w(i, j) = 0.0;
            }
        }
        for (std::size_t j = 0; j < s.cols(); ++j) w(i, j) /= z;
    }
    Var out = make(std::move(w), scores->needs_grad);
    if (out->needs_grad)
        out->back = [scores, out] {
            // dL/ds_j = w_j * (g_j - sum_k g_k w_k); zero weight => zero grad.
            const Matrix& wv = out->v();
            const Matrix& g = out->grad;
            for (std::size_t i = 0; i < wv.rows(); ++i) {
                double inner = 0.0;
                for (std::size_t j = 0; j < wv.cols(); ++j)
                    inner += g(i, j) * wv(i, j);
                for (std::size_t j = 0; j < wv.cols(); ++j)
                    scores->grad(i, j) += wv(i, j) * (g(i, j) - inner);
            }
        };
    return out;
}

Var Graph::layer_norm(Var x, Var gain, Var bias, double eps) {
    const Matrix& xv = x->v();
    const std::size_t r = xv.rows(), c = xv.cols();
    assert(gain->v().rows() == 1 && gain->v().cols() == c);
    assert(bias->v().rows() == 1 && bias->v().cols() == c);
    Matrix y(r, c);
    Matrix xhat(r, c);
    std::vector<double> inv_sd(r);
    for (std::size_t i = 0; i < r; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += xv(i, j);
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = xv(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        inv_sd[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            xhat(i, j) = (xv(i, j) - mu) * inv_sd[i];
            y(i, j) = xhat(i, j) * gain->v()(0, j) + bias->v()(0, j);
        }
    }
    Var out = make(std::move(y), x->needs_grad || gain->needs_grad || bias->needs_grad);
    if (out->needs_grad) {
        auto xh = std::make_shared<Matrix>(std::move(xhat));
        auto isd = std::make_shared<std::vector<double>>(std::move(inv_sd));
        out->back = [x, gain, bias, out, xh, isd] {
            const Matrix& g = out->grad;
            const std::size_t r = g.rows(), c = g.cols();
            if (gain->needs_grad)
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        gain->grad(0, j) += g(i, j) * (*xh)(i, j);
            if (bias->needs_grad)
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) bias->grad(0, j) += g(i, j);
            if (x->needs_grad) {
                for (std::size_t i = 0; i < r; ++i) {
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dxh = g(i, j) * gain->v()(0, j);
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * (*xh)(i, j);
                    }
                    mean_dxhat /= static_cast<double>(c);
                    mean_dxhat_xhat /= static_cast<double>(c);
                    for (std::size_t j = 0; j < c; ++j) {
                        const double dxh = g(i, j) * gain->v()(0, j);
                        x->grad(i, j) += (*isd)[i] * (dxh - mean_dxhat -
                                                      (*xh)(i, j) * mean_dxhat_xhat);
                    }
                }
            }
        };
    }
    return out;
}

Var Graph::embedding_mean(Var table, const std::vector<int>& ids) {
    assert(!ids.empty());
    const Matrix& t = table->v();
    Matrix v(1, t.cols());
    for (int id : ids) {
        assert(id >= 0 && static_cast<std::size_t>(id) < t.rows());
        for (std::size_t j = 0; j < t.cols(); ++j) v(0, j) += t(id, j);
    }
    scale_inplace(v, 1.0 / static_cast<double>(ids.size()));
    Var out = make(std::move(v), table->needs_grad);
    if (out->needs_grad) {
        std::vector<int> captured = ids;
        out->back = [table, captured, out] {
            const double inv = 1.0 / static_cast<double>(captured.size());
            const Matrix& g = out->grad;
            for (int id : captured)
                for (std::size_t j = 0; j < g.cols(); ++j)
                    table->grad(id, j) += g(0, j) * inv;
        };
    }
    return out;
}

Var Graph::cross_entropy(Var logits, const std::vector<int>& labels,
                         const std::vector<bool>* row_mask, double normalizer) {
    const Matrix& z = logits->v();
    assert(labels.size() == z.rows());
    assert(!row_mask || row_mask->size() == z.rows());
    assert(normalizer > 0.0);
    // Cache the softmax for the backward pass.
    auto probs = std::make_shared<Matrix>(z.rows(), z.cols());
    double total = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        double mx = z(i, 0);
        for (std::size_t j = 1; j < z.cols(); ++j) mx = std::max(mx, z(i, j));
        double lse = 0.0;
        for (std::size_t j = 0; j < z.cols(); ++j) lse += std::exp(z(i, j) - mx);
        lse = mx + std::log(lse);
        for (std::size_t j = 0; j < z.cols(); ++j)
            (*probs)(i, j) = std::exp(z(i, j) - lse);
        if (!row_mask || (*row_mask)[i]) {
            assert(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < z.cols());
            total += lse - z(i, static_cast<std::size_t>(labels[i]));
        }
    }
    Matrix v(1, 1);
    v(0, 0) = total / normalizer;
    Var out = make(std::move(v), logits->needs_grad);
    if (out->needs_grad) {
        std::vector<int> caps = labels;
        std::vector<bool> mask = row_mask ? *row_mask : std::vector<bool>();
        out->back = [logits, caps, mask, normalizer, probs, out] {
            const double s = out->grad(0, 0) / normalizer;
            for (std::size_t i = 0; i < probs->rows(); ++i) {
                if (!mask.empty() && !mask[i]) continue;
                for (std::size_t j = 0; j < probs->cols(); ++j) {
                    double d = (*probs)(i, j);
                    if (j == static_cast<std::size_t>(caps[i])) d -= 1.0;
                    logits->grad(i, j) += s * d;
                }
            }
        };
    }
    return out;
}

void Graph::backward(Var loss) {
    assert(!ran_backward_);
    assert(loss->v().rows() == 1 && loss->v().cols() == 1);
    ran_backward_ = true;
    if (!loss->needs_grad) return;
    loss->grad(0, 0) = 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node* n = *it;
        if (n->back && n->needs_grad) n->back();
    }
    for (Node* n : param_nodes_) add_inplace(n->param->grad, n->grad);
}

Matrix eval(const std::function<Var(Graph&)>& fn) {
    Graph g;
    return fn(g)->v();
}

}  // namespace merits::ad
