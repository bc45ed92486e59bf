#include "merits/fusion.hpp"

#include "merits/checkpoint.hpp"
#include "merits/evalkit.hpp"
#include "merits/training_loop.hpp"

namespace merits {

std::string to_string(FusionKind k) {
    return k == FusionKind::coattention ? "coattention" : "concat";
}

FusionKind fusion_kind_from_string(const std::string& s) {
    if (s == "coattention") return FusionKind::coattention;
    if (s == "concat") return FusionKind::concat;
    throw ConfigError("unknown fusion kind: \"" + s + "\"");
}

CoAttentionBlock CoAttentionBlock::create(CoAttentionConfig cfg, nn::Rng& rng) {
    CoAttentionBlock b;
    b.cfg = cfg;
    const std::size_t d = cfg.dim;
    const std::size_t ff = cfg.ff_mult * d;
    b.cross_a = nn::Attention("cross_a", d, cfg.heads);
    b.cross_t = nn::Attention("cross_t", d, cfg.heads);
    b.ln_cross_a = nn::LayerNorm("ln_cross_a", d);
    b.ln_cross_t = nn::LayerNorm("ln_cross_t", d);
    b.self_a = nn::Attention("self_a", d, cfg.heads);
    b.self_t = nn::Attention("self_t", d, cfg.heads);
    b.ln_self_a = nn::LayerNorm("ln_self_a", d);
    b.ln_self_t = nn::LayerNorm("ln_self_t", d);
    b.ff_a1 = nn::Linear("ff_a1", d, ff);
    b.ff_a2 = nn::Linear("ff_a2", ff, d);
    b.ff_t1 = nn::Linear("ff_t1", d, ff);
    b.ff_t2 = nn::Linear("ff_t2", ff, d);
    b.ln_ff_a = nn::LayerNorm("ln_ff_a", d);
    b.ln_ff_t = nn::LayerNorm("ln_ff_t", d);
    b.cross_a.init(rng);
    b.cross_t.init(rng);
    b.self_a.init(rng);
    b.self_t.init(rng);
    b.ff_a1.init(rng);
    b.ff_a2.init(rng);
    b.ff_t1.init(rng);
    b.ff_t2.init(rng);
    // Shrink every residual branch's output projection so the block starts
    // close to the identity; the post-norm stack does not train reliably
    // from plain xavier scales.
    for (Parameter* p : {&b.cross_a.wo.w, &b.cross_t.wo.w, &b.self_a.wo.w,
                         &b.self_t.wo.w, &b.ff_a2.w, &b.ff_t2.w})
        scale_inplace(p->value, 0.1);
    return b;
}

void CoAttentionBlock::collect(std::vector<Parameter*>& out) {
    cross_a.collect(out);
    cross_t.collect(out);
    ln_cross_a.collect(out);
    ln_cross_t.collect(out);
    self_a.collect(out);
    self_t.collect(out);
    ff_a1.collect(out);
    ff_a2.collect(out);
    ff_t1.collect(out);
    ff_t2.collect(out);
    ln_ff_a.collect(out);
    ln_ff_t.collect(out);
}

std::pair<ad::Var, ad::Var> CoAttentionBlock::forward(ad::Graph& g, ad::Var a, ad::Var t,
                                                      const std::vector<bool>& mask,
                                                      CoAttentionTrace* trace) {
    if (a->v().rows() != t->v().rows() || a->v().cols() != t->v().cols())
        throw IntegrityError("co-attention streams must share length and width");
    if (a->v().cols() != cfg.dim)
        throw ConfigError("co-attention stream width " + std::to_string(a->v().cols()) +
                          " does not match the block width " + std::to_string(cfg.dim));
    if (mask.size() != a->v().rows())
        throw IntegrityError("mask length does not match sequence");
    bool any = false;
    for (bool m : mask) any = any || m;
    if (!any) throw DomainError("mask excludes every position");

    ad::Var ca = nn::multihead_attention(g, cross_a, a, t, &mask,
                                         trace ? &trace->cross_a : nullptr);
    ad::Var ct = nn::multihead_attention(g, cross_t, t, a, &mask,
                                         trace ? &trace->cross_t : nullptr);
    ad::Var a1 = ln_cross_a(g, g.add(a, ca));
    ad::Var t1 = ln_cross_t(g, g.add(t, ct));

    ad::Var sa = nn::multihead_attention(g, self_a, a1, a1, &mask,
                                         trace ? &trace->self_a : nullptr);
    ad::Var st = nn::multihead_attention(g, self_t, t1, t1, &mask,
                                         trace ? &trace->self_t : nullptr);
    ad::Var a2 = ln_self_a(g, g.add(a1, sa));
    ad::Var t2 = ln_self_t(g, g.add(t1, st));

    ad::Var fa = ff_a2(g, g.relu_op(ff_a1(g, a2)));
    ad::Var ft = ff_t2(g, g.relu_op(ff_t1(g, t2)));
    return {ln_ff_a(g, g.add(a2, fa)), ln_ff_t(g, g.add(t2, ft))};
}

std::pair<Matrix, Matrix> coattention_forward(CoAttentionBlock& block, const Matrix& a,
                                              const Matrix& t,
                                              const std::vector<bool>& mask,
                                              CoAttentionTrace* trace) {
    ad::Graph g;
    auto [fa, ft] = block.forward(g, g.leaf(a), g.leaf(t), mask, trace);
    return {fa->v(), ft->v()};
}

Matrix concat_fusion(const Matrix& a, const Matrix& t) {
    if (a.rows() != t.rows())
        throw IntegrityError("cannot concatenate streams of different lengths");
    Matrix out(a.rows(), a.cols() + t.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
        for (std::size_t j = 0; j < t.cols(); ++j) out(i, a.cols() + j) = t(i, j);
    }
    return out;
}

Stage3Model Stage3Model::create(FusionKind kind, std::size_t d2, std::size_t n_classes,
                                CoAttentionConfig cfg, std::uint64_t seed) {
    Stage3Model m;
    m.kind = kind;
    m.d2 = d2;
    m.n_classes = n_classes;
    m.cfg = cfg;
    nn::Rng rng(seed);
    const std::size_t fused_width =
        kind == FusionKind::coattention ? 2 * cfg.dim : 2 * d2;
    if (kind == FusionKind::coattention) {
        m.proj_a = nn::Linear("proj_a", d2, cfg.dim);
        m.proj_t = nn::Linear("proj_t", d2, cfg.dim);
        m.proj_a.init(rng);
        m.proj_t.init(rng);
        if (d2 == cfg.dim) {
            // Start the input projections at the identity so the classifier
            // initially sees the frozen features unrotated; a random square
            // projection adds nothing the block cannot learn and slows the
            // early epochs down noticeably.
            for (nn::Linear* proj : {&m.proj_a, &m.proj_t}) {
                proj->w.value.fill(0.0);
                for (std::size_t i = 0; i < d2; ++i) proj->w.value(i, i) = 1.0;
            }
        }
        m.block = CoAttentionBlock::create(cfg, rng);
    }
    m.cls_hidden = nn::Linear("cls_hidden", fused_width, cfg.dim);
    m.cls_out = nn::Linear("cls_out", cfg.dim, n_classes);
    m.cls_hidden.init(rng);
    m.cls_out.init(rng);
    return m;
}

std::vector<Parameter*> Stage3Model::parameters() {
    std::vector<Parameter*> out;
    if (kind == FusionKind::coattention) {
        proj_a.collect(out);
        proj_t.collect(out);
        block.collect(out);
    }
    cls_hidden.collect(out);
    cls_out.collect(out);
    return out;
}

ad::Var Stage3Model::logits(ad::Graph& g, ad::Var seq_a, ad::Var seq_t,
                            const std::vector<bool>& mask) {
    if (seq_a->v().cols() != d2 || seq_t->v().cols() != d2)
        throw ConfigError("fused classifier expects width " + std::to_string(d2) +
                          " per stream");
    ad::Var fused = nullptr;
    if (kind == FusionKind::coattention) {
        auto [fa, ft] = block.forward(g, proj_a(g, seq_a), proj_t(g, seq_t), mask);
        fused = g.concat_cols(fa, ft);
    } else {
        fused = g.concat_cols(seq_a, seq_t);
    }
    return cls_out(g, g.tanh_op(cls_hidden(g, fused)));
}

PathwaySequences pathway_sequences(FrozenPathway& path, const Conversation& conv) {
    PathwaySequences out;
    out.speech = stage2_sequence(*path.speech2,
                                 stage1_sequence(*path.speech1, conv, path.store));
    out.text = stage2_sequence(*path.text2,
                               stage1_sequence(*path.text1, conv, path.store));
    return out;
}

namespace {

struct PreparedPairs {
    std::vector<Matrix> speech, text;
    std::vector<std::vector<int>> labels;
};

PreparedPairs prepare_pairs(FrozenPathway& path, const Dataset& ds) {
    PreparedPairs prep;
    for (const Conversation& conv : ds.conversations) {
        PathwaySequences seqs = pathway_sequences(path, conv);
        prep.speech.push_back(std::move(seqs.speech.matrix));
        prep.text.push_back(std::move(seqs.text.matrix));
        std::vector<int> labels;
        for (const Utterance& u : conv.utterances) labels.push_back(u.gold_label);
        prep.labels.push_back(std::move(labels));
    }
    return prep;
}

}  // namespace

Stage3TrainResult stage3_train(FrozenPathway& path, const Dataset& train,
                               const Dataset& val, const TrainConfig& cfg,
                               FusionKind kind) {
    if (!path.text1 || !path.speech1 || !path.text2 || !path.speech2)
        throw DependencyError("fused training needs both earlier-stage models");
    if (path.text2->cfg.feature_dim() != path.speech2->cfg.feature_dim())
        throw ConfigError("per-modality conversation features disagree on width");

    Stage3TrainResult result;
    result.model = Stage3Model::create(kind, path.text2->cfg.feature_dim(),
                                       train.label_space.size(), CoAttentionConfig{},
                                       cfg.seed);
    Stage3Model& model = result.model;
    auto params = model.parameters();

    PreparedPairs prep = prepare_pairs(path, train);

    result.history = run_training(
        prep.labels.size(), cfg, params,
        [&](const std::vector<std::size_t>& batch) {
            std::size_t total = 0;
            for (std::size_t i : batch) total += prep.labels[i].size();
            ad::Graph g;
            ad::Var loss = nullptr;
            for (std::size_t i : batch) {
                std::vector<bool> mask(prep.labels[i].size(), true);
                ad::Var z = model.logits(g, g.leaf(prep.speech[i]), g.leaf(prep.text[i]),
                                         mask);
                ad::Var part = g.cross_entropy(z, prep.labels[i], nullptr,
                                               static_cast<double>(total));
                loss = loss ? g.add(loss, part) : part;
            }
            const double value = loss->v()(0, 0);
            g.backward(loss);
            return value;
        },
        [&] { return evaluate(stage3_scorer(path, model), val).weighted_f1; });
    return result;
}

std::function<Matrix(const Conversation&)> stage3_scorer(FrozenPathway& path,
                                                         Stage3Model& model) {
    return [&path, &model](const Conversation& conv) {
        PathwaySequences seqs = pathway_sequences(path, conv);
        std::vector<bool> mask(conv.utterances.size(), true);
        return ad::eval([&](ad::Graph& g) {
            return model.logits(g, g.leaf(std::move(seqs.speech.matrix)),
                                g.leaf(std::move(seqs.text.matrix)), mask);
        });
    };
}

std::vector<std::uint8_t> Stage3Model::to_blob() const {
    BlobWriter w;
    w.str(to_string(kind));
    w.u64(d2);
    w.u64(n_classes);
    w.u64(cfg.dim);
    w.u64(cfg.heads);
    w.u64(cfg.ff_mult);
    std::vector<Parameter*> params = const_cast<Stage3Model*>(this)->parameters();
    for (const Parameter* p : params) w.mat(p->value);
    return w.take();
}

Stage3Model Stage3Model::from_blob(const std::vector<std::uint8_t>& blob) {
    BlobReader r(blob);
    const FusionKind kind = fusion_kind_from_string(r.str());
    const std::size_t d2 = r.u64();
    const std::size_t n_classes = r.u64();
    CoAttentionConfig cfg;
    cfg.dim = r.u64();
    cfg.heads = r.u64();
    cfg.ff_mult = r.u64();
    Stage3Model m = Stage3Model::create(kind, d2, n_classes, cfg, 0);
    for (Parameter* p : m.parameters()) {
        Matrix v = r.mat();
        if (!v.same_shape(p->value))
            throw ParseError("fused model blob has a misshapen " + p->name);
        p->value = std::move(v);
    }
    if (!r.done()) throw ParseError("trailing bytes in fused model blob");
    return m;
}

}  // namespace merits
