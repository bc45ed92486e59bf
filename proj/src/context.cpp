#include "merits/context.hpp"

#include "merits/checkpoint.hpp"
#include "merits/evalkit.hpp"
#include "merits/training_loop.hpp"

namespace merits {

std::string to_string(StageTag t) {
    return t == StageTag::stage1 ? "stage1" : "stage2";
}

ad::Var GruDirection::run(ad::Graph& g, ad::Var x, const std::vector<bool>& mask,
                          bool reverse) {
    const std::size_t k = x->v().rows();
    const std::size_t h = hidden();
    if (mask.size() != k) throw IntegrityError("mask length does not match sequence");

    // Input projection over the whole sequence; padded rows are projected but
    // never consumed, so their gradient stays exactly zero.
    ad::Var xp = g.add_rowvec(g.matmul(x, g.param(wx)), g.param(b));
    ad::Var wh_node = g.param(wh);

    std::vector<ad::Var> outs(k, nullptr);
    ad::Var prev = g.zeros(1, h);
    for (std::size_t step = 0; step < k; ++step) {
        const std::size_t t = reverse ? k - 1 - step : step;
        if (!mask[t]) {
            outs[t] = prev;  // hidden state glides over padding
            continue;
        }
        ad::Var xt = g.slice_rows(xp, t, t + 1);
        ad::Var hp = g.matmul(prev, wh_node);
        ad::Var r = g.sigmoid_op(g.add(g.slice_cols(xt, 0, h), g.slice_cols(hp, 0, h)));
        ad::Var z = g.sigmoid_op(
            g.add(g.slice_cols(xt, h, 2 * h), g.slice_cols(hp, h, 2 * h)));
        ad::Var n = g.tanh_op(g.add(g.slice_cols(xt, 2 * h, 3 * h),
                                    g.hadamard(r, g.slice_cols(hp, 2 * h, 3 * h))));
        ad::Var hnew = g.add(g.hadamard(g.one_minus(z), n), g.hadamard(z, prev));
        outs[t] = hnew;
        prev = hnew;
    }
    return g.concat_rows(outs);
}

Stage2Model Stage2Model::create(Modality modality, Stage2Config cfg,
                                std::uint64_t seed) {
    Stage2Model m;
    m.modality = modality;
    m.cfg = cfg;
    m.fwd = GruDirection("gru_fwd", cfg.input_dim, cfg.gru_hidden);
    m.bwd = GruDirection("gru_bwd", cfg.input_dim, cfg.gru_hidden);
    m.attn = nn::Attention("self_attn", cfg.feature_dim(), cfg.attn_heads);
    m.ln = nn::LayerNorm("ln", cfg.feature_dim());
    m.head = nn::Linear("head", cfg.feature_dim(), cfg.n_classes);
    nn::Rng rng(seed);
    m.fwd.init(rng);
    m.bwd.init(rng);
    m.attn.init(rng);
    m.head.init(rng);
    return m;
}

std::vector<Parameter*> Stage2Model::parameters() {
    std::vector<Parameter*> out;
    fwd.collect(out);
    bwd.collect(out);
    attn.collect(out);
    ln.collect(out);
    head.collect(out);
    return out;
}

Stage2Model::Forward Stage2Model::forward(ad::Graph& g, ad::Var x,
                                          const std::vector<bool>& mask,
                                          nn::AttentionTrace* trace) {
    if (x->v().cols() != cfg.input_dim)
        throw ConfigError("sequence width " + std::to_string(x->v().cols()) +
                          " does not match the configured input " +
                          std::to_string(cfg.input_dim));
    bool any = false;
    for (bool b : mask) any = any || b;
    if (!any) throw DomainError("mask excludes every position");

    ad::Var hf = fwd.run(g, x, mask, false);
    ad::Var hb = bwd.run(g, x, mask, true);
    ad::Var hcat = g.concat_cols(hf, hb);
    ad::Var att = nn::multihead_attention(g, attn, hcat, hcat, &mask, trace);
    Forward out;
    out.features = ln(g, g.add(hcat, att));
    out.logits = head(g, out.features);
    return out;
}

ContextOut context_forward(Stage2Model& model, const EmbeddingSequence& seq) {
    if (seq.stage_tag != StageTag::stage1)
        throw IntegrityError("conversation model consumes first-stage sequences, got " +
                             to_string(seq.stage_tag));
    if (seq.modality != model.modality)
        throw IntegrityError("sequence modality " + to_string(seq.modality) +
                             " does not match the model's " +
                             to_string(model.modality));
    ContextOut out;
    ad::Graph g;
    auto fwd = model.forward(g, g.leaf(seq.matrix), seq.mask);
    out.features = fwd.features->v();
    out.logits = fwd.logits->v();
    return out;
}

EmbeddingSequence stage1_sequence(Stage1Model& model, const Conversation& conv,
                                  const FeatureStore* store) {
    EmbeddingSequence seq;
    seq.conversation_id = conv.conversation_id;
    seq.matrix = stage1_embed_conversation(model, conv, store);
    seq.mask.assign(conv.utterances.size(), true);
    seq.stage_tag = StageTag::stage1;
    seq.modality = model.modality;
    return seq;
}

EmbeddingSequence stage2_sequence(Stage2Model& model, const EmbeddingSequence& s1) {
    ContextOut out = context_forward(model, s1);
    EmbeddingSequence seq;
    seq.conversation_id = s1.conversation_id;
    seq.matrix = std::move(out.features);
    seq.mask = s1.mask;
    seq.stage_tag = StageTag::stage2;
    seq.modality = model.modality;
    return seq;
}

namespace {

struct PreparedConversations {
    std::vector<Matrix> sequences;
    std::vector<std::vector<int>> labels;
    std::size_t utterances = 0;
};

PreparedConversations prepare(Stage1Model& stage1, const Dataset& ds,
                              const FeatureStore* store) {
    PreparedConversations prep;
    for (const Conversation& conv : ds.conversations) {
        prep.sequences.push_back(stage1_embed_conversation(stage1, conv, store));
        std::vector<int> labels;
        for (const Utterance& u : conv.utterances) labels.push_back(u.gold_label);
        prep.utterances += labels.size();
        prep.labels.push_back(std::move(labels));
    }
    return prep;
}

}  // namespace

Stage2TrainResult stage2_train(Stage1Model& stage1, const Dataset& train,
                               const Dataset& val, const FeatureStore* store,
                               const TrainConfig& cfg) {
    if (train.label_space.name() != val.label_space.name())
        throw ConfigError("train and val label spaces differ");

    Stage2Config mc;
    mc.input_dim = stage1.output_dim();
    mc.n_classes = train.label_space.size();

    Stage2TrainResult result;
    result.model = Stage2Model::create(stage1.modality, mc, cfg.seed);
    Stage2Model& model = result.model;
    auto params = model.parameters();

    PreparedConversations prep = prepare(stage1, train, store);

    result.history = run_training(
        prep.sequences.size(), cfg, params,
        [&](const std::vector<std::size_t>& batch) {
            std::size_t total = 0;
            for (std::size_t i : batch) total += prep.labels[i].size();
            ad::Graph g;
            ad::Var loss = nullptr;
            for (std::size_t i : batch) {
                std::vector<bool> mask(prep.labels[i].size(), true);
                auto fwd = model.forward(g, g.leaf(prep.sequences[i]), mask);
                ad::Var part = g.cross_entropy(fwd.logits, prep.labels[i], nullptr,
                                               static_cast<double>(total));
                loss = loss ? g.add(loss, part) : part;
            }
            const double value = loss->v()(0, 0);
            g.backward(loss);
            return value;
        },
        [&] { return evaluate(stage2_scorer(stage1, model, store), val).weighted_f1; });
    return result;
}

std::function<Matrix(const Conversation&)> stage2_scorer(Stage1Model& stage1,
                                                         Stage2Model& model,
                                                         const FeatureStore* store) {
    return [&stage1, &model, store](const Conversation& conv) {
        return context_forward(model, stage1_sequence(stage1, conv, store)).logits;
    };
}

void export_stage2_features(Stage1Model& stage1, Stage2Model& model, const Dataset& ds,
                            const FeatureStore* store,
                            const std::filesystem::path& file) {
    FeatureStore out(model.cfg.feature_dim());
    for (const Conversation& conv : ds.conversations) {
        const ContextOut fwd = context_forward(model, stage1_sequence(stage1, conv, store));
        for (std::size_t k = 0; k < conv.utterances.size(); ++k) {
            std::vector<float> vec(fwd.features.cols());
            for (std::size_t j = 0; j < fwd.features.cols(); ++j)
                vec[j] = static_cast<float>(fwd.features(k, j));
            out.insert(conv.utterances[k].utterance_id, std::move(vec));
        }
    }
    out.save(file, "stage2", to_string(model.modality));
}

std::vector<std::uint8_t> Stage2Model::to_blob() const {
    BlobWriter w;
    w.str(to_string(modality));
    w.u64(cfg.input_dim);
    w.u64(cfg.gru_hidden);
    w.u64(cfg.attn_heads);
    w.u64(cfg.n_classes);
    for (const Parameter* p :
         {&fwd.wx, &fwd.wh, &fwd.b, &bwd.wx, &bwd.wh, &bwd.b, &attn.wq.w, &attn.wq.b,
          &attn.wk.w, &attn.wk.b, &attn.wv.w, &attn.wv.b, &attn.wo.w, &attn.wo.b,
          &ln.gain, &ln.bias, &head.w, &head.b})
        w.mat(p->value);
    return w.take();
}

Stage2Model Stage2Model::from_blob(const std::vector<std::uint8_t>& blob) {
    BlobReader r(blob);
    const std::string mod = r.str();
    Stage2Config cfg;
    cfg.input_dim = r.u64();
    cfg.gru_hidden = r.u64();
    cfg.attn_heads = r.u64();
    cfg.n_classes = r.u64();
    Stage2Model m = Stage2Model::create(mod == "text" ? Modality::text : Modality::speech,
                                        cfg, 0);
    for (Parameter* p :
         {&m.fwd.wx, &m.fwd.wh, &m.fwd.b, &m.bwd.wx, &m.bwd.wh, &m.bwd.b, &m.attn.wq.w,
          &m.attn.wq.b, &m.attn.wk.w, &m.attn.wk.b, &m.attn.wv.w, &m.attn.wv.b,
          &m.attn.wo.w, &m.attn.wo.b, &m.ln.gain, &m.ln.bias, &m.head.w, &m.head.b}) {
        Matrix v = r.mat();
        if (!v.same_shape(p->value))
            throw ParseError("conversation model blob has a misshapen " + p->name);
        p->value = std::move(v);
    }
    if (!r.done()) throw ParseError("trailing bytes in conversation model blob");
    return m;
}

}  // namespace merits
