#pragma once

#include "merits/context.hpp"

namespace merits {

enum class FusionKind { coattention, concat };

std::string to_string(FusionKind k);
FusionKind fusion_kind_from_string(const std::string& s);

struct CoAttentionConfig {
    std::size_t dim = 256;
    std::size_t heads = 4;
    std::size_t ff_mult = 2;
};

struct CoAttentionTrace {
    nn::AttentionTrace cross_a, cross_t, self_a, self_t;
};

// Two-stream block: cross-attention (each stream queries the other), then
// per-stream self-attention, then a feed-forward, every sub-block wrapped in
// residual + layer normalization. The streams never share weights; position
// information comes only from the sequences themselves.
struct CoAttentionBlock {
    CoAttentionConfig cfg;
    nn::Attention cross_a, cross_t;  // a queries t / t queries a
    nn::LayerNorm ln_cross_a, ln_cross_t;
    nn::Attention self_a, self_t;
    nn::LayerNorm ln_self_a, ln_self_t;
    nn::Linear ff_a1, ff_a2, ff_t1, ff_t2;
    nn::LayerNorm ln_ff_a, ln_ff_t;

    static CoAttentionBlock create(CoAttentionConfig cfg, nn::Rng& rng);
    void collect(std::vector<Parameter*>& out);

    std::pair<ad::Var, ad::Var> forward(ad::Graph& g, ad::Var a, ad::Var t,
                                        const std::vector<bool>& mask,
                                        CoAttentionTrace* trace = nullptr);
};

// Evaluation-mode forward; both sequences must share length and width, and
// the mask must keep at least one position.
std::pair<Matrix, Matrix> coattention_forward(CoAttentionBlock& block, const Matrix& a,
                                              const Matrix& t,
                                              const std::vector<bool>& mask,
                                              CoAttentionTrace* trace = nullptr);

// Columnwise [a | t]; the trivial fusion baseline.
Matrix concat_fusion(const Matrix& a, const Matrix& t);

// Fused classifier over frozen per-modality conversation features. The
// concat variant skips the projections and the co-attention block entirely
// and classifies the raw concatenation.
struct Stage3Model {
    FusionKind kind = FusionKind::coattention;
    std::size_t d2 = 0;  // per-modality input width
    std::size_t n_classes = 0;
    CoAttentionConfig cfg;
    nn::Linear proj_a, proj_t;  // d2 -> dim, coattention only
    CoAttentionBlock block;     // coattention only
    nn::Linear cls_hidden, cls_out;

    static Stage3Model create(FusionKind kind, std::size_t d2, std::size_t n_classes,
                              CoAttentionConfig cfg, std::uint64_t seed);

    std::vector<Parameter*> parameters();
    ad::Var logits(ad::Graph& g, ad::Var seq_a, ad::Var seq_t,
                   const std::vector<bool>& mask);

    std::vector<std::uint8_t> to_blob() const;
    static Stage3Model from_blob(const std::vector<std::uint8_t>& blob);
};

// Frozen models feeding Stage III: both Stage I trunks and both Stage II
// conversation models. Only read, never updated.
struct FrozenPathway {
    Stage1Model* text1 = nullptr;
    Stage1Model* speech1 = nullptr;
    Stage2Model* text2 = nullptr;
    Stage2Model* speech2 = nullptr;
    const FeatureStore* store = nullptr;
};

struct PathwaySequences {
    EmbeddingSequence speech;
    EmbeddingSequence text;
};

PathwaySequences pathway_sequences(FrozenPathway& path, const Conversation& conv);

struct Stage3TrainResult {
    Stage3Model model;
    TrainHistory history;
};

Stage3TrainResult stage3_train(FrozenPathway& path, const Dataset& train,
                               const Dataset& val, const TrainConfig& cfg,
                               FusionKind kind);

std::function<Matrix(const Conversation&)> stage3_scorer(FrozenPathway& path,
                                                         Stage3Model& model);

}  // namespace merits
