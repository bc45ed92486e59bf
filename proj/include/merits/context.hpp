#pragma once

#include "merits/encoders.hpp"

namespace merits {

enum class StageTag { stage1, stage2 };

std::string to_string(StageTag t);

// One conversation's utterance embeddings, optionally padded. mask[k] is
// true for real positions.
struct EmbeddingSequence {
    std::string conversation_id;
    Matrix matrix;  // K x d
    std::vector<bool> mask;
    StageTag stage_tag = StageTag::stage1;
    Modality modality = Modality::text;
};

// Single GRU direction. The input projection is applied to the whole
// sequence at once; the recurrence walks valid positions only, so padded
// inputs get exactly zero gradient and the hidden state glides over padding
// unchanged.
struct GruDirection {
    Parameter wx;  // in x 3h, gate order r | z | n
    Parameter wh;  // h x 3h
    Parameter b;   // 1 x 3h

    GruDirection() = default;
    GruDirection(const std::string& name, std::size_t in, std::size_t hidden)
        : wx(name + ".wx", in, 3 * hidden),
          wh(name + ".wh", hidden, 3 * hidden),
          b(name + ".b", 1, 3 * hidden) {}

    std::size_t hidden() const { return wh.value.rows(); }
    void init(nn::Rng& rng) {
        nn::xavier_uniform(wx, rng);
        nn::xavier_uniform(wh, rng);
    }
    void collect(std::vector<Parameter*>& out) {
        out.push_back(&wx);
        out.push_back(&wh);
        out.push_back(&b);
    }

    // Hidden state rows in input order; `reverse` walks the sequence from
    // the end (the backward half of the Bi-GRU).
    ad::Var run(ad::Graph& g, ad::Var x, const std::vector<bool>& mask, bool reverse);
};

struct Stage2Config {
    std::size_t input_dim = 64;
    std::size_t gru_hidden = 128;  // per direction
    std::size_t attn_heads = 4;
    std::size_t n_classes = 0;

    std::size_t feature_dim() const { return 2 * gru_hidden; }
};

// Conversation-level model: Bi-GRU over Stage I embeddings, one residual
// self-attention block with layer normalization, then a class head. The
// head exists only for Stage II training; later stages read the features.
struct Stage2Model {
    Modality modality = Modality::text;
    Stage2Config cfg;
    GruDirection fwd, bwd;
    nn::Attention attn;
    nn::LayerNorm ln;
    nn::Linear head;

    static Stage2Model create(Modality modality, Stage2Config cfg, std::uint64_t seed);

    std::vector<Parameter*> parameters();

    struct Forward {
        ad::Var features;  // K x 2h
        ad::Var logits;    // K x classes
    };
    Forward forward(ad::Graph& g, ad::Var x, const std::vector<bool>& mask,
                    nn::AttentionTrace* trace = nullptr);

    std::vector<std::uint8_t> to_blob() const;
    static Stage2Model from_blob(const std::vector<std::uint8_t>& blob);
};

struct ContextOut {
    Matrix features;  // K x 2h
    Matrix logits;    // K x classes
};

// Evaluation-mode forward over one Stage I sequence. The sequence must
// really be Stage I output of the model's own modality and width.
ContextOut context_forward(Stage2Model& model, const EmbeddingSequence& seq);

// Frozen-trunk sequence builders.
EmbeddingSequence stage1_sequence(Stage1Model& model, const Conversation& conv,
                                  const FeatureStore* store);
EmbeddingSequence stage2_sequence(Stage2Model& model, const EmbeddingSequence& s1);

struct Stage2TrainResult {
    Stage2Model model;
    TrainHistory history;
};

// Trains the conversation model on frozen Stage I embeddings. The Stage I
// model is only read.
Stage2TrainResult stage2_train(Stage1Model& stage1, const Dataset& train,
                               const Dataset& val, const FeatureStore* store,
                               const TrainConfig& cfg);

std::function<Matrix(const Conversation&)> stage2_scorer(Stage1Model& stage1,
                                                         Stage2Model& model,
                                                         const FeatureStore* store);

// Writes per-utterance Stage II features in feature-store format, keyed by
// utterance_id, with stage/modality tags in the header.
void export_stage2_features(Stage1Model& stage1, Stage2Model& model,
                            const Dataset& ds, const FeatureStore* store,
                            const std::filesystem::path& file);

}  // namespace merits
