#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "merits/annotator.hpp"
#include "merits/corpus.hpp"
#include "merits/feature_store.hpp"
#include "merits/nn.hpp"
#include "merits/train_config.hpp"

namespace merits {

// Lowercasing whitespace-and-punctuation tokenizer with a fixed vocabulary.
// Index 0 is the stand-in for empty transcripts, index 1 absorbs tokens the
// vocabulary has never seen.
class Tokenizer {
  public:
    static constexpr int kNullId = 0;
    static constexpr int kUnkId = 1;

    Tokenizer();
    static std::vector<std::string> split(const std::string& text);
    static Tokenizer build(const std::vector<std::string>& texts);
    static Tokenizer from_vocab(std::vector<std::string> vocab);

    std::vector<int> encode(const std::string& text) const;  // never empty
    const std::vector<std::string>& vocab() const { return vocab_; }
    std::size_t size() const { return vocab_.size(); }

  private:
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, int> lookup_;
};

// Utterance-level model: a trunk that embeds one utterance into d1
// dimensions and a linear class head. The text trunk is token embedding ->
// mean pool -> two tanh layers; the speech trunk applies the same two-layer
// stack to stored feature vectors.
struct Stage1Model {
    Modality modality = Modality::text;
    std::size_t n_classes = 0;
    Tokenizer tokenizer;    // text only
    Parameter embedding;    // vocab x embed_dim, text only
    nn::Linear l1, l2, head;

    static Stage1Model text_model(Tokenizer tok, std::size_t n_classes,
                                  std::uint64_t seed, std::size_t embed_dim = 64,
                                  std::size_t hidden = 64, std::size_t out_dim = 64);
    static Stage1Model speech_model(std::size_t input_dim, std::size_t n_classes,
                                    std::uint64_t seed, std::size_t hidden = 64,
                                    std::size_t out_dim = 64);

    std::size_t output_dim() const { return l2.out_dim(); }
    std::vector<Parameter*> parameters();

    // Graph-mode forwards used by training.
    ad::Var embed_tokens(ad::Graph& g, const std::vector<std::vector<int>>& ids);
    ad::Var embed_rows(ad::Graph& g, ad::Var features);
    ad::Var class_logits(ad::Graph& g, ad::Var embedded);

    std::vector<std::uint8_t> to_blob() const;
    static Stage1Model from_blob(const std::vector<std::uint8_t>& blob);
};

// d1 vector for one utterance through the frozen trunk. Speech utterances
// need the feature store; a missing key or a store/trunk width mismatch is
// an error.
Matrix stage1_embed(Stage1Model& model, const Utterance& u, const FeatureStore* store);

// Whole conversation at once, one row per utterance.
Matrix stage1_embed_conversation(Stage1Model& model, const Conversation& conv,
                                 const FeatureStore* store);

// Trunk output for raw text; the model must be a text model.
Matrix encode_utterance_text(Stage1Model& model, const std::string& transcript);

struct PretrainResult {
    Stage1Model model;  // three-way sentiment head
    TrainHistory history;
    double val_accuracy = 0.0;
};

// Fits the text trunk on pseudo-labeled transcripts with a sentiment head.
// 80/20 seeded split; the kept epoch maximizes held-out weighted F1.
PretrainResult pretrain_text_encoder(const PseudoLabeledCorpus& corpus,
                                     const TrainConfig& cfg);

struct Stage1TrainResult {
    Stage1Model model;
    TrainHistory history;
};

// Supervised utterance-level training for one modality. When `init_from` is
// given (text only) the tokenizer and trunk start from that model and only
// the class head is fresh.
Stage1TrainResult stage1_train(Modality modality, const Dataset& train,
                               const Dataset& val, const FeatureStore* store,
                               const TrainConfig& cfg,
                               const Stage1Model* init_from = nullptr);

// Conversation scorer over frozen Stage I logits, for evaluate().
std::function<Matrix(const Conversation&)> stage1_scorer(Stage1Model& model,
                                                         const FeatureStore* store);

}  // namespace merits
