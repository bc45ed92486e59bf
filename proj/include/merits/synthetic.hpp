#pragma once

#include <filesystem>
#include <utility>

#include "merits/annotator.hpp"
#include "merits/corpus.hpp"
#include "merits/feature_store.hpp"

namespace merits {

// Fixture families, all fully seeded:
//   separable  both modalities carry the utterance's own class (4 classes)
//   context    features carry the current symbol, the label is the previous
//              utterance's symbol (4 classes)
//   xor        binary label = agreement of a speech-only and a text-only
//              sign; neither modality alone beats chance
//   composite  the XOR signal shifted one utterance back, sized small on
//              purpose
//   keyword    sentiment lexicon words drive the label; ships a pool of
//              pre-training transcripts next to the conversations
enum class SyntheticTask { separable, context, xor_fusion, composite, keyword };

std::string to_string(SyntheticTask t);
SyntheticTask synthetic_task_from_string(const std::string& s);

inline constexpr std::size_t kSyntheticSpeechDim = 12;

struct SyntheticSpec {
    SyntheticTask task = SyntheticTask::separable;
    std::size_t train_conversations = 1400;
    std::size_t val_conversations = 300;
    std::size_t test_conversations = 300;
    std::size_t min_len = 2;
    std::size_t max_len = 10;
    std::size_t pretrain_records = 300;  // keyword task only
    std::uint64_t seed = 7;

    // The split sizes the ablation study and the keyword benchmark expect.
    static SyntheticSpec defaults_for(SyntheticTask task, std::uint64_t seed);
};

struct SyntheticBundle {
    SyntheticTask task = SyntheticTask::separable;
    Dataset train, val, test;
    FeatureStore store;  // speech vectors for every utterance in every split

    // keyword task only: transcripts to annotate and their oracle labels
    std::vector<TranscriptRecord> pretrain_transcripts;
    std::vector<std::pair<std::string, Sentiment>> pretrain_gold;
};

SyntheticBundle make_synthetic(const SyntheticSpec& spec);

// Writes train.jsonl, val.jsonl, test.jsonl and features.jsonl under dir;
// the keyword task adds pretrain_transcripts.jsonl and pretrain_gold.jsonl.
void write_bundle(const SyntheticBundle& b, const std::filesystem::path& dir);

}  // namespace merits
