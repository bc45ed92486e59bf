#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "merits/errors.hpp"

namespace merits {

enum class Modality { text, speech };
enum class SplitTag { none, train, val, test };
enum class Sentiment { positive, negative, neutral };

std::string to_string(Modality m);
std::string to_string(SplitTag t);
std::string to_string(Sentiment s);
Sentiment sentiment_from_string(const std::string& s);

// Raw gold annotation as it appears on disk: either a category string or a
// numeric score. Integer and floating inputs are kept apart so a load +
// serialize round trip is byte-exact.
using RawLabel = std::variant<std::string, long long, double>;

struct Utterance {
    std::string utterance_id;
    std::string transcript;
    std::string speech_key;
    RawLabel raw_label;
    int gold_label = -1;  // class index in the active label space
};

struct Conversation {
    std::string conversation_id;
    std::vector<Utterance> utterances;
};

// Sentiment mapping for numeric scores in [-3, 3].
Sentiment map_mosi_score(double score);

// Sentiment mapping for valence ratings in [1, 7]: (5, 7] positive,
// [1, 3) negative, the middle band neutral.
Sentiment valence_to_sentiment(double valence);

class LabelSpace {
  public:
    static LabelSpace iemocap4();
    static LabelSpace meld7();
    static LabelSpace mosi2();
    static LabelSpace sentiment3();
    static LabelSpace by_name(const std::string& name);

    const std::string& name() const { return name_; }
    const std::vector<std::string>& classes() const { return classes_; }
    std::size_t size() const { return classes_.size(); }
    int index_of(const std::string& cls) const;  // -1 when absent

    // Maps a raw annotation to a class index. nullopt means the label is a
    // recognized out-of-scope category and the utterance should be dropped.
    // Unknown labels raise MappingError.
    std::optional<int> map_raw(const RawLabel& raw) const;

  private:
    std::string name_;
    std::vector<std::string> classes_;
    std::map<std::string, int> direct_;   // raw string -> class index
    std::vector<std::string> dropped_;    // recognized but out of scope
    bool numeric_scores_ = false;         // route numeric labels through map_mosi_score
};

struct LoadStats {
    std::size_t parsed_utterances = 0;
    std::size_t dropped_utterances = 0;
    std::size_t dropped_conversations = 0;
};

struct Dataset {
    std::vector<Conversation> conversations;
    LabelSpace label_space;
    SplitTag split_tag = SplitTag::none;

    std::size_t utterance_count() const;
};

// Reads conversation-per-line JSONL and maps every raw label through the
// label space. Order is preserved; out-of-scope labels are dropped with a
// counted warning on stderr.
Dataset load_conversations(const std::filesystem::path& file, const LabelSpace& space,
                           LoadStats* stats = nullptr);

// Canonical JSONL emission; load_conversations(serialize(ds)) is the identity
// and serialize(load(f)) is byte-for-byte f for canonical inputs.
void serialize_conversations(const Dataset& ds, std::ostream& out);
void save_conversations(const Dataset& ds, const std::filesystem::path& file);

using SplitSpec = std::map<std::string, SplitTag>;

SplitSpec load_split_spec(const std::filesystem::path& file);

struct SplitResult {
    Dataset train;
    Dataset val;
    Dataset test;
};

// Partitions by conversation id. Every conversation must be covered by the
// spec; missing ids are reported together in one error.
SplitResult split_dataset(const Dataset& ds, const SplitSpec& spec);

}  // namespace merits
