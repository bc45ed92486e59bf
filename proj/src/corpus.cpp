#include "merits/corpus.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"

namespace merits {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(Modality m) {
    return m == Modality::text ? "text" : "speech";
}

std::string to_string(SplitTag t) {
    switch (t) {
        case SplitTag::train: return "train";
        case SplitTag::val: return "val";
        case SplitTag::test: return "test";
        default: return "none";
    }
}

std::string to_string(Sentiment s) {
    switch (s) {
        case Sentiment::positive: return "positive";
        case Sentiment::negative: return "negative";
        default: return "neutral";
    }
}

Sentiment sentiment_from_string(const std::string& s) {
    if (s == "positive") return Sentiment::positive;
    if (s == "negative") return Sentiment::negative;
    if (s == "neutral") return Sentiment::neutral;
    throw MappingError("not a sentiment class: \"" + s + "\"");
}

Sentiment map_mosi_score(double score) {
    if (!(score >= -3.0 && score <= 3.0))
        throw DomainError("sentiment score outside [-3, 3]: " + std::to_string(score));
    return score < 0.0 ? Sentiment::negative : Sentiment::positive;
}

Sentiment valence_to_sentiment(double valence) {
    if (!(valence >= 1.0 && valence <= 7.0))
        throw DomainError("valence outside [1, 7]: " + std::to_string(valence));
    if (valence > 5.0) return Sentiment::positive;
    if (valence < 3.0) return Sentiment::negative;
    return Sentiment::neutral;
}

LabelSpace LabelSpace::iemocap4() {
    LabelSpace s;
    s.name_ = "iemocap4";
    s.classes_ = {"angry", "happy", "sad", "neutral"};
    s.direct_ = {{"ang", 0}, {"hap", 1}, {"exc", 1}, {"sad", 2}, {"neu", 3}};
    // Recognized categories outside the four-way setup; excited folds into
    // happy, these are discarded.
    s.dropped_ = {"fru", "fea", "sur", "dis", "oth", "xxx"};
    return s;
}

LabelSpace LabelSpace::meld7() {
    LabelSpace s;
    s.name_ = "meld7";
    s.classes_ = {"angry", "sad", "joy", "neutral", "fear", "surprise", "disgust"};
    for (std::size_t i = 0; i < s.classes_.size(); ++i)
        s.direct_[s.classes_[i]] = static_cast<int>(i);
    s.direct_["anger"] = 0;
    s.direct_["sadness"] = 1;
    return s;
}

LabelSpace LabelSpace::mosi2() {
    LabelSpace s;
    s.name_ = "mosi2";
    s.classes_ = {"negative", "positive"};
    s.direct_ = {{"negative", 0}, {"positive", 1}};
    s.numeric_scores_ = true;
    return s;
}

LabelSpace LabelSpace::sentiment3() {
    LabelSpace s;
    s.name_ = "sentiment3";
    s.classes_ = {"positive", "negative", "neutral"};
    s.direct_ = {{"positive", 0}, {"negative", 1}, {"neutral", 2}};
    return s;
}

LabelSpace LabelSpace::by_name(const std::string& name) {
    if (name == "iemocap4") return iemocap4();
    if (name == "meld7") return meld7();
    if (name == "mosi2") return mosi2();
    if (name == "sentiment3") return sentiment3();
    throw ConfigError("unknown label space: \"" + name + "\"");
}

int LabelSpace::index_of(const std::string& cls) const {
    for (std::size_t i = 0; i < classes_.size(); ++i)
        if (classes_[i] == cls) return static_cast<int>(i);
    return -1;
}

std::optional<int> LabelSpace::map_raw(const RawLabel& raw) const {
    if (std::holds_alternative<std::string>(raw)) {
        const std::string& s = std::get<std::string>(raw);
        auto it = direct_.find(s);
        if (it != direct_.end()) return it->second;
        for (const std::string& d : dropped_)
            if (d == s) return std::nullopt;
        throw MappingError("label space " + name_ + " has no mapping for \"" + s + "\"");
    }
    const double score = std::holds_alternative<long long>(raw)
                             ? static_cast<double>(std::get<long long>(raw))
                             : std::get<double>(raw);
    if (!numeric_scores_)
        throw MappingError("label space " + name_ + " does not accept numeric labels");
    return index_of(to_string(map_mosi_score(score)));
}

std::size_t Dataset::utterance_count() const {
    std::size_t n = 0;
    for (const auto& c : conversations) n += c.utterances.size();
    return n;
}

namespace {

RawLabel raw_label_from_json(const json& j) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_number_integer()) return j.get<long long>();
    if (j.is_number_float()) return j.get<double>();
    throw ParseError("label must be a string or a number");
}

ordered_json raw_label_to_json(const RawLabel& raw) {
    if (std::holds_alternative<std::string>(raw)) return std::get<std::string>(raw);
    if (std::holds_alternative<long long>(raw)) return std::get<long long>(raw);
    return std::get<double>(raw);
}

const json& require_field(const json& j, const char* key, std::size_t line_no) {
    auto it = j.find(key);
    if (it == j.end())
        throw ParseError("line " + std::to_string(line_no) + ": missing field \"" +
                         key + "\"");
    return *it;
}

std::string require_string(const json& j, const char* key, std::size_t line_no) {
    const json& f = require_field(j, key, line_no);
    if (!f.is_string())
        throw ParseError("line " + std::to_string(line_no) + ": field \"" + key +
                         "\" must be a string");
    return f.get<std::string>();
}

}  // namespace

Dataset load_conversations(const std::filesystem::path& file, const LabelSpace& space,
                           LoadStats* stats) {
    std::ifstream in(file);
    if (!in) throw ParseError("cannot open " + file.string());

    Dataset ds;
    ds.label_space = space;
    LoadStats local;
    std::map<std::string, bool> seen_conversations;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
        Conversation conv;
        conv.conversation_id = require_string(j, "conversation_id", line_no);
        if (seen_conversations.count(conv.conversation_id))
            throw IntegrityError("duplicate conversation_id \"" + conv.conversation_id +
                                 "\" at line " + std::to_string(line_no));
        seen_conversations[conv.conversation_id] = true;

        const json& utts = require_field(j, "utterances", line_no);
        if (!utts.is_array() || utts.empty())
            throw ParseError("line " + std::to_string(line_no) +
                             ": \"utterances\" must be a non-empty array");

        std::map<std::string, bool> seen_utterances;
        for (const json& ju : utts) {
            Utterance u;
            u.utterance_id = require_string(ju, "utterance_id", line_no);
            u.transcript = require_string(ju, "transcript", line_no);
            u.speech_key = require_string(ju, "speech_key", line_no);
            u.raw_label = raw_label_from_json(require_field(ju, "label", line_no));
            if (seen_utterances.count(u.utterance_id))
                throw IntegrityError("duplicate utterance_id \"" + u.utterance_id +
                                     "\" in conversation \"" + conv.conversation_id +
                                     "\"");
            seen_utterances[u.utterance_id] = true;
            ++local.parsed_utterances;

            std::optional<int> mapped = space.map_raw(u.raw_label);
            if (!mapped) {
                ++local.dropped_utterances;
                continue;
            }
            u.gold_label = *mapped;
            conv.utterances.push_back(std::move(u));
        }
        if (conv.utterances.empty()) {
            ++local.dropped_conversations;
            continue;
        }
        ds.conversations.push_back(std::move(conv));
    }

    if (local.dropped_utterances > 0)
        std::cerr << "warning: dropped " << local.dropped_utterances
                  << " utterance(s) with out-of-scope labels while loading "
                  << file.string() << "\n";
    if (stats) *stats = local;
    return ds;
}

void serialize_conversations(const Dataset& ds, std::ostream& out) {
    for (const Conversation& conv : ds.conversations) {
        ordered_json j;
        j["conversation_id"] = conv.conversation_id;
        ordered_json utts = ordered_json::array();
        for (const Utterance& u : conv.utterances) {
            ordered_json ju;
            ju["utterance_id"] = u.utterance_id;
            ju["transcript"] = u.transcript;
            ju["speech_key"] = u.speech_key;
            ju["label"] = raw_label_to_json(u.raw_label);
            utts.push_back(std::move(ju));
        }
        j["utterances"] = std::move(utts);
        out << j.dump() << "\n";
    }
}

void save_conversations(const Dataset& ds, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw Error("cannot write " + file.string());
    serialize_conversations(ds, out);
}

SplitSpec load_split_spec(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ParseError("cannot open " + file.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(file.string() + ": " + e.what());
    }
    if (!j.is_object()) throw ParseError("split spec must be a JSON object");
    SplitSpec spec;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string tag = it.value().is_string() ? it.value().get<std::string>() : "";
        if (tag == "train")
            spec[it.key()] = SplitTag::train;
        else if (tag == "val")
            spec[it.key()] = SplitTag::val;
        else if (tag == "test")
            spec[it.key()] = SplitTag::test;
        else
            throw ParseError("split spec entry \"" + it.key() +
                             "\" must map to train, val or test");
    }
    return spec;
}

SplitResult split_dataset(const Dataset& ds, const SplitSpec& spec) {
    SplitResult r;
    r.train.label_space = ds.label_space;
    r.train.split_tag = SplitTag::train;
    r.val.label_space = ds.label_space;
    r.val.split_tag = SplitTag::val;
    r.test.label_space = ds.label_space;
    r.test.split_tag = SplitTag::test;

    std::vector<std::string> missing;
    for (const Conversation& conv : ds.conversations) {
        auto it = spec.find(conv.conversation_id);
        if (it == spec.end()) {
            missing.push_back(conv.conversation_id);
            continue;
        }
        switch (it->second) {
            case SplitTag::train: r.train.conversations.push_back(conv); break;
            case SplitTag::val: r.val.conversations.push_back(conv); break;
            default: r.test.conversations.push_back(conv); break;
        }
    }
    if (!missing.empty()) {
        std::ostringstream msg;
        msg << "split spec does not cover " << missing.size() << " conversation(s):";
        for (const std::string& id : missing) msg << " " << id;
        throw ConfigError(msg.str());
    }
    return r;
}

}  // namespace merits
