#include "merits/synthetic.hpp"

#include <array>
#include <fstream>
#include <random>

#include "json.hpp"

#include "merits/nn.hpp"

namespace merits {

std::string to_string(SyntheticTask t) {
    switch (t) {
        case SyntheticTask::separable: return "separable";
        case SyntheticTask::context: return "context";
        case SyntheticTask::xor_fusion: return "xor";
        case SyntheticTask::composite: return "composite";
        case SyntheticTask::keyword: return "keyword";
    }
    throw DomainError("unhandled synthetic task");
}

SyntheticTask synthetic_task_from_string(const std::string& s) {
    if (s == "separable") return SyntheticTask::separable;
    if (s == "context") return SyntheticTask::context;
    if (s == "xor") return SyntheticTask::xor_fusion;
    if (s == "composite") return SyntheticTask::composite;
    if (s == "keyword") return SyntheticTask::keyword;
    throw ConfigError("unknown synthetic task: \"" + s + "\"");
}

SyntheticSpec SyntheticSpec::defaults_for(SyntheticTask task, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.task = task;
    spec.seed = seed;
    switch (task) {
        case SyntheticTask::separable:
        case SyntheticTask::context:
            break;
        case SyntheticTask::xor_fusion:
            // Cross-modal parity is learned per utterance, so short
            // conversations keep the fusion stage inside its time budget
            // without changing the task.
            spec.max_len = 6;
            break;
        case SyntheticTask::composite:
            spec.train_conversations = 100;
            spec.val_conversations = 100;
            spec.test_conversations = 100;
            spec.max_len = 6;
            break;
        case SyntheticTask::keyword:
            spec.train_conversations = 60;
            spec.val_conversations = 60;
            spec.test_conversations = 60;
            spec.max_len = 6;
            break;
    }
    return spec;
}

namespace {

const std::vector<std::string>& filler_words() {
    static const std::vector<std::string> words = {
        "the",    "a",     "we",     "they",   "then",  "again", "maybe",
        "still",  "about", "after",  "before", "quite", "rather", "just",
        "really", "some",  "went",   "came",   "said",  "asked", "turned",
        "looked", "walked", "stood"};
    return words;
}

// Marker vocabularies for the four-symbol tasks. Disjoint from the filler
// pool and from the annotator lexicons so pseudo-labels stay clean.
const std::array<std::vector<std::string>, 4>& symbol_words() {
    static const std::array<std::vector<std::string>, 4> words = {{
        {"crimson", "scarlet", "ruby"},
        {"azure", "cobalt", "sapphire"},
        {"amber", "golden", "honey"},
        {"violet", "mauve", "plum"},
    }};
    return words;
}

const std::array<std::vector<std::string>, 2>& sign_words() {
    static const std::array<std::vector<std::string>, 2> words = {{
        {"upward", "rising", "climbing"},
        {"downward", "sinking", "falling"},
    }};
    return words;
}

std::size_t pick(nn::Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

std::string make_sentence(nn::Rng& rng, const std::vector<std::string>& markers,
                          std::size_t n_markers = 1) {
    const std::vector<std::string>& filler = filler_words();
    std::vector<std::string> tokens;
    const std::size_t n_filler = 4 + pick(rng, 4);
    for (std::size_t i = 0; i < n_filler; ++i) tokens.push_back(filler[pick(rng, filler.size())]);
    for (std::size_t i = 0; i < n_markers; ++i) {
        const std::string& word = markers[pick(rng, markers.size())];
        tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(pick(rng, tokens.size() + 1)),
                      word);
    }
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

// Speech vector carrying a four-way symbol: one block of three coordinates
// is raised, the rest is noise.
std::vector<float> symbol_features(int symbol, nn::Rng& rng) {
    std::normal_distribution<double> noise(0.0, 0.1);
    std::vector<float> v(kSyntheticSpeechDim);
    for (float& x : v) x = static_cast<float>(noise(rng));
    for (std::size_t j = 0; j < 3; ++j)
        v[static_cast<std::size_t>(symbol) * 3 + j] += 1.5f;
    return v;
}

// Speech vector carrying only a binary sign along a fixed pattern; the
// symbol blocks stay empty so the two families never alias.
std::vector<float> pattern_features(int sign, nn::Rng& rng) {
    std::normal_distribution<double> noise(0.0, 0.1);
    std::vector<float> v(kSyntheticSpeechDim);
    for (float& x : v) x = static_cast<float>(noise(rng));
    const double s = sign == 0 ? 1.5 : -1.5;
    for (std::size_t j = 0; j < 6; ++j) v[j] += static_cast<float>(j % 2 == 0 ? s : -s);
    return v;
}

std::vector<float> noise_features(nn::Rng& rng) {
    std::normal_distribution<double> noise(0.0, 0.5);
    std::vector<float> v(kSyntheticSpeechDim);
    for (float& x : v) x = static_cast<float>(noise(rng));
    return v;
}

std::string conv_name(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "c%05zu", i);
    return buf;
}

std::string utt_name(const std::string& conv, std::size_t k) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "_u%02zu", k);
    return conv + buf;
}

const std::array<std::string, 4> kSymbolRaw = {"ang", "hap", "sad", "neu"};

struct Generator {
    const SyntheticSpec& spec;
    nn::Rng rng;
    FeatureStore store{kSyntheticSpeechDim};
    std::size_t next_conv = 0;

    explicit Generator(const SyntheticSpec& s) : spec(s), rng(s.seed) {}

    Conversation make_conversation() {
        Conversation conv;
        conv.conversation_id = conv_name(next_conv++);
        const std::size_t len =
            spec.min_len + pick(rng, spec.max_len - spec.min_len + 1);
        switch (spec.task) {
            case SyntheticTask::separable: {
                for (std::size_t k = 0; k < len; ++k) {
                    const int sym = static_cast<int>(pick(rng, 4));
                    conv.utterances.push_back(
                        utterance(conv, k, kSymbolRaw[static_cast<std::size_t>(sym)],
                                  make_sentence(rng, symbol_words()[static_cast<std::size_t>(sym)]),
                                  symbol_features(sym, rng)));
                }
                break;
            }
            case SyntheticTask::context: {
                int prev = -1;
                for (std::size_t k = 0; k < len; ++k) {
                    const int sym = static_cast<int>(pick(rng, 4));
                    const int label = k == 0 ? sym : prev;
                    conv.utterances.push_back(
                        utterance(conv, k, kSymbolRaw[static_cast<std::size_t>(label)],
                                  make_sentence(rng, symbol_words()[static_cast<std::size_t>(sym)]),
                                  symbol_features(sym, rng)));
                    prev = sym;
                }
                break;
            }
            case SyntheticTask::xor_fusion: {
                // Three sign words per sentence: the text sign has to stay
                // visible after mean pooling even once the unimodal stages,
                // which cannot use it, have trained against it.
                for (std::size_t k = 0; k < len; ++k) {
                    const int a = static_cast<int>(pick(rng, 2));
                    const int t = static_cast<int>(pick(rng, 2));
                    conv.utterances.push_back(
                        utterance(conv, k, a == t ? 1.0 : -1.0,
                                  make_sentence(rng, sign_words()[static_cast<std::size_t>(t)], 3),
                                  pattern_features(a, rng)));
                }
                break;
            }
            case SyntheticTask::composite: {
                int prev = 1;
                for (std::size_t k = 0; k < len; ++k) {
                    const int a = static_cast<int>(pick(rng, 2));
                    const int t = static_cast<int>(pick(rng, 2));
                    const int cur = a == t ? 1 : 0;
                    const int label = k == 0 ? cur : prev;
                    conv.utterances.push_back(
                        utterance(conv, k, label == 1 ? 1.0 : -1.0,
                                  make_sentence(rng, sign_words()[static_cast<std::size_t>(t)], 3),
                                  pattern_features(a, rng)));
                    prev = cur;
                }
                break;
            }
            case SyntheticTask::keyword: {
                for (std::size_t k = 0; k < len; ++k) {
                    const auto s = static_cast<Sentiment>(pick(rng, 3));
                    const std::size_t n_markers = pick(rng, 4) == 0 ? 2 : 1;
                    conv.utterances.push_back(
                        utterance(conv, k, to_string(s),
                                  make_sentence(rng, MockSentimentClient::lexicon(s),
                                                n_markers),
                                  noise_features(rng)));
                }
                break;
            }
        }
        return conv;
    }

    Utterance utterance(const Conversation& conv, std::size_t k, RawLabel raw,
                        std::string text, std::vector<float> features) {
        Utterance u;
        u.utterance_id = utt_name(conv.conversation_id, k);
        u.transcript = std::move(text);
        u.speech_key = u.utterance_id;
        u.raw_label = std::move(raw);
        store.insert(u.speech_key, std::move(features));
        return u;
    }

    Dataset make_split(std::size_t n, const LabelSpace& space, SplitTag tag) {
        Dataset ds;
        ds.label_space = space;
        ds.split_tag = tag;
        for (std::size_t i = 0; i < n; ++i) {
            Conversation conv = make_conversation();
            for (Utterance& u : conv.utterances) u.gold_label = *space.map_raw(u.raw_label);
            ds.conversations.push_back(std::move(conv));
        }
        return ds;
    }
};

LabelSpace space_for(SyntheticTask task) {
    switch (task) {
        case SyntheticTask::separable:
        case SyntheticTask::context: return LabelSpace::iemocap4();
        case SyntheticTask::xor_fusion:
        case SyntheticTask::composite: return LabelSpace::mosi2();
        case SyntheticTask::keyword: return LabelSpace::sentiment3();
    }
    throw DomainError("unhandled synthetic task");
}

}  // namespace

SyntheticBundle make_synthetic(const SyntheticSpec& spec) {
    if (spec.min_len == 0 || spec.max_len < spec.min_len)
        throw ConfigError("conversation length bounds must satisfy 1 <= min <= max");
    SyntheticBundle b;
    b.task = spec.task;
    Generator gen(spec);
    const LabelSpace space = space_for(spec.task);
    b.train = gen.make_split(spec.train_conversations, space, SplitTag::train);
    b.val = gen.make_split(spec.val_conversations, space, SplitTag::val);
    b.test = gen.make_split(spec.test_conversations, space, SplitTag::test);

    if (spec.task == SyntheticTask::keyword) {
        for (std::size_t i = 0; i < spec.pretrain_records; ++i) {
            const auto s = static_cast<Sentiment>(i % 3);
            TranscriptRecord rec;
            rec.id = "p" + std::to_string(i);
            rec.text = make_sentence(gen.rng, MockSentimentClient::lexicon(s));
            b.pretrain_transcripts.push_back(std::move(rec));
            b.pretrain_gold.emplace_back("p" + std::to_string(i), s);
        }
    }
    b.store = std::move(gen.store);
    return b;
}

void write_bundle(const SyntheticBundle& b, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_conversations(b.train, dir / "train.jsonl");
    save_conversations(b.val, dir / "val.jsonl");
    save_conversations(b.test, dir / "test.jsonl");
    b.store.save(dir / "features.jsonl");

    if (b.task != SyntheticTask::keyword) return;
    std::ofstream ts(dir / "pretrain_transcripts.jsonl");
    for (const TranscriptRecord& rec : b.pretrain_transcripts) {
        nlohmann::ordered_json j;
        j["id"] = rec.id;
        j["text"] = rec.text;
        ts << j.dump() << '\n';
    }
    std::ofstream gold(dir / "pretrain_gold.jsonl");
    for (const auto& [id, s] : b.pretrain_gold) {
        nlohmann::ordered_json j;
        j["id"] = id;
        j["sentiment"] = to_string(s);
        gold << j.dump() << '\n';
    }
}

}  // namespace merits
