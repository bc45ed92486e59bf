#include "merits/annotator.hpp"

#include <atomic>
#include <cctype>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "merits/hash.hpp"

namespace merits {

using nlohmann::json;
using nlohmann::ordered_json;

std::string hex64(std::uint64_t value) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[value & 0xf];
        value >>= 4;
    }
    return out;
}

namespace {

constexpr const char kPromptTemplate[] =
    "You are a sentiment classification bot. Given the [sentence], classify as "
    "positive, negative or neutral sentiment. Please give the sentiment and no "
    "extra text as output.";
constexpr const char kSlot[] = "[sentence]";

std::string lowercase(const std::string& s) {
    std::string out = s;
    for (char& c : out)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool is_strippable(unsigned char c) {
    return std::isspace(c) || std::ispunct(c);
}

}  // namespace

std::string build_prompt(const std::string& sentence) {
    std::string prompt = kPromptTemplate;
    const std::size_t at = prompt.find(kSlot);
    prompt.replace(at, sizeof(kSlot) - 1, sentence);
    return prompt;
}

Sentiment parse_response(const std::string& raw) {
    std::size_t begin = 0, end = raw.size();
    while (begin < end && is_strippable(static_cast<unsigned char>(raw[begin]))) ++begin;
    while (end > begin && is_strippable(static_cast<unsigned char>(raw[end - 1]))) --end;
    const std::string body = lowercase(raw.substr(begin, end - begin));

    int found = 0;
    Sentiment hit = Sentiment::neutral;
    const std::pair<const char*, Sentiment> words[] = {
        {"positive", Sentiment::positive},
        {"negative", Sentiment::negative},
        {"neutral", Sentiment::neutral},
    };
    for (const auto& [word, s] : words) {
        if (body.find(word) != std::string::npos) {
            ++found;
            hit = s;
        }
    }
    if (found != 1) throw UnparseableResponseError(raw);
    return hit;
}

double label_overlap(const std::vector<Sentiment>& a, const std::vector<Sentiment>& b) {
    if (a.size() != b.size())
        throw DomainError("label_overlap needs sequences of equal length");
    if (a.empty()) throw DomainError("label_overlap needs at least one label");
    std::size_t agree = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] == b[i]) ++agree;
    return static_cast<double>(agree) / static_cast<double>(a.size());
}

const std::vector<std::string>& MockSentimentClient::lexicon(Sentiment s) {
    static const std::vector<std::string> pos = {
        "great", "wonderful", "lovely", "fantastic", "delightful",
        "superb", "cheerful", "excellent"};
    static const std::vector<std::string> neg = {
        "awful", "terrible", "horrid", "dreadful", "miserable",
        "gloomy", "nasty", "dismal"};
    static const std::vector<std::string> neu = {
        "table", "window", "ledger", "corridor", "folder",
        "hallway", "printer", "cabinet"};
    switch (s) {
        case Sentiment::positive: return pos;
        case Sentiment::negative: return neg;
        default: return neu;
    }
}

std::string MockSentimentClient::complete(const std::string& prompt) {
    {
        std::lock_guard<std::mutex> lock(mu_);
        ++calls_;
    }
    // Tokenize on non-alpha boundaries and vote by lexicon membership. The
    // fixed words of the prompt frame never collide with the lexicons.
    const std::string low = lowercase(prompt);
    long pos_hits = 0, neg_hits = 0;
    std::string word;
    auto flush = [&] {
        if (word.empty()) return;
        for (const std::string& w : lexicon(Sentiment::positive))
            if (w == word) ++pos_hits;
        for (const std::string& w : lexicon(Sentiment::negative))
            if (w == word) ++neg_hits;
        word.clear();
    };
    for (char c : low) {
        if (std::isalpha(static_cast<unsigned char>(c)))
            word.push_back(c);
        else
            flush();
    }
    flush();
    if (pos_hits > neg_hits) return "positive";
    if (neg_hits > pos_hits) return "negative";
    return "neutral";
}

long MockSentimentClient::calls() const {
    std::lock_guard<std::mutex> lock(mu_);
    return calls_;
}

BackendProfile gpt35_profile() {
    return {"gpt-3.5-turbo", "gpt-3.5-turbo", "https://api.openai.com", "LLM_API_KEY"};
}

BackendProfile llama3_profile() {
    return {"llama-3", "meta-llama/Llama-3-70b-chat-hf", "https://api.together.xyz",
            "LLM_API_KEY"};
}

BackendProfile mixtral_profile() {
    return {"mixtral", "mistralai/Mixtral-8x7B-Instruct-v0.1",
            "https://api.together.xyz", "LLM_API_KEY"};
}

BackendProfile profile_by_name(const std::string& name) {
    if (name == "gpt35" || name == "gpt-3.5-turbo") return gpt35_profile();
    if (name == "llama3" || name == "llama-3") return llama3_profile();
    if (name == "mixtral") return mixtral_profile();
    throw ConfigError("unknown backend profile: \"" + name + "\"");
}

std::unique_ptr<LlmClient> make_client(const std::string& backend) {
    if (backend == "mock") return std::make_unique<MockSentimentClient>();
    return std::make_unique<HttpChatClient>(profile_by_name(backend));
}

std::string transcript_hash(const std::string& text) {
    return hex64(fnv1a64(text));
}

AnnotationCache::AnnotationCache(std::filesystem::path file) : file_(std::move(file)) {
    std::ifstream in(file_);
    if (!in) return;  // fresh cache
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(file_.string() + " line " + std::to_string(line_no) +
                             ": " + e.what());
        }
        if (!j.contains("backend") || !j.contains("hash") || !j.contains("response"))
            throw ParseError(file_.string() + " line " + std::to_string(line_no) +
                             ": cache entries need backend, hash and response");
        entries_[{j["backend"].get<std::string>(), j["hash"].get<std::string>()}] =
            j["response"].get<std::string>();
    }
}

std::optional<std::string> AnnotationCache::lookup(const std::string& backend,
                                                   const std::string& hash) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = entries_.find({backend, hash});
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void AnnotationCache::insert(const std::string& backend, const std::string& hash,
                             const std::string& response) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = entries_.find({backend, hash});
    if (it != entries_.end()) {
        if (it->second != response)
            throw IntegrityError("cache already holds a different response for (" +
                                 backend + ", " + hash + ")");
        return;
    }
    std::ofstream out(file_, std::ios::app);
    if (!out) throw Error("cannot append to cache " + file_.string());
    ordered_json j;
    j["backend"] = backend;
    j["hash"] = hash;
    j["response"] = response;
    out << j.dump() << "\n";
    out.flush();
    entries_[{backend, hash}] = response;
}

std::size_t AnnotationCache::size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return entries_.size();
}

namespace {

struct AnnotationTask {
    std::string hash;
    std::string text;
    bool have_raw = false;
    bool from_cache = false;
    std::string raw;
};

void run_task(AnnotationTask& task, LlmClient& client, const RetryPolicy& policy) {
    const std::string prompt = build_prompt(task.text);
    const int attempts = 1 + std::max(0, policy.max_retries);
    for (int a = 0; a < attempts; ++a) {
        std::string raw;
        try {
            raw = client.complete(prompt);
        } catch (const TransportError&) {
            continue;  // retryable; credential and usage errors propagate
        }
        task.raw = raw;
        task.have_raw = true;
        try {
            parse_response(raw);
            return;  // parseable, done
        } catch (const UnparseableResponseError&) {
            // keep the latest raw reply and retry
        }
    }
}

}  // namespace

PseudoLabeledCorpus annotate(const std::vector<TranscriptRecord>& transcripts,
                             LlmClient& client, AnnotationCache& cache,
                             const RetryPolicy& policy) {
    PseudoLabeledCorpus corpus;
    corpus.backend = client.name();

    // One task per distinct transcript, first-appearance order. Duplicate
    // texts share a single backend round.
    std::vector<AnnotationTask> tasks;
    std::map<std::string, std::size_t> by_hash;
    for (const TranscriptRecord& rec : transcripts) {
        const std::string h = transcript_hash(rec.text);
        if (by_hash.count(h)) continue;
        by_hash[h] = tasks.size();
        tasks.push_back({h, rec.text});
    }

    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (auto hit = cache.lookup(corpus.backend, tasks[i].hash)) {
            tasks[i].raw = *hit;
            tasks[i].have_raw = true;
            tasks[i].from_cache = true;
        } else {
            pending.push_back(i);
        }
    }

    const int workers =
        std::max(1, std::min<int>(policy.concurrency,
                                  static_cast<int>(pending.size() == 0 ? 1
                                                                       : pending.size())));
    if (workers <= 1) {
        for (std::size_t i : pending) run_task(tasks[i], client, policy);
    } else {
        std::atomic<std::size_t> next{0};
        std::atomic<bool> stop{false};
        std::exception_ptr first_error;
        std::mutex error_mu;
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (;;) {
                    if (stop.load()) return;
                    const std::size_t slot = next.fetch_add(1);
                    if (slot >= pending.size()) return;
                    try {
                        run_task(tasks[pending[slot]], client, policy);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(error_mu);
                        if (!first_error) first_error = std::current_exception();
                        stop.store(true);
                        return;
                    }
                }
            });
        for (std::thread& t : pool) t.join();
        if (first_error) std::rethrow_exception(first_error);
    }

    // Cache writes happen after the fan-out, in task order, so the file is
    // deterministic regardless of scheduling.
    for (std::size_t i : pending)
        if (tasks[i].have_raw)
            cache.insert(corpus.backend, tasks[i].hash, tasks[i].raw);

    for (const TranscriptRecord& rec : transcripts) {
        const AnnotationTask& task = tasks[by_hash.at(transcript_hash(rec.text))];
        if (!task.have_raw) {
            corpus.failed_ids.push_back(rec.id);
            continue;
        }
        try {
            corpus.records.push_back({rec.id, rec.text, parse_response(task.raw)});
        } catch (const UnparseableResponseError&) {
            corpus.failed_ids.push_back(rec.id);
        }
    }
    return corpus;
}

void save_pseudo_corpus(const PseudoLabeledCorpus& corpus,
                        const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw Error("cannot write " + file.string());
    for (const PseudoLabeledRecord& r : corpus.records) {
        ordered_json j;
        j["id"] = r.id;
        j["text"] = r.text;
        j["sentiment"] = to_string(r.sentiment);
        out << j.dump() << "\n";
    }
}

PseudoLabeledCorpus load_pseudo_corpus(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ParseError("cannot open " + file.string());
    PseudoLabeledCorpus corpus;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(file.string() + " line " + std::to_string(line_no) +
                             ": " + e.what());
        }
        if (!j.contains("id") || !j.contains("text") || !j.contains("sentiment"))
            throw ParseError(file.string() + " line " + std::to_string(line_no) +
                             ": corpus entries need id, text and sentiment");
        corpus.records.push_back({j["id"].get<std::string>(),
                                  j["text"].get<std::string>(),
                                  sentiment_from_string(j["sentiment"].get<std::string>())});
    }
    return corpus;
}

}  // namespace merits
