#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "merits/corpus.hpp"

namespace merits {

struct TranscriptRecord {
    std::string id;
    std::string text;
};

struct PseudoLabeledRecord {
    std::string id;
    std::string text;
    Sentiment sentiment;
};

struct PseudoLabeledCorpus {
    std::string backend;
    std::vector<PseudoLabeledRecord> records;
    std::vector<std::string> failed_ids;
};

// Fills the sentence slot of the classification prompt. Single-pass,
// leftmost slot only; text containing the slot marker is left alone.
std::string build_prompt(const std::string& sentence);

// Maps a raw backend reply to a sentiment. Case-insensitive; surrounding
// whitespace and punctuation are ignored. Replies with zero or several
// distinct class words raise UnparseableResponseError.
Sentiment parse_response(const std::string& raw);

// Fraction of positions where the two label sequences agree.
double label_overlap(const std::vector<Sentiment>& a, const std::vector<Sentiment>& b);

class LlmClient {
  public:
    virtual ~LlmClient() = default;
    virtual std::string name() const = 0;
    // Must be safe to call from several threads when annotate() runs with
    // concurrency > 1.
    virtual std::string complete(const std::string& prompt) = 0;
};

// Deterministic lexicon-based stand-in for a hosted model. Counts calls so
// cache behavior is observable in tests.
class MockSentimentClient : public LlmClient {
  public:
    std::string name() const override { return "mock"; }
    std::string complete(const std::string& prompt) override;
    long calls() const;

    static const std::vector<std::string>& lexicon(Sentiment s);

  private:
    mutable std::mutex mu_;
    long calls_ = 0;
};

struct BackendProfile {
    std::string name;        // cache key and report label
    std::string model;       // model identifier sent to the endpoint
    std::string base_url;    // OpenAI-style chat completions host
    std::string api_key_env; // environment variable holding the credential
};

BackendProfile gpt35_profile();
BackendProfile llama3_profile();
BackendProfile mixtral_profile();
BackendProfile profile_by_name(const std::string& name);

// Thin chat-completions adapter, temperature pinned to 0. Never exercised
// in tests; everything testable lives in build_prompt / parse_response /
// annotate.
class HttpChatClient : public LlmClient {
  public:
    explicit HttpChatClient(BackendProfile profile);
    std::string name() const override { return profile_.name; }
    std::string complete(const std::string& prompt) override;

  private:
    BackendProfile profile_;
};

std::unique_ptr<LlmClient> make_client(const std::string& backend);

// Append-only JSONL response cache keyed by (backend, transcript hash).
// Reopening replays the file; rewrites of an existing key are rejected.
class AnnotationCache {
  public:
    explicit AnnotationCache(std::filesystem::path file);

    std::optional<std::string> lookup(const std::string& backend,
                                      const std::string& hash) const;
    void insert(const std::string& backend, const std::string& hash,
                const std::string& response);
    std::size_t size() const;
    const std::filesystem::path& path() const { return file_; }

  private:
    std::filesystem::path file_;
    mutable std::mutex mu_;
    std::map<std::pair<std::string, std::string>, std::string> entries_;
};

std::string transcript_hash(const std::string& text);

struct RetryPolicy {
    int max_retries = 2;  // extra attempts after the first call
    int concurrency = 1;  // in-flight backend requests
};

// Labels every transcript, consulting the cache first. Each distinct
// transcript costs at most one round of backend calls; transcripts that stay
// unparseable or unreachable after retries land in failed_ids. Record order
// follows input order.
PseudoLabeledCorpus annotate(const std::vector<TranscriptRecord>& transcripts,
                             LlmClient& client, AnnotationCache& cache,
                             const RetryPolicy& policy = {});

void save_pseudo_corpus(const PseudoLabeledCorpus& corpus,
                        const std::filesystem::path& file);
PseudoLabeledCorpus load_pseudo_corpus(const std::filesystem::path& file);

}  // namespace merits
