#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "negrefine/embedding_store.hpp"

namespace negrefine {

// ---------------------------------------------------------------------------
// Counter-based randomness

// Stateless generator: the value depends only on (key, counter).
std::uint64_t counter_random(std::uint64_t key, std::uint64_t counter) noexcept;

// Uniform double in (0, 1].
double counter_uniform(std::uint64_t key, std::uint64_t counter) noexcept;

// Unbiased draw from [0, bound) using rejection on the counter stream.
std::uint64_t counter_below(std::uint64_t key, std::uint64_t stream, std::uint64_t bound) noexcept;

// Deterministic unit vector for (text, dim, seed): standard normals from the
// counter stream keyed on sha256(text || seed_le64), then normalized.
std::vector<float> synthetic_embed(std::string_view text, std::size_t dim, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Persistent request cache

// Append-only map from request digest to the exact response bytes. Backed by
// a JSON-lines file when a path is given, in-memory otherwise.
class QueryCache {
 public:
  QueryCache() = default;
  explicit QueryCache(std::filesystem::path file);

  std::optional<std::string> get(const std::string& key) const;
  // First write wins; later puts of an existing key are ignored.
  void put(const std::string& key, const std::string& value);
  std::size_t size() const;
  const std::filesystem::path& file() const noexcept { return file_; }

 private:
  std::filesystem::path file_;
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, std::string> entries_;
};

// ---------------------------------------------------------------------------
// Transport

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds base_delay{1000};
};

struct HttpEndpoint {
  std::string base;    // scheme://host[:port]
  std::string prefix;  // path prefix, no trailing slash
};

HttpEndpoint parse_endpoint(const std::string& url);

// POSTs a JSON body, retrying transport failures (connection errors, 5xx,
// 429) with exponential backoff. 4xx responses raise protocol_violation.
std::string post_json(const HttpEndpoint& ep, const std::string& path, const std::string& body,
                      const RetryPolicy& retry, const std::string& bearer_token = {});

// ---------------------------------------------------------------------------
// Text embedders

class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual std::size_t dim() const = 0;
  virtual bool deterministic() const = 0;
  virtual std::string model_tag() const = 0;
  // Row i embeds texts[i]. Rows are unit norm. Must be safe to call
  // concurrently.
  virtual Matrix embed_batch(std::span<const std::string> texts) = 0;
};

class SyntheticEmbedder final : public TextEmbedder {
 public:
  SyntheticEmbedder(std::size_t dim, std::uint64_t seed);
  std::size_t dim() const override { return dim_; }
  bool deterministic() const override { return true; }
  std::string model_tag() const override;
  Matrix embed_batch(std::span<const std::string> texts) override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

// Looks texts up in a vocabulary archive. With composition enabled a text
// absent from the vocabulary is split on the conjunction and embedded as the
// normalized sum of its parts; remaining misses fall back to synthetic_embed.
class LookupEmbedder final : public TextEmbedder {
 public:
  LookupEmbedder(EmbeddingArchive vocab, std::uint64_t seed, bool compose,
                 std::string conjunction = " and ");
  std::size_t dim() const override { return vocab_.dim(); }
  bool deterministic() const override { return true; }
  std::string model_tag() const override;
  Matrix embed_batch(std::span<const std::string> texts) override;

 private:
  std::vector<float> embed_one(const std::string& text) const;
  std::vector<float> embed_atom(const std::string& text) const;

  EmbeddingArchive vocab_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t seed_;
  bool compose_;
  std::string conjunction_;
};

// Client for the embedding wire protocol (POST /embed). Batches are split to
// at most kMaxBatch texts and cached by request digest.
class RemoteEmbedder final : public TextEmbedder {
 public:
  static constexpr std::size_t kMaxBatch = 256;

  RemoteEmbedder(std::string endpoint, std::shared_ptr<QueryCache> cache, RetryPolicy retry,
                 std::size_t max_in_flight = 8, std::size_t expected_dim = 0);
  std::size_t dim() const override { return dim_.load(); }
  bool deterministic() const override { return cache_ != nullptr; }
  std::string model_tag() const override;
  Matrix embed_batch(std::span<const std::string> texts) override;

  std::size_t network_requests() const noexcept { return requests_.load(); }

 private:
  Matrix embed_chunk(std::span<const std::string> texts);

  HttpEndpoint endpoint_;
  std::string endpoint_url_;
  std::shared_ptr<QueryCache> cache_;
  RetryPolicy retry_;
  std::unique_ptr<std::counting_semaphore<1024>> in_flight_;
  std::atomic<std::size_t> dim_;
  std::atomic<std::size_t> requests_{0};
  mutable std::mutex tag_mu_;
  std::string remote_tag_;
};

// Per-text memo in front of another embedder; misses in one call are sent as
// a single batch. Used to deduplicate pair texts across images.
class MemoizingEmbedder final : public TextEmbedder {
 public:
  explicit MemoizingEmbedder(std::shared_ptr<TextEmbedder> inner);
  std::size_t dim() const override { return inner_->dim(); }
  bool deterministic() const override { return inner_->deterministic(); }
  std::string model_tag() const override { return inner_->model_tag(); }
  Matrix embed_batch(std::span<const std::string> texts) override;

  std::size_t texts_requested() const noexcept { return requested_.load(); }
  std::size_t texts_forwarded() const noexcept { return forwarded_.load(); }

 private:
  std::shared_ptr<TextEmbedder> inner_;
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, std::vector<float>> memo_;
  std::atomic<std::size_t> requested_{0};
  std::atomic<std::size_t> forwarded_{0};
};

// ---------------------------------------------------------------------------
// Yes/no oracles

inline constexpr const char* kYesNoPreamble = "Answer with exactly Yes or No.";

enum class Verdict { yes, no, unparseable };

const char* to_string(Verdict v) noexcept;

// Strip surrounding whitespace/punctuation, case-fold, take the first word:
// "yes" -> true, "no" -> false, anything else -> nullopt.
std::optional<bool> parse_yes_no(std::string_view reply);

struct YesNoAnswer {
  Verdict verdict = Verdict::unparseable;
  std::vector<std::string> replies;  // one per attempt
  const std::string& transcript() const { return replies.back(); }
};

class YesNoOracle {
 public:
  virtual ~YesNoOracle() = default;

  // Asks up to `unparseable_attempts` times until the reply parses. Transport
  // errors propagate as Error(transport).
  YesNoAnswer ask(const std::string& prompt);

  int unparseable_attempts = 3;

  std::size_t queries() const noexcept { return queries_.load(); }

 protected:
  // One raw completion. `fresh` requests bypass any response cache.
  virtual std::string complete(const std::string& prompt, bool fresh) = 0;

 private:
  std::atomic<std::size_t> queries_{0};
};

// Offline oracle: replies from a prompt -> reply table, `default_reply`
// otherwise. Script files are TSV lines `prompt<TAB>reply`, '#' comments.
class ScriptedOracle final : public YesNoOracle {
 public:
  ScriptedOracle() = default;
  explicit ScriptedOracle(std::map<std::string, std::string> replies,
                          std::string default_reply = "No");
  static std::unique_ptr<ScriptedOracle> from_file(const std::filesystem::path& path);

  void set(const std::string& prompt, const std::string& reply) { replies_[prompt] = reply; }
  std::string default_reply = "No";
  const std::map<std::string, std::string>& table() const noexcept { return replies_; }

 protected:
  std::string complete(const std::string& prompt, bool fresh) override;

 private:
  std::map<std::string, std::string> replies_;
};

// Chat-completions client: POST {prefix}/v1/chat/completions with a fixed
// system preamble and temperature 0. Only parseable replies are cached.
class ChatOracle final : public YesNoOracle {
 public:
  ChatOracle(std::string endpoint, std::string model, std::shared_ptr<QueryCache> cache,
             RetryPolicy retry, std::size_t max_in_flight = 8, std::string bearer_token = {});

  static std::string request_body(const std::string& model, const std::string& prompt);
  std::size_t network_requests() const noexcept { return requests_.load(); }

 protected:
  std::string complete(const std::string& prompt, bool fresh) override;

 private:
  HttpEndpoint endpoint_;
  std::string model_;
  std::shared_ptr<QueryCache> cache_;
  RetryPolicy retry_;
  std::unique_ptr<std::counting_semaphore<1024>> in_flight_;
  std::string token_;
  std::atomic<std::size_t> requests_{0};
};

}  // namespace negrefine
