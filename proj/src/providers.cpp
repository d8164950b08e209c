#include "negrefine/providers.hpp"

#include <httplib.h>

#include <cctype>
#include <cmath>
#include <json.hpp>
#include <numbers>
#include <sstream>
#include <thread>

#include "negrefine/digest.hpp"
#include "negrefine/error.hpp"

namespace negrefine {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Counter-based randomness

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t load_le64(const std::uint8_t* p) noexcept {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace

std::uint64_t counter_random(std::uint64_t key, std::uint64_t counter) noexcept {
  return mix64(mix64(key) ^ mix64(counter * kGolden + kGolden));
}

double counter_uniform(std::uint64_t key, std::uint64_t counter) noexcept {
  return double((counter_random(key, counter) >> 11) + 1) * 0x1.0p-53;
}

std::uint64_t counter_below(std::uint64_t key, std::uint64_t stream,
                            std::uint64_t bound) noexcept {
  if (bound <= 1) return 0;
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  const std::uint64_t sub = mix64(key ^ (stream * kGolden));
  for (std::uint64_t c = 0;; ++c) {
    std::uint64_t r = counter_random(sub, c);
    if (r < limit) return r % bound;
  }
}

std::vector<float> synthetic_embed(std::string_view text, std::size_t dim, std::uint64_t seed) {
  if (dim < 2) fail(ErrorCode::invalid_argument, "synthetic_embed requires dim >= 2");
  Sha256Stream h;
  h.update(text);
  std::uint8_t seed_le[8];
  for (int i = 0; i < 8; ++i) seed_le[i] = static_cast<std::uint8_t>(seed >> (8 * i));
  h.update(seed_le, 8);
  const Sha256 d = h.finish();
  const std::uint64_t key = load_le64(d.data()) ^ mix64(load_le64(d.data() + 8));

  std::vector<double> v(dim);
  for (std::size_t i = 0; i < dim; i += 2) {
    // Box-Muller on two counter draws.
    double u1 = counter_uniform(key, i);
    double u2 = counter_uniform(key, i + 1);
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * std::numbers::pi * u2;
    v[i] = r * std::cos(theta);
    if (i + 1 < dim) v[i + 1] = r * std::sin(theta);
  }
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

// ---------------------------------------------------------------------------
// QueryCache

QueryCache::QueryCache(fs::path file) : file_(std::move(file)) {
  if (file_.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(file_.parent_path(), ec);
  }
  std::ifstream in(file_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      auto j = json::parse(line);
      entries_.emplace(j.at("k").get<std::string>(), j.at("v").get<std::string>());
    } catch (const json::exception&) {
      // A torn final line from an interrupted append; skip it.
    }
  }
}

std::optional<std::string> QueryCache::get(const std::string& key) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void QueryCache::put(const std::string& key, const std::string& value) {
  std::unique_lock lock(mu_);
  if (!entries_.emplace(key, value).second) return;
  if (file_.empty()) return;
  std::ofstream out(file_, std::ios::app | std::ios::binary);
  if (!out) fail(ErrorCode::io_failure, "cannot append to cache " + file_.string());
  out << json{{"k", key}, {"v", value}}.dump() << '\n';
}

std::size_t QueryCache::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

// ---------------------------------------------------------------------------
// Transport

HttpEndpoint parse_endpoint(const std::string& url) {
  auto scheme = url.find("://");
  if (scheme == std::string::npos) {
    fail(ErrorCode::invalid_argument, "endpoint must include a scheme: '" + url + "'");
  }
  auto slash = url.find('/', scheme + 3);
  HttpEndpoint ep;
  ep.base = url.substr(0, slash);
  if (slash != std::string::npos) ep.prefix = url.substr(slash);
  while (!ep.prefix.empty() && ep.prefix.back() == '/') ep.prefix.pop_back();
  return ep;
}

std::string post_json(const HttpEndpoint& ep, const std::string& path, const std::string& body,
                      const RetryPolicy& retry, const std::string& bearer_token) {
  std::string last_error;
  const int attempts = std::max(1, retry.attempts);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(retry.base_delay * (1 << (attempt - 1)));
    httplib::Client client(ep.base);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(300, 0);
    httplib::Headers headers;
    if (!bearer_token.empty()) headers.emplace("Authorization", "Bearer " + bearer_token);
    auto res = client.Post(ep.prefix + path, headers, body, "application/json");
    if (!res) {
      last_error = "request to " + ep.base + ep.prefix + path + " failed: " +
                   httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status) + " from " + ep.base + ep.prefix + path;
      continue;
    }
    if (res->status != 200) {
      fail(ErrorCode::protocol_violation,
           "HTTP " + std::to_string(res->status) + " from " + ep.base + ep.prefix + path);
    }
    return res->body;
  }
  fail(ErrorCode::transport, last_error + " (after " + std::to_string(attempts) + " attempts)");
}

// ---------------------------------------------------------------------------
// Embedders

SyntheticEmbedder::SyntheticEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim < 2) fail(ErrorCode::invalid_argument, "synthetic embedder requires dim >= 2");
}

std::string SyntheticEmbedder::model_tag() const {
  return "synthetic:d" + std::to_string(dim_) + ":s" + std::to_string(seed_);
}

Matrix SyntheticEmbedder::embed_batch(std::span<const std::string> texts) {
  Matrix out(texts.size(), dim_);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto v = synthetic_embed(texts[i], dim_, seed_);
    std::copy(v.begin(), v.end(), out.row(i).begin());
  }
  return out;
}

LookupEmbedder::LookupEmbedder(EmbeddingArchive vocab, std::uint64_t seed, bool compose,
                               std::string conjunction)
    : vocab_(std::move(vocab)), seed_(seed), compose_(compose), conjunction_(std::move(conjunction)) {
  if (vocab_.dim() < 2) fail(ErrorCode::invalid_argument, "vocabulary archive dim must be >= 2");
  for (std::size_t i = 0; i < vocab_.rows(); ++i) index_.emplace(vocab_.ids[i], i);
}

std::string LookupEmbedder::model_tag() const {
  return "lookup:" + vocab_.model_tag + (compose_ ? ":compose" : "");
}

std::vector<float> LookupEmbedder::embed_atom(const std::string& text) const {
  if (auto it = index_.find(text); it != index_.end()) {
    auto r = vocab_.row(it->second);
    return {r.begin(), r.end()};
  }
  return synthetic_embed(text, vocab_.dim(), seed_);
}

std::vector<float> LookupEmbedder::embed_one(const std::string& text) const {
  if (index_.count(text) || !compose_ || conjunction_.empty() ||
      text.find(conjunction_) == std::string::npos) {
    return embed_atom(text);
  }
  std::vector<double> acc(vocab_.dim(), 0.0);
  std::size_t start = 0;
  while (true) {
    auto pos = text.find(conjunction_, start);
    auto part = embed_atom(text.substr(start, pos == std::string::npos ? pos : pos - start));
    for (std::size_t d = 0; d < acc.size(); ++d) acc[d] += part[d];
    if (pos == std::string::npos) break;
    start = pos + conjunction_.size();
  }
  double sq = 0.0;
  for (double x : acc) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm < kDegenerateNorm) return embed_atom(text);
  std::vector<float> out(acc.size());
  for (std::size_t d = 0; d < acc.size(); ++d) out[d] = static_cast<float>(acc[d] / norm);
  return out;
}

Matrix LookupEmbedder::embed_batch(std::span<const std::string> texts) {
  Matrix out(texts.size(), dim());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto v = embed_one(texts[i]);
    std::copy(v.begin(), v.end(), out.row(i).begin());
  }
  return out;
}

RemoteEmbedder::RemoteEmbedder(std::string endpoint, std::shared_ptr<QueryCache> cache,
                               RetryPolicy retry, std::size_t max_in_flight,
                               std::size_t expected_dim)
    : endpoint_(parse_endpoint(endpoint)),
      endpoint_url_(std::move(endpoint)),
      cache_(std::move(cache)),
      retry_(retry),
      in_flight_(std::make_unique<std::counting_semaphore<1024>>(
          static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(max_in_flight, 1, 1024)))),
      dim_(expected_dim) {}

std::string RemoteEmbedder::model_tag() const {
  std::lock_guard lock(tag_mu_);
  return remote_tag_.empty() ? "remote:" + endpoint_url_ : remote_tag_;
}

Matrix RemoteEmbedder::embed_batch(std::span<const std::string> texts) {
  Matrix out(texts.size(), dim_.load());
  for (std::size_t start = 0; start < texts.size(); start += kMaxBatch) {
    const std::size_t n = std::min(kMaxBatch, texts.size() - start);
    Matrix chunk = embed_chunk(texts.subspan(start, n));
    if (out.cols != chunk.cols) {
      if (start != 0) fail(ErrorCode::protocol_violation, "embedding dim changed between batches");
      out = Matrix(texts.size(), chunk.cols);
    }
    std::copy(chunk.data.begin(), chunk.data.end(), out.data.begin() + start * out.cols);
  }
  return out;
}

Matrix RemoteEmbedder::embed_chunk(std::span<const std::string> texts) {
  const std::string body = json{{"texts", std::vector<std::string>(texts.begin(), texts.end())}}.dump();
  const std::string key = sha256_hex("POST /embed\n" + body);

  std::optional<std::string> response = cache_ ? cache_->get(key) : std::nullopt;
  const bool from_cache = response.has_value();
  if (!from_cache) {
    in_flight_->acquire();
    try {
      ++requests_;
      response = post_json(endpoint_, "/embed", body, retry_);
    } catch (...) {
      in_flight_->release();
      throw;
    }
    in_flight_->release();
  }

  json j;
  try {
    j = json::parse(*response);
  } catch (const json::exception& e) {
    fail(ErrorCode::protocol_violation, std::string("embedding response is not JSON: ") + e.what());
  }
  if (!j.contains("dim") || !j.contains("embeddings") || !j["embeddings"].is_array()) {
    fail(ErrorCode::protocol_violation, "embedding response lacks dim/embeddings");
  }
  const auto dim = j["dim"].get<std::size_t>();
  const auto& rows = j["embeddings"];
  if (rows.size() != texts.size()) {
    fail(ErrorCode::protocol_violation, "server returned " + std::to_string(rows.size()) +
                                            " embeddings for " + std::to_string(texts.size()) +
                                            " texts");
  }
  std::size_t expected = dim_.load();
  if (expected != 0 && dim != expected) {
    fail(ErrorCode::protocol_violation,
         "server dim " + std::to_string(dim) + " != expected " + std::to_string(expected));
  }
  if (dim < 1) fail(ErrorCode::protocol_violation, "server reported dim 0");
  Matrix m(texts.size(), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].is_array() || rows[i].size() != dim) {
      fail(ErrorCode::protocol_violation, "embedding row " + std::to_string(i) + " has wrong length");
    }
    for (std::size_t d = 0; d < dim; ++d) {
      const auto& v = rows[i][d];
      if (!v.is_number()) fail(ErrorCode::protocol_violation, "non-numeric embedding value");
      double x = v.get<double>();
      if (!std::isfinite(x)) fail(ErrorCode::protocol_violation, "non-finite embedding value");
      m.row(i)[d] = static_cast<float>(x);
    }
  }
  try {
    normalize_rows(m);
  } catch (const Error& e) {
    fail(ErrorCode::protocol_violation, e.what());
  }
  if (expected == 0) dim_.compare_exchange_strong(expected, dim);
  if (j.contains("model_tag") && j["model_tag"].is_string()) {
    std::lock_guard lock(tag_mu_);
    remote_tag_ = j["model_tag"].get<std::string>();
  }
  if (cache_ && !from_cache) cache_->put(key, *response);
  return m;
}

MemoizingEmbedder::MemoizingEmbedder(std::shared_ptr<TextEmbedder> inner) : inner_(std::move(inner)) {}

Matrix MemoizingEmbedder::embed_batch(std::span<const std::string> texts) {
  requested_ += texts.size();
  std::vector<std::string> missing;
  {
    std::shared_lock lock(mu_);
    std::unordered_map<std::string, bool> queued;
    for (const auto& t : texts) {
      if (!memo_.count(t) && queued.emplace(t, true).second) missing.push_back(t);
    }
  }
  if (!missing.empty()) {
    Matrix fresh = inner_->embed_batch(missing);
    forwarded_ += missing.size();
    std::unique_lock lock(mu_);
    for (std::size_t i = 0; i < missing.size(); ++i) {
      auto r = fresh.row(i);
      memo_.try_emplace(missing[i], r.begin(), r.end());
    }
  }
  Matrix out(texts.size(), inner_->dim());
  std::shared_lock lock(mu_);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto& v = memo_.at(texts[i]);
    if (out.cols != v.size()) out = Matrix(texts.size(), v.size());
    std::copy(v.begin(), v.end(), out.row(i).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Yes/no oracles

const char* to_string(Verdict v) noexcept {
  switch (v) {
    case Verdict::yes: return "yes";
    case Verdict::no: return "no";
    case Verdict::unparseable: return "unparseable";
  }
  return "unparseable";
}

std::optional<bool> parse_yes_no(std::string_view reply) {
  auto is_trim = [](unsigned char c) { return std::isspace(c) || std::ispunct(c); };
  std::size_t b = 0;
  while (b < reply.size() && is_trim(static_cast<unsigned char>(reply[b]))) ++b;
  std::size_t e = b;
  while (e < reply.size() && !std::isspace(static_cast<unsigned char>(reply[e]))) ++e;
  while (e > b && std::ispunct(static_cast<unsigned char>(reply[e - 1]))) --e;
  std::string word;
  for (std::size_t i = b; i < e; ++i) {
    word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(reply[i]))));
  }
  if (word == "yes") return true;
  if (word == "no") return false;
  return std::nullopt;
}

YesNoAnswer YesNoOracle::ask(const std::string& prompt) {
  if (prompt.empty()) fail(ErrorCode::invalid_argument, "empty prompt");
  YesNoAnswer answer;
  const int attempts = std::max(1, unparseable_attempts);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    ++queries_;
    answer.replies.push_back(complete(prompt, attempt > 0));
    if (auto parsed = parse_yes_no(answer.replies.back())) {
      answer.verdict = *parsed ? Verdict::yes : Verdict::no;
      return answer;
    }
  }
  answer.verdict = Verdict::unparseable;
  return answer;
}

ScriptedOracle::ScriptedOracle(std::map<std::string, std::string> replies, std::string default_reply)
    : default_reply(std::move(default_reply)), replies_(std::move(replies)) {}

std::unique_ptr<ScriptedOracle> ScriptedOracle::from_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_failure, "cannot read oracle script " + path.string());
  auto o = std::make_unique<ScriptedOracle>();
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      fail(ErrorCode::invalid_argument, "oracle script line lacks a TAB: '" + line + "'");
    }
    std::string prompt = line.substr(0, tab);
    std::string reply = line.substr(tab + 1);
    if (prompt == "*") {
      o->default_reply = reply;
    } else {
      o->replies_[prompt] = reply;
    }
  }
  return o;
}

std::string ScriptedOracle::complete(const std::string& prompt, bool) {
  auto it = replies_.find(prompt);
  return it == replies_.end() ? default_reply : it->second;
}

ChatOracle::ChatOracle(std::string endpoint, std::string model, std::shared_ptr<QueryCache> cache,
                       RetryPolicy retry, std::size_t max_in_flight, std::string bearer_token)
    : endpoint_(parse_endpoint(endpoint)),
      model_(std::move(model)),
      cache_(std::move(cache)),
      retry_(retry),
      in_flight_(std::make_unique<std::counting_semaphore<1024>>(
          static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(max_in_flight, 1, 1024)))),
      token_(std::move(bearer_token)) {}

std::string ChatOracle::request_body(const std::string& model, const std::string& prompt) {
  json body{{"model", model},
            {"messages", json::array({json{{"role", "system"}, {"content", kYesNoPreamble}},
                                      json{{"role", "user"}, {"content", prompt}}})},
            {"temperature", 0}};
  return body.dump();
}

std::string ChatOracle::complete(const std::string& prompt, bool fresh) {
  const std::string body = request_body(model_, prompt);
  const std::string key = sha256_hex("POST /v1/chat/completions\n" + body);
  if (cache_ && !fresh) {
    if (auto hit = cache_->get(key)) return *hit;
  }
  std::string raw;
  in_flight_->acquire();
  try {
    ++requests_;
    raw = post_json(endpoint_, "/v1/chat/completions", body, retry_, token_);
  } catch (...) {
    in_flight_->release();
    throw;
  }
  in_flight_->release();

  std::string content;
  try {
    auto j = json::parse(raw);
    content = j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::protocol_violation, std::string("malformed chat response: ") + e.what());
  }
  if (cache_ && parse_yes_no(content)) cache_->put(key, content);
  return content;
}

}  // namespace negrefine
