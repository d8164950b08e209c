#include "negrefine/negmine.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>

#include "negrefine/error.hpp"
#include "negrefine/providers.hpp"

namespace negrefine {

const char* to_string(Provenance p) noexcept {
  switch (p) {
    case Provenance::id: return "id";
    case Provenance::noun_neg: return "noun_neg";
    case Provenance::conjugate_neg: return "conjugate_neg";
  }
  return "id";
}

Provenance parse_provenance(const std::string& text) {
  if (text == "id") return Provenance::id;
  if (text == "noun_neg") return Provenance::noun_neg;
  if (text == "conjugate_neg") return Provenance::conjugate_neg;
  fail(ErrorCode::invalid_argument, "unknown provenance '" + text + "'");
}

namespace {

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(c));
  }
  return out;
}

}  // namespace

std::string normalize_label(std::string_view label) {
  std::string out = collapse_whitespace(label);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool LabelPool::add(std::string_view label, Provenance provenance) {
  std::string clean = collapse_whitespace(label);
  if (clean.empty()) fail(ErrorCode::invalid_argument, "empty label");
  std::string key = normalize_label(clean);
  if (!keys_.insert(std::move(key)).second) return false;
  labels_.push_back(std::move(clean));
  provenance_.push_back(provenance);
  return true;
}

bool LabelPool::contains(std::string_view label) const {
  return keys_.count(normalize_label(label)) > 0;
}

std::vector<std::string> LabelPool::prompts() const {
  std::vector<std::string> out;
  out.reserve(labels_.size());
  for (const auto& l : labels_) out.push_back(fill_template(prompt_template_, "label", l));
  return out;
}

LabelPool LabelPool::subset(std::span<const std::size_t> keep) const {
  LabelPool out(prompt_template_);
  for (auto i : keep) out.add(labels_.at(i), provenance_.at(i));
  return out;
}

std::string fill_template(std::string_view tmpl, std::string_view name, std::string_view value) {
  const std::string needle = "{" + std::string(name) + "}";
  std::string out;
  std::size_t pos = 0;
  while (true) {
    auto hit = tmpl.find(needle, pos);
    if (hit == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      return out;
    }
    out.append(tmpl.substr(pos, hit - pos));
    out.append(value);
    pos = hit + needle.size();
  }
}

std::vector<std::string> read_word_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_failure, "cannot read word list " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    std::string w = collapse_whitespace(line);
    if (w.empty() || w[0] == '#') continue;
    words.push_back(std::move(w));
  }
  return words;
}

const std::vector<std::string>& default_superclasses() {
  // Entries after the first three are placeholders, not the canonical list.
  static const std::vector<std::string> kList = {
      "area",   "creature", "item",  "object",  "thing",     "place",  "substance",
      "device", "material", "scene", "pattern", "structure", "animal", "plant"};
  return kList;
}

Aggregator Aggregator::parse(const std::string& text) {
  if (text == "max") return {};
  const std::string prefix = "quantile:";
  if (text.rfind(prefix, 0) == 0) {
    double q = 0.0;
    try {
      q = std::stod(text.substr(prefix.size()));
    } catch (const std::logic_error&) {
      fail(ErrorCode::invalid_argument, "bad quantile in aggregator '" + text + "'");
    }
    if (!(q >= 0.0 && q <= 1.0)) fail(ErrorCode::invalid_argument, "quantile must be in [0,1]");
    return {Kind::quantile, q};
  }
  fail(ErrorCode::invalid_argument, "unknown aggregator '" + text + "'");
}

std::string Aggregator::to_string() const {
  if (kind == Kind::max) return "max";
  char buf[64];
  std::snprintf(buf, sizeof buf, "quantile:%.17g", q);
  return buf;
}

void MiningConfig::validate() const {
  if (!(p_percent > 0.0 && p_percent <= 100.0)) {
    fail(ErrorCode::invalid_argument, "p_percent must be in (0, 100]");
  }
  if (aggregator.kind == Aggregator::Kind::quantile && !(aggregator.q >= 0.0 && aggregator.q <= 1.0)) {
    fail(ErrorCode::invalid_argument, "quantile must be in [0,1]");
  }
}

LabelPool conjugate_pool(std::span<const std::string> adjectives,
                         std::span<const std::string> superclasses, std::uint64_t seed) {
  if (adjectives.empty() || superclasses.empty()) {
    fail(ErrorCode::empty_input, "conjugate_pool needs adjectives and superclasses");
  }
  LabelPool pool;
  for (std::size_t i = 0; i < adjectives.size(); ++i) {
    const auto& s = superclasses[counter_below(seed, i, superclasses.size())];
    pool.add(adjectives[i] + " " + s, Provenance::conjugate_neg);
  }
  return pool;
}

std::vector<double> candidate_similarity(const EmbeddingArchive& candidates,
                                         const EmbeddingArchive& id_labels,
                                         const Aggregator& aggregator) {
  if (id_labels.rows() == 0) fail(ErrorCode::empty_input, "no in-distribution labels");
  auto sims = similarity_matrix(candidates.vectors, id_labels.vectors);
  const std::size_t k = id_labels.rows();
  std::vector<double> out(candidates.rows());
  std::vector<double> row(k);
  for (std::size_t i = 0; i < candidates.rows(); ++i) {
    std::copy_n(sims.begin() + i * k, k, row.begin());
    if (aggregator.kind == Aggregator::Kind::max) {
      out[i] = *std::max_element(row.begin(), row.end());
      continue;
    }
    // Linear interpolation between order statistics.
    std::sort(row.begin(), row.end());
    const double pos = aggregator.q * double(k - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, k - 1);
    out[i] = row[lo] + (pos - double(lo)) * (row[hi] - row[lo]);
  }
  return out;
}

std::vector<std::size_t> select_negative_indices(std::span<const double> scores, double p_percent) {
  if (scores.empty()) fail(ErrorCode::empty_pool, "no candidates to select from");
  if (!(p_percent > 0.0 && p_percent <= 100.0)) {
    fail(ErrorCode::invalid_argument, "p_percent must be in (0, 100]");
  }
  const auto n = scores.size();
  // The epsilon absorbs representation error in p (e.g. 14.999999999).
  const auto count = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::floor(p_percent * double(n) / 100.0 + 1e-9)));
  if (count == 0) {
    fail(ErrorCode::empty_pool, "p_percent " + std::to_string(p_percent) + " of " +
                                    std::to_string(n) + " candidates selects nothing");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  order.resize(count);
  std::sort(order.begin(), order.end());
  return order;
}

LabelPool select_negatives(const LabelPool& pool, std::span<const double> scores, double p_percent) {
  if (pool.empty()) fail(ErrorCode::empty_pool, "empty candidate pool");
  if (scores.size() != pool.size()) {
    fail(ErrorCode::dimension_mismatch, "scores not aligned with pool");
  }
  auto keep = select_negative_indices(scores, p_percent);
  return pool.subset(keep);
}

}  // namespace negrefine
