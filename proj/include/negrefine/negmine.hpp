#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "negrefine/embedding_store.hpp"

namespace negrefine {

enum class Provenance { id, noun_neg, conjugate_neg };

const char* to_string(Provenance p) noexcept;
Provenance parse_provenance(const std::string& text);

// Case-folded, whitespace-collapsed form used for uniqueness checks.
std::string normalize_label(std::string_view label);

// Ordered label set. Uniqueness is by normalize_label.
class LabelPool {
 public:
  LabelPool() = default;
  explicit LabelPool(std::string prompt_template) : prompt_template_(std::move(prompt_template)) {}

  // Adds a label; returns false (and adds nothing) if an equivalent label is
  // already present. Surrounding whitespace is trimmed and inner runs
  // collapsed.
  bool add(std::string_view label, Provenance provenance);
  bool contains(std::string_view label) const;

  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::vector<Provenance>& provenance() const noexcept { return provenance_; }
  const std::string& prompt_template() const noexcept { return prompt_template_; }
  void set_prompt_template(std::string t) { prompt_template_ = std::move(t); }

  // Labels with the prompt template applied ("{label}" substituted).
  std::vector<std::string> prompts() const;

  LabelPool subset(std::span<const std::size_t> keep) const;

 private:
  std::vector<std::string> labels_;
  std::vector<Provenance> provenance_;
  std::unordered_set<std::string> keys_;
  std::string prompt_template_ = "{label}";
};

// Replaces every "{name}" occurrence in `tmpl` with `value`.
std::string fill_template(std::string_view tmpl, std::string_view name, std::string_view value);

// One entry per non-empty, non-'#' line, whitespace-trimmed.
std::vector<std::string> read_word_list(const std::filesystem::path& path);

// The three superclass terms the method names, followed by generic stand-ins
// for the rest of the fourteen-entry list.
const std::vector<std::string>& default_superclasses();

struct Aggregator {
  enum class Kind { max, quantile } kind = Kind::max;
  double q = 1.0;

  static Aggregator parse(const std::string& text);  // "max" | "quantile:Q"
  std::string to_string() const;
};

struct MiningConfig {
  double p_percent = 15.0;
  Aggregator aggregator;
  std::vector<std::string> superclass_terms = default_superclasses();
  std::uint64_t rng_seed = 0;

  void validate() const;
};

// Labels "adjective superclass", superclass drawn per adjective index from the
// counter stream keyed on seed.
LabelPool conjugate_pool(std::span<const std::string> adjectives,
                         std::span<const std::string> superclasses, std::uint64_t seed);

// Aggregate similarity of each candidate row to the in-distribution rows.
std::vector<double> candidate_similarity(const EmbeddingArchive& candidates,
                                         const EmbeddingArchive& id_labels,
                                         const Aggregator& aggregator = {});

// Indices (ascending) of the floor(p/100 * N) lowest-scoring candidates,
// ties broken by lower index.
std::vector<std::size_t> select_negative_indices(std::span<const double> scores, double p_percent);

LabelPool select_negatives(const LabelPool& pool, std::span<const double> scores, double p_percent);

}  // namespace negrefine
