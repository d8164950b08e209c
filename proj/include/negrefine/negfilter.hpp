#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "negrefine/embedding_store.hpp"
#include "negrefine/negmine.hpp"
#include "negrefine/providers.hpp"

namespace negrefine {

enum class FilterOutcome {
  kept,
  removed_proper_noun,
  removed_subcategory,
  kept_unparseable,
  dropped_unparseable,  // only under UnparseablePolicy::drop
};

const char* to_string(FilterOutcome o) noexcept;
FilterOutcome parse_filter_outcome(const std::string& text);

struct Transcript {
  std::string prompt;
  std::string reply;
  bool operator==(const Transcript&) const = default;
};

struct FilterDecision {
  std::string word;
  FilterOutcome outcome = FilterOutcome::kept;
  std::string supercategory;  // set iff outcome == removed_subcategory
  std::vector<Transcript> transcripts;
  std::vector<std::string> checked_id_labels;

  bool kept() const noexcept {
    return outcome == FilterOutcome::kept || outcome == FilterOutcome::kept_unparseable;
  }
  bool operator==(const FilterDecision&) const = default;
};

enum class UnparseablePolicy { keep, drop };

struct FilterConfig {
  std::size_t n = 10;
  std::string proper_noun_prompt = "Is {w} a proper noun, like the name of an entity?";
  std::string subcategory_prompt = "Is {w} a subcategory of {l}?";
  UnparseablePolicy unparseable_policy = UnparseablePolicy::keep;
  std::size_t workers = 1;

  void validate() const;
};

struct CheckResult {
  Verdict verdict = Verdict::unparseable;
  std::vector<Transcript> transcripts;
  bool yes() const noexcept { return verdict == Verdict::yes; }
};

CheckResult proper_noun_check(YesNoOracle& oracle, const std::string& word,
                              const FilterConfig& config = {});
CheckResult subcategory_check(YesNoOracle& oracle, const std::string& word,
                              const std::string& id_label, const FilterConfig& config = {});

// Row indices of the n in-distribution rows most similar to `word_vec`,
// descending, ties by lower index; clamped to the archive size.
std::vector<std::size_t> top_n_id_labels(std::span<const float> word_vec,
                                         const EmbeddingArchive& id_text, std::size_t n);

// Runs both checks for one word.
FilterDecision filter_word(YesNoOracle& oracle, const std::string& word,
                           std::span<const float> word_vec, const EmbeddingArchive& id_text,
                           const FilterConfig& config);

// Append-only log of decisions, one line per word:
//   word <TAB> outcome <TAB> detail-json
class DecisionJournal {
 public:
  explicit DecisionJournal(std::filesystem::path file);

  std::optional<FilterDecision> find(const std::string& word) const;
  void append(const FilterDecision& decision);
  std::size_t size() const;

  static std::string format_line(const FilterDecision& d);
  static FilterDecision parse_line(const std::string& line);

 private:
  std::filesystem::path file_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, FilterDecision> entries_;
};

struct FilterResult {
  LabelPool kept;
  std::vector<FilterDecision> decisions;  // aligned with the input pool
};

// Filters `negatives` whose rows of `negative_vectors` are their text
// embeddings. Decisions found in `journal` are reused without querying.
FilterResult neg_filter(const LabelPool& negatives, const Matrix& negative_vectors,
                        const EmbeddingArchive& id_text, YesNoOracle& oracle,
                        const FilterConfig& config, DecisionJournal* journal = nullptr);

// Same, embedding both pools with `embedder` (prompt templates applied).
FilterResult neg_filter(const LabelPool& negatives, const LabelPool& id_labels,
                        YesNoOracle& oracle, TextEmbedder& embedder, const FilterConfig& config,
                        DecisionJournal* journal = nullptr);

}  // namespace negrefine
