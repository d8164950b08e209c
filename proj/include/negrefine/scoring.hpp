#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "negrefine/embedding_store.hpp"
#include "negrefine/providers.hpp"

namespace negrefine {

// How the per-pair statistics over the k x k label pairs are combined into
// the multi-matching score.
enum class MmVariant {
  max_softmax_pair,  // max of logistic((s_t - s_n) / tau)
  max_diff,          // max of (s_t - s_n) / tau
  max_ratio,         // max of (s_t / tau) / ((s_t + s_n) / tau)
  avg_softmax_pair,  // mean of the softmax-pair kernel
  sum_softmax_pair,  // sum of the softmax-pair kernel
};

const char* to_string(MmVariant v) noexcept;
MmVariant parse_mm_variant(const std::string& text);

struct ScoreConfig {
  double tau = 0.01;
  std::size_t k = 5;
  double alpha = 2.0;
  MmVariant variant = MmVariant::max_softmax_pair;
  std::string concat_template = "{y} and {yneg}";
  std::string prompt_template = "This is a {label}";
  bool use_mm = true;
  std::size_t workers = 0;  // 0 = hardware concurrency

  void validate() const;
  // Stable text form of every field that affects scores.
  std::string canonical() const;
};

// In-distribution score over all labels, evaluated with log-sum-exp so that
// small tau cannot overflow.
double s_neglabel(std::span<const double> sim_in, std::span<const double> sim_neg, double tau);

// Indices of the k largest values, descending, ties by lower index; clamped.
std::vector<std::size_t> top_k(std::span<const double> sims, std::size_t k);

// exp(s_t/tau) / (exp(s_t/tau) + exp(s_n/tau)), computed as a logistic.
double mm_kernel(double s_t, double s_n, double tau) noexcept;

double final_score(double s_neglabel, double s_mm, double alpha) noexcept;

struct BestPair {
  std::size_t in_rank = 0;   // position within top_in
  std::size_t neg_rank = 0;  // position within top_neg
  double s_t = 0.0;          // sim(x, pair text)
  double s_n = 0.0;          // sim(x, negative label)
};

struct MmResult {
  double value = 0.0;
  std::optional<BestPair> best;
};

// pair_sims is row-major k_in x k_neg: sim(x, t_ij); neg_sims[j] = sim(x, neg_j).
MmResult aggregate_mm(std::span<const double> pair_sims, std::span<const double> neg_sims,
                      std::size_t k_in, MmVariant variant, double tau);

// Prompted text for the pair (y, yneg).
std::string pair_text(const std::string& id_label, const std::string& neg_label,
                      const ScoreConfig& config);

// All k_in * k_neg pair texts, row-major by in-distribution rank.
std::vector<std::string> pair_texts(std::span<const std::string> top_in_labels,
                                    std::span<const std::string> top_neg_labels,
                                    const ScoreConfig& config);

// Multi-matching score of one image given its top labels.
MmResult s_mm(std::span<const float> image, std::span<const std::string> top_in_labels,
              std::span<const std::string> top_neg_labels, std::span<const double> top_neg_sims,
              TextEmbedder& embedder, const ScoreConfig& config);

struct ScoreRecord {
  std::string image_id;
  double s_neglabel = 0.0;
  double s_mm = 0.0;
  double s_final = 0.0;
  std::vector<std::size_t> top_in;   // rows of the in-distribution archive
  std::vector<std::size_t> top_neg;  // rows of the negative archive
  std::optional<BestPair> best_pair;
  std::string best_in_label;
  std::string best_neg_label;
  std::string error;  // non-empty marks a failed image

  bool ok() const noexcept { return error.empty(); }
};

struct ScoreStats {
  std::size_t pair_texts_requested = 0;
  std::size_t unique_pair_texts = 0;
  std::size_t failed_images = 0;
};

std::vector<ScoreRecord> score_dataset(const EmbeddingArchive& images,
                                       const EmbeddingArchive& id_text,
                                       const EmbeddingArchive& neg_text, TextEmbedder& embedder,
                                       const ScoreConfig& config, ScoreStats* stats = nullptr);

// Identifies a scoring setup: config plus the label sets and text encoder.
std::string scoring_digest(const ScoreConfig& config, const std::string& id_text_digest,
                           const std::string& neg_text_digest, const std::string& embedder_tag);

struct ScoreFile {
  std::string config_digest;
  std::vector<ScoreRecord> records;

  std::size_t failed() const;
};

void write_score_file(const std::filesystem::path& path, const std::string& config_digest,
                      const ScoreConfig& config, std::span<const ScoreRecord> records);
ScoreFile read_score_file(const std::filesystem::path& path);

}  // namespace negrefine
