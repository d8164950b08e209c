#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "negrefine/config.hpp"
#include "negrefine/eval.hpp"
#include "negrefine/providers.hpp"
#include "negrefine/scoring.hpp"

namespace negrefine {

struct Providers {
  std::shared_ptr<TextEmbedder> embedder;
  std::shared_ptr<YesNoOracle> oracle;  // created lazily by make_providers when filtering runs
};

std::shared_ptr<TextEmbedder> make_embedder(const RunConfig& config);
std::shared_ptr<YesNoOracle> make_oracle(const RunConfig& config);

// Embedder wrapped in a per-text memo plus an oracle, both shareable across
// runs with the same provider settings.
Providers make_providers(const RunConfig& config);

struct MineSummary {
  std::size_t candidates = 0;
  std::size_t selected = 0;
};

// Writes <out>/id_text and <out>/neg_text archives plus candidates.tsv.
MineSummary mine_stage(const RunConfig& config, const std::filesystem::path& lexicon,
                       const std::filesystem::path& id_labels, const std::filesystem::path& out_dir,
                       TextEmbedder& embedder);

struct FilterSummary {
  std::size_t input = 0;
  std::size_t kept = 0;
  std::size_t proper_nouns = 0;
  std::size_t subcategories = 0;
  std::size_t unparseable = 0;
};

// Writes the kept negatives as an archive at <out> plus <out>/decisions.tsv.
FilterSummary filter_stage(const RunConfig& config, const std::filesystem::path& neg_dir,
                           const std::filesystem::path& id_dir,
                           const std::filesystem::path& journal,
                           const std::filesystem::path& out_dir, YesNoOracle& oracle);

ScoreStats score_stage(const RunConfig& config, const std::filesystem::path& images_dir,
                       const std::filesystem::path& id_dir, const std::filesystem::path& neg_dir,
                       const std::filesystem::path& out_file, TextEmbedder& embedder);

MetricsReport eval_stage(const std::filesystem::path& id_scores,
                         std::span<const OodScoreSource> ood_scores, double tpr_target,
                         bool allow_partial, const std::filesystem::path& out_file);

struct StageStatus {
  std::string name;
  std::string digest;
  bool skipped = false;
  std::filesystem::path dir;
};

struct PipelineOptions {
  bool force = false;  // rerun stages even when their outputs exist
};

struct PipelineResult {
  MetricsReport report;
  std::string report_text;
  std::filesystem::path report_path;
  std::vector<StageStatus> stages;
};

// mine -> filter -> score -> eval under config.out_dir(). Each stage lives in
// <out>/<stage>-<digest prefix>/ and is skipped when already complete.
PipelineResult run_pipeline(const RunConfig& config, const PipelineOptions& options = {},
                            Providers* shared = nullptr);

struct AblationRow {
  std::string value;
  std::string config_digest;
  MetricsReport report;
};

struct AblationTable {
  std::string dimension;
  std::vector<AblationRow> rows;
  std::string to_text() const;
};

// Dimensions: alpha, k, p, variant, components. For components the values are
// "<mm>/<filter>" with on|off each; an empty list means all four cells.
AblationTable ablate(const RunConfig& config, const std::string& dimension,
                     std::vector<std::string> values, const PipelineOptions& options = {});

}  // namespace negrefine
