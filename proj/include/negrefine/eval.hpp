#pragma once

#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace negrefine {

// Mann-Whitney AUROC with in-distribution as the positive class; ties count
// one half. O((n+m) log(n+m)).
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

struct ThresholdResult {
  double gamma = 0.0;
  double fpr = 0.0;
};

// gamma = ascending(id)[floor((1 - tpr_target) * n_id)],
// fpr   = #{ood >= gamma} / n_ood.
ThresholdResult fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores,
                           double tpr_target = 0.95);

enum class Detection { in_distribution, ood };

inline constexpr double kAcceptAll = -std::numeric_limits<double>::infinity();

// In-distribution iff score >= gamma.
inline Detection detect(double score, double gamma) noexcept {
  return score >= gamma ? Detection::in_distribution : Detection::ood;
}

inline constexpr const char* kThresholdConvention =
    "gamma = sort_ascending(id_scores)[floor((1 - tpr_target) * n_id)]; "
    "fpr = count(ood_score >= gamma) / n_ood; ties in AUROC count 1/2";

struct DatasetMetrics {
  std::string name;
  double auroc = 0.0;
  double fpr = 0.0;
  std::size_t n_ood = 0;
};

struct MetricsReport {
  std::string config_digest;
  std::string scoring_digest;
  double tpr_target = 0.95;
  double gamma = 0.0;
  std::size_t n_id = 0;
  std::size_t id_failed = 0;
  std::vector<DatasetMetrics> datasets;
  double avg_auroc = 0.0;
  double avg_fpr = 0.0;

  // Human-readable key/value lines followed by a JSON block.
  std::string to_text() const;
  static MetricsReport from_text(const std::string& text);
};

MetricsReport compute_metrics(std::span<const double> id_scores,
                              const std::vector<std::pair<std::string, std::vector<double>>>& ood_sets,
                              double tpr_target = 0.95);

struct OodScoreSource {
  std::string name;
  std::filesystem::path path;
};

// Reads score files, checks that every file carries the same config digest,
// and evaluates. Failed records are excluded only when allow_partial is set;
// otherwise their presence is a partial_results error.
MetricsReport metrics_report(const std::filesystem::path& id_scores,
                             std::span<const OodScoreSource> ood_scores, double tpr_target = 0.95,
                             bool allow_partial = false);

}  // namespace negrefine
