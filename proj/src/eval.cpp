#include "negrefine/eval.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "negrefine/error.hpp"
#include "negrefine/scoring.hpp"

namespace negrefine {

using json = nlohmann::json;

namespace {

void require_finite(std::span<const double> xs, const char* what) {
  for (double x : xs) {
    if (!std::isfinite(x)) fail(ErrorCode::non_finite_value, std::string(what) + " contains NaN/Inf");
  }
}

}  // namespace

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  if (id_scores.empty() || ood_scores.empty()) {
    fail(ErrorCode::empty_input, "AUROC needs scores on both sides");
  }
  require_finite(id_scores, "id scores");
  require_finite(ood_scores, "ood scores");
  const std::size_t n = id_scores.size();
  const std::size_t m = ood_scores.size();
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> all;
  all.reserve(n + m);
  for (double s : id_scores) all.push_back({s, true});
  for (double s : ood_scores) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  // Twice the positive rank sum, kept integral so tied midranks stay exact.
  long double rank_sum_x2 = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::size_t positives = 0;
    while (j < all.size() && all[j].score == all[i].score) positives += all[j++].positive;
    // Ranks i+1..j share the midrank (i+1+j)/2.
    rank_sum_x2 += static_cast<long double>(positives) * static_cast<long double>(i + 1 + j);
    i = j;
  }
  const long double u_x2 = rank_sum_x2 - static_cast<long double>(n) * (n + 1);
  return static_cast<double>(u_x2 / (2.0L * n * m));
}

ThresholdResult fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores,
                           double tpr_target) {
  if (id_scores.empty() || ood_scores.empty()) {
    fail(ErrorCode::empty_input, "FPR needs scores on both sides");
  }
  if (!(tpr_target > 0.0 && tpr_target <= 1.0)) {
    fail(ErrorCode::invalid_argument, "tpr_target must be in (0, 1]");
  }
  require_finite(id_scores, "id scores");
  require_finite(ood_scores, "ood scores");
  std::vector<double> sorted(id_scores.begin(), id_scores.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  auto idx = static_cast<std::size_t>(std::floor((1.0 - tpr_target) * double(n) + 1e-9));
  idx = std::min(idx, n - 1);
  ThresholdResult r;
  r.gamma = sorted[idx];
  const auto above = std::count_if(ood_scores.begin(), ood_scores.end(),
                                   [&](double s) { return s >= r.gamma; });
  r.fpr = double(above) / double(ood_scores.size());
  return r;
}

MetricsReport compute_metrics(std::span<const double> id_scores,
                              const std::vector<std::pair<std::string, std::vector<double>>>& ood_sets,
                              double tpr_target) {
  if (ood_sets.empty()) fail(ErrorCode::empty_input, "at least one OOD set is required");
  MetricsReport rep;
  rep.tpr_target = tpr_target;
  rep.n_id = id_scores.size();
  for (const auto& [name, scores] : ood_sets) {
    DatasetMetrics d;
    d.name = name;
    d.n_ood = scores.size();
    d.auroc = auroc(id_scores, scores);
    auto t = fpr_at_tpr(id_scores, scores, tpr_target);
    d.fpr = t.fpr;
    rep.gamma = t.gamma;
    rep.avg_auroc += d.auroc;
    rep.avg_fpr += d.fpr;
    rep.datasets.push_back(std::move(d));
  }
  rep.avg_auroc /= double(rep.datasets.size());
  rep.avg_fpr /= double(rep.datasets.size());
  return rep;
}

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string MetricsReport::to_text() const {
  std::ostringstream s;
  s << "# negrefine metrics report v1\n"
    << "config_digest: " << config_digest << "\n"
    << "scoring_digest: " << scoring_digest << "\n"
    << "threshold_convention: " << kThresholdConvention << "\n"
    << "tpr_target: " << tpr_target << "\n"
    << "n_id: " << n_id << "\n"
    << "id_failed_excluded: " << id_failed << "\n"
    << "gamma: " << real(gamma) << "\n";
  for (const auto& d : datasets) {
    s << "dataset " << d.name << ": AUROC " << pct(d.auroc) << "  FPR95 " << pct(d.fpr)
      << "  n_ood " << d.n_ood << "\n";
  }
  s << "average: AUROC " << pct(avg_auroc) << "  FPR95 " << pct(avg_fpr) << "\n";

  json j;
  j["config_digest"] = config_digest;
  j["scoring_digest"] = scoring_digest;
  j["threshold_convention"] = kThresholdConvention;
  j["tpr_target"] = tpr_target;
  j["gamma"] = gamma;
  j["n_id"] = n_id;
  j["id_failed_excluded"] = id_failed;
  j["average"] = {{"auroc", avg_auroc}, {"fpr", avg_fpr}};
  json sets = json::array();
  for (const auto& d : datasets) {
    sets.push_back({{"name", d.name}, {"auroc", d.auroc}, {"fpr", d.fpr}, {"n_ood", d.n_ood}});
  }
  j["datasets"] = std::move(sets);
  s << "--- machine-readable ---\n" << j.dump(2) << "\n";
  return s.str();
}

MetricsReport MetricsReport::from_text(const std::string& text) {
  const std::string marker = "--- machine-readable ---\n";
  auto pos = text.find(marker);
  if (pos == std::string::npos) fail(ErrorCode::malformed_header, "no machine-readable block");
  MetricsReport r;
  try {
    auto j = json::parse(text.substr(pos + marker.size()));
    r.config_digest = j.at("config_digest").get<std::string>();
    r.scoring_digest = j.value("scoring_digest", std::string{});
    r.tpr_target = j.at("tpr_target").get<double>();
    r.gamma = j.at("gamma").get<double>();
    r.n_id = j.at("n_id").get<std::size_t>();
    r.id_failed = j.value("id_failed_excluded", std::size_t{0});
    r.avg_auroc = j.at("average").at("auroc").get<double>();
    r.avg_fpr = j.at("average").at("fpr").get<double>();
    for (const auto& d : j.at("datasets")) {
      r.datasets.push_back({d.at("name").get<std::string>(), d.at("auroc").get<double>(),
                            d.at("fpr").get<double>(), d.at("n_ood").get<std::size_t>()});
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::malformed_header, std::string("bad metrics block: ") + e.what());
  }
  return r;
}

MetricsReport metrics_report(const std::filesystem::path& id_scores,
                             std::span<const OodScoreSource> ood_scores, double tpr_target,
                             bool allow_partial) {
  if (ood_scores.empty()) fail(ErrorCode::empty_input, "at least one OOD score file is required");
  auto id_file = read_score_file(id_scores);
  auto finals = [&](const ScoreFile& f, const std::string& label) {
    if (f.failed() > 0 && !allow_partial) {
      fail(ErrorCode::partial_results,
           label + " has " + std::to_string(f.failed()) +
               " failed records; pass allow_partial to evaluate the rest");
    }
    std::vector<double> v;
    for (const auto& r : f.records) {
      if (r.ok()) v.push_back(r.s_final);
    }
    return v;
  };
  auto id_values = finals(id_file, id_scores.string());
  std::vector<std::pair<std::string, std::vector<double>>> sets;
  for (const auto& src : ood_scores) {
    auto f = read_score_file(src.path);
    if (f.config_digest != id_file.config_digest) {
      fail(ErrorCode::config_digest_mismatch, src.path.string() + " was scored under digest " +
                                                  f.config_digest + ", expected " +
                                                  id_file.config_digest);
    }
    sets.emplace_back(src.name, finals(f, src.path.string()));
  }
  auto rep = compute_metrics(id_values, sets, tpr_target);
  rep.config_digest = id_file.config_digest;
  rep.scoring_digest = id_file.config_digest;
  rep.id_failed = id_file.failed();
  return rep;
}

}  // namespace negrefine
