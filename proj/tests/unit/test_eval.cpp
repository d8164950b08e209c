#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "negrefine/error.hpp"
#include "negrefine/eval.hpp"
#include "negrefine/scoring.hpp"
#include "test_helpers.hpp"

using namespace negrefine;

namespace {

double pairwise_auroc(const std::vector<double>& id, const std::vector<double>& ood) {
  double s = 0;
  for (double a : id) {
    for (double b : ood) s += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  }
  return s / (double(id.size()) * double(ood.size()));
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::stage_failure;
}

void write_scores(const std::filesystem::path& p, const std::string& digest,
                  const std::vector<double>& finals, int failed_index = -1) {
  std::vector<ScoreRecord> recs;
  for (std::size_t i = 0; i < finals.size(); ++i) {
    ScoreRecord r;
    r.image_id = "x" + std::to_string(i);
    r.s_neglabel = finals[i];
    r.s_final = finals[i];
    if (int(i) == failed_index) {
      r.error = "Transport: down";
      r.s_final = std::nan("");
    }
    recs.push_back(r);
  }
  ScoreConfig c;
  c.alpha = 0;
  write_score_file(p, digest, c, recs);
}

}  // namespace

TEST_CASE("auroc examples") {
  CHECK(auroc(std::vector<double>{0.9, 0.8}, std::vector<double>{0.1, 0.2}) == 1.0);
  CHECK(auroc(std::vector<double>{0.9, 0.4}, std::vector<double>{0.5, 0.1}) == 0.75);
  CHECK(auroc(std::vector<double>{0.5}, std::vector<double>{0.5}) == 0.5);
  CHECK(code_of([] { auroc({}, std::vector<double>{1.0}); }) == ErrorCode::empty_input);
}

TEST_CASE("auroc equals the pairwise definition with ties") {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 200; ++t) {
    std::size_t n = 1 + rng() % 200, m = 1 + rng() % 200;
    std::uniform_int_distribution<int> level(0, 1 + int(rng() % 30));
    std::vector<double> id(n), ood(m);
    for (auto& v : id) v = level(rng) * 0.1;
    for (auto& v : ood) v = level(rng) * 0.1 - 0.05 * (rng() % 2);
    CHECK(std::abs(auroc(id, ood) - pairwise_auroc(id, ood)) <= 1e-12);
  }
}

TEST_CASE("auroc symmetry and monotone invariance") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(40), b(60);
    for (auto& v : a) v = g(rng) + 0.5;
    for (auto& v : b) v = g(rng);
    CHECK(auroc(a, b) + auroc(b, a) == doctest::Approx(1.0).epsilon(1e-12));
    auto ta = a, tb = b;
    for (auto& v : ta) v = std::exp(2 * v) + 3;
    for (auto& v : tb) v = std::exp(2 * v) + 3;
    CHECK(auroc(ta, tb) == auroc(a, b));
    CHECK(fpr_at_tpr(ta, tb).fpr == fpr_at_tpr(a, b).fpr);
  }
}

TEST_CASE("fpr at tpr") {
  auto r = fpr_at_tpr(std::vector<double>{0.9, 0.4}, std::vector<double>{0.5, 0.1});
  CHECK(r.gamma == 0.4);
  CHECK(r.fpr == 0.5);
  auto sep = fpr_at_tpr(std::vector<double>{0.7, 0.8, 0.9}, std::vector<double>{0.1, 0.6}, 0.5);
  CHECK(sep.fpr == 0.0);
  auto flat = fpr_at_tpr(std::vector<double>(5, 0.3), std::vector<double>(4, 0.3));
  CHECK(flat.gamma == 0.3);
  CHECK(flat.fpr == 1.0);

  std::vector<double> id(100);
  for (int i = 0; i < 100; ++i) id[i] = i;
  CHECK(fpr_at_tpr(id, std::vector<double>{0}).gamma == 5.0);
  CHECK(code_of([] { fpr_at_tpr(std::vector<double>{1}, std::vector<double>{1}, 0.0); }) ==
        ErrorCode::invalid_argument);
  CHECK(code_of([] { fpr_at_tpr({}, std::vector<double>{1}); }) == ErrorCode::empty_input);
}

TEST_CASE("tpr guarantee") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 300; ++t) {
    std::size_t n = 1 + rng() % 200;
    std::vector<double> id(n);
    for (auto& v : id) v = double(rng() % 20);
    double target = (1 + rng() % 100) / 100.0;
    auto r = fpr_at_tpr(id, std::vector<double>{0.5}, target);
    std::size_t above = std::count_if(id.begin(), id.end(), [&](double v) { return v >= r.gamma; });
    CHECK(double(above) / double(n) >= target);
  }
}

TEST_CASE("detection rule") {
  CHECK(detect(0.4, 0.4) == Detection::in_distribution);
  CHECK(detect(std::nextafter(0.4, 0.0), 0.4) == Detection::ood);
  CHECK(detect(-1e300, kAcceptAll) == Detection::in_distribution);
}

TEST_CASE("compute metrics averages per set") {
  std::vector<double> id{0.9, 0.8, 0.7, 0.6};
  auto one = compute_metrics(id, {{"a", {0.1, 0.65}}});
  REQUIRE(one.datasets.size() == 1);
  CHECK(one.avg_auroc == one.datasets[0].auroc);
  CHECK(one.avg_fpr == one.datasets[0].fpr);

  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  std::vector<std::pair<std::string, std::vector<double>>> sets;
  for (int s = 0; s < 4; ++s) {
    std::vector<double> v(50);
    for (auto& x : v) x = g(rng) + 0.3 * s;
    sets.emplace_back("set" + std::to_string(s), v);
  }
  std::vector<double> ids(80);
  for (auto& x : ids) x = g(rng) + 1.5;
  auto rep = compute_metrics(ids, sets);
  double sa = 0, sf = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    CHECK(rep.datasets[s].auroc == auroc(ids, sets[s].second));
    CHECK(rep.datasets[s].fpr == fpr_at_tpr(ids, sets[s].second).fpr);
    sa += rep.datasets[s].auroc;
    sf += rep.datasets[s].fpr;
  }
  CHECK(rep.avg_auroc == doctest::Approx(sa / 4));
  CHECK(rep.avg_fpr == doctest::Approx(sf / 4));
  CHECK(rep.n_id == 80);
}

TEST_CASE("report text round trip") {
  auto rep = compute_metrics(std::vector<double>{0.9, 0.4},
                             {{"near", {0.5, 0.1}}, {"far", {0.0, 0.1}}});
  rep.config_digest = std::string(64, 'a');
  rep.scoring_digest = std::string(64, 'b');
  auto text = rep.to_text();
  CHECK(text.find(kThresholdConvention) != std::string::npos);
  CHECK(text.find("75.00") != std::string::npos);
  auto back = MetricsReport::from_text(text);
  CHECK(back.config_digest == rep.config_digest);
  CHECK(back.scoring_digest == rep.scoring_digest);
  REQUIRE(back.datasets.size() == 2);
  CHECK(back.datasets[0].name == "near");
  CHECK(back.datasets[0].auroc == 0.75);
  CHECK(back.avg_fpr == rep.avg_fpr);
  CHECK(back.gamma == rep.gamma);
  CHECK(back.to_text() == text);
}

TEST_CASE("metrics report from score files") {
  testing::TempDir tmp("eval");
  const std::string d1(64, '1'), d2(64, '2');
  write_scores(tmp / "id.tsv", d1, {0.9, 0.8, 0.7, 0.4});
  write_scores(tmp / "a.tsv", d1, {0.5, 0.1});
  write_scores(tmp / "b.tsv", d1, {0.85, 0.2});
  write_scores(tmp / "other.tsv", d2, {0.5, 0.1});
  write_scores(tmp / "partial.tsv", d1, {0.5, 0.1, 0.3}, 1);

  std::vector<OodScoreSource> two{{"a", tmp / "a.tsv"}, {"b", tmp / "b.tsv"}};
  auto rep = metrics_report(tmp / "id.tsv", two);
  CHECK(rep.scoring_digest == d1);
  CHECK(rep.datasets.size() == 2);
  CHECK(rep.avg_auroc ==
        doctest::Approx((rep.datasets[0].auroc + rep.datasets[1].auroc) / 2));

  std::vector<OodScoreSource> mixed{{"a", tmp / "a.tsv"}, {"o", tmp / "other.tsv"}};
  CHECK(code_of([&] { metrics_report(tmp / "id.tsv", mixed); }) ==
        ErrorCode::config_digest_mismatch);

  std::vector<OodScoreSource> partial{{"p", tmp / "partial.tsv"}};
  CHECK(code_of([&] { metrics_report(tmp / "id.tsv", partial); }) ==
        ErrorCode::partial_results);
  auto ok = metrics_report(tmp / "id.tsv", partial, 0.95, true);
  CHECK(ok.datasets[0].n_ood == 2);

  CHECK(code_of([&] { metrics_report(tmp / "id.tsv", {}); }) == ErrorCode::empty_input);
}
