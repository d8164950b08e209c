#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "negrefine/error.hpp"
#include "negrefine/scoring.hpp"
#include "test_helpers.hpp"

using namespace negrefine;

namespace {

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Straight-line scoring of one image: no batching, no memo, no threads.
ScoreRecord reference_record(std::span<const float> x, const EmbeddingArchive& id,
                             const EmbeddingArchive& neg, TextEmbedder& e, const ScoreConfig& c) {
  ScoreRecord r;
  std::vector<double> si, sn;
  for (std::size_t i = 0; i < id.rows(); ++i) si.push_back(dot(x, id.row(i)));
  for (std::size_t j = 0; j < neg.rows(); ++j) sn.push_back(dot(x, neg.row(j)));
  double a = 0, b = 0;
  for (double s : si) a += std::exp(s / c.tau);
  for (double s : sn) b += std::exp(s / c.tau);
  r.s_neglabel = a / (a + b);
  auto order = [](const std::vector<double>& v, std::size_t k) {
    std::vector<std::size_t> o(v.size());
    std::iota(o.begin(), o.end(), 0);
    std::stable_sort(o.begin(), o.end(), [&](auto p, auto q) { return v[p] > v[q]; });
    o.resize(std::min(k, o.size()));
    return o;
  };
  r.top_in = order(si, c.k);
  r.top_neg = order(sn, c.k);
  double best = -1;
  for (auto i : r.top_in) {
    for (auto j : r.top_neg) {
      std::vector<std::string> one{pair_text(id.ids[i], neg.ids[j], c)};
      auto t = e.embed_batch(one);
      double s_t = dot(x, t.row(0));
      double ker = std::exp(s_t / c.tau) / (std::exp(s_t / c.tau) + std::exp(sn[j] / c.tau));
      best = std::max(best, ker);
    }
  }
  r.s_mm = best;
  r.s_final = r.s_neglabel + c.alpha * r.s_mm;
  return r;
}

// Fails any batch containing a text with `poison` in it.
class PoisonEmbedder final : public TextEmbedder {
 public:
  explicit PoisonEmbedder(std::string poison) : poison_(std::move(poison)), inner_(8, 0) {}
  std::size_t dim() const override { return 8; }
  bool deterministic() const override { return true; }
  std::string model_tag() const override { return "poison"; }
  Matrix embed_batch(std::span<const std::string> texts) override {
    for (const auto& t : texts) {
      if (t.find(poison_) != std::string::npos) fail(ErrorCode::transport, "refused " + t);
    }
    return inner_.embed_batch(texts);
  }

 private:
  std::string poison_;
  SyntheticEmbedder inner_;
};

}  // namespace

TEST_CASE("s_neglabel examples") {
  std::vector<double> one{0.3};
  CHECK(s_neglabel(one, one, 0.01) == doctest::Approx(0.5));
  std::vector<double> in3(3, 0.2), neg7(7, 0.2);
  CHECK(s_neglabel(in3, neg7, 0.01) == doctest::Approx(0.3).epsilon(1e-12));
  std::vector<double> in{0.30, 0.25}, neg{0.28, 0.20};
  CHECK(std::abs(s_neglabel(in, neg, 0.01) - 0.8814) <= 1e-3);
  std::vector<double> big_in{1.0}, big_neg{0.99};
  CHECK(std::isfinite(s_neglabel(big_in, big_neg, 1e-4)));
  CHECK_THROWS_AS(s_neglabel({}, one, 0.01), Error);
  CHECK_THROWS_AS(s_neglabel(one, one, 0.0), Error);
}

TEST_CASE("s_neglabel monotone and shift invariant") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> in(4), neg(9);
    for (auto& v : in) v = u(rng);
    for (auto& v : neg) v = u(rng);
    double base = s_neglabel(in, neg, 0.1);
    CHECK(base > 0.0);
    CHECK(base < 1.0);
    auto in2 = in;
    in2[trial % 4] += 0.01;
    CHECK(s_neglabel(in2, neg, 0.1) > base);
    auto neg2 = neg;
    neg2[trial % 9] += 0.01;
    CHECK(s_neglabel(in, neg2, 0.1) < base);
    auto si = in, sn = neg;
    for (auto& v : si) v += 0.3;
    for (auto& v : sn) v += 0.3;
    CHECK(std::abs(s_neglabel(si, sn, 0.1) - base) <= 1e-9);
  }
}

TEST_CASE("top_k") {
  std::vector<double> a{0.2, 0.9, 0.5};
  CHECK(top_k(a, 1) == std::vector<std::size_t>{1});
  std::vector<double> eq(4, 0.1);
  CHECK(top_k(eq, 2) == std::vector<std::size_t>{0, 1});
  CHECK(top_k(a, 10).size() == 3);

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> s(100);
  for (auto& v : s) v = u(rng);
  std::vector<std::size_t> o(100);
  std::iota(o.begin(), o.end(), 0);
  std::sort(o.begin(), o.end(), [&](auto p, auto q) { return s[p] > s[q]; });
  o.resize(5);
  CHECK(top_k(s, 5) == o);
}

TEST_CASE("kernel values") {
  CHECK(std::abs(mm_kernel(0.344, 0.319, 0.01) - 0.9241) <= 1e-4);
  CHECK(std::abs(mm_kernel(0.0624, 0.0, 0.01) - 0.99806) <= 1e-4);
  CHECK(mm_kernel(0.3, 0.3, 0.01) == 0.5);
  CHECK(mm_kernel(1.0, -1.0, 1e-4) == doctest::Approx(1.0));
  CHECK(mm_kernel(-1.0, 1.0, 1e-4) >= 0.0);
  CHECK(mm_kernel(0.31, 0.3, 0.01) > 0.5);
  CHECK(mm_kernel(0.29, 0.3, 0.01) < 0.5);
  CHECK(mm_kernel(0.32, 0.3, 0.01) > mm_kernel(0.31, 0.3, 0.01));
  CHECK(mm_kernel(0.3, 0.31, 0.01) < mm_kernel(0.3, 0.30, 0.01));
  CHECK(mm_kernel(0.344 + 0.2, 0.319 + 0.2, 0.01) ==
        doctest::Approx(mm_kernel(0.344, 0.319, 0.01)).epsilon(1e-9));
}

TEST_CASE("final score") {
  CHECK(final_score(0.9, 0.9, 2.0) == doctest::Approx(2.7));
  CHECK(final_score(0.37, 0.81, 0.0) == 0.37);
}

TEST_CASE("aggregate variants") {
  // 2 x 2 block
  std::vector<double> pair{0.35, 0.30, 0.28, 0.33};
  std::vector<double> neg{0.30, 0.31};
  const double tau = 0.01;
  auto ker = [&](double t, double n) { return logistic((t - n) / tau); };

  auto m = aggregate_mm(pair, neg, 2, MmVariant::max_softmax_pair, tau);
  CHECK(m.value == doctest::Approx(ker(0.35, 0.30)));
  REQUIRE(m.best);
  CHECK(m.best->in_rank == 0);
  CHECK(m.best->neg_rank == 0);

  double sum = ker(0.35, 0.30) + ker(0.30, 0.31) + ker(0.28, 0.30) + ker(0.33, 0.31);
  CHECK(aggregate_mm(pair, neg, 2, MmVariant::sum_softmax_pair, tau).value ==
        doctest::Approx(sum));
  CHECK(aggregate_mm(pair, neg, 2, MmVariant::avg_softmax_pair, tau).value ==
        doctest::Approx(sum / 4));
  CHECK(aggregate_mm(pair, neg, 2, MmVariant::max_diff, tau).value ==
        doctest::Approx((0.35 - 0.30) / tau));
  CHECK(aggregate_mm(pair, neg, 2, MmVariant::max_ratio, tau).value ==
        doctest::Approx(0.35 / 0.65));

  std::vector<double> flat(25, 0.2), flat_neg(5, 0.2);
  CHECK(aggregate_mm(flat, flat_neg, 5, MmVariant::max_softmax_pair, tau).value == 0.5);
  CHECK(aggregate_mm(flat, flat_neg, 5, MmVariant::avg_softmax_pair, tau).value == 0.5);
  CHECK(aggregate_mm(flat, flat_neg, 5, MmVariant::sum_softmax_pair, tau).value ==
        doctest::Approx(12.5));

  std::vector<double> zero{0.1}, zero_neg{-0.1};
  auto skipped = aggregate_mm(zero, zero_neg, 1, MmVariant::max_ratio, tau);
  CHECK_FALSE(skipped.best);
  CHECK_THROWS_AS(aggregate_mm(pair, neg, 3, MmVariant::max_diff, tau), Error);
}

TEST_CASE("variant names") {
  for (auto v : {MmVariant::max_softmax_pair, MmVariant::max_diff, MmVariant::max_ratio,
                 MmVariant::avg_softmax_pair, MmVariant::sum_softmax_pair}) {
    CHECK(parse_mm_variant(to_string(v)) == v);
  }
  CHECK_THROWS_AS(parse_mm_variant("median"), Error);
}

TEST_CASE("pair texts") {
  ScoreConfig c;
  CHECK(pair_text("bee", "tickseed sunflower", c) == "This is a bee and tickseed sunflower");
  std::vector<std::string> in{"a", "b"}, neg{"x", "y", "z"};
  auto t = pair_texts(in, neg, c);
  REQUIRE(t.size() == 6);
  CHECK(t[0] == "This is a a and x");
  CHECK(t[5] == "This is a b and z");
}

TEST_CASE("config validation and canonical form") {
  ScoreConfig c;
  CHECK_NOTHROW(c.validate());
  auto d = c;
  d.alpha = 3;
  CHECK(c.canonical() != d.canonical());
  d = c;
  d.tau = 0;
  CHECK_THROWS_AS(d.validate(), Error);
  d = c;
  d.k = 0;
  CHECK_THROWS_AS(d.validate(), Error);
  d = c;
  d.alpha = -1;
  CHECK_THROWS_AS(d.validate(), Error);
  d = c;
  d.concat_template = "{y} only";
  CHECK_THROWS_AS(d.validate(), Error);
}

TEST_CASE("fully symmetric single image") {
  // Pair text embeds to the negative label's vector.
  class Fixed final : public TextEmbedder {
   public:
    std::size_t dim() const override { return 2; }
    bool deterministic() const override { return true; }
    std::string model_tag() const override { return "fixed"; }
    Matrix embed_batch(std::span<const std::string> t) override {
      Matrix m(t.size(), 2);
      for (std::size_t i = 0; i < t.size(); ++i) m.row(i)[1] = 1.0f;
      return m;
    }
  } e;
  auto img = testing::archive_from({{1, 1}}, {"img"});
  auto id = testing::archive_from({{1, 0}}, {"y"});
  auto neg = testing::archive_from({{0, 1}}, {"n"});
  ScoreConfig c;
  auto r = score_dataset(img, id, neg, e, c);
  REQUIRE(r.size() == 1);
  CHECK(r[0].s_neglabel == doctest::Approx(0.5));
  CHECK(r[0].s_mm == doctest::Approx(0.5));
  CHECK(r[0].s_final == doctest::Approx(1.5));
}

TEST_CASE("dataset scoring matches the straight-line reference") {
  auto images = testing::random_archive(10, 32, 1, "img");
  auto id = testing::random_archive(5, 32, 2, "id");
  auto neg = testing::random_archive(20, 32, 3, "neg");
  SyntheticEmbedder e(32, 0);
  ScoreConfig c;
  c.tau = 0.1;
  c.workers = 3;
  ScoreStats stats;
  auto recs = score_dataset(images, id, neg, e, c, &stats);
  REQUIRE(recs.size() == 10);
  CHECK(stats.pair_texts_requested == 10 * 25);
  CHECK(stats.unique_pair_texts <= stats.pair_texts_requested);
  for (std::size_t i = 0; i < 10; ++i) {
    auto ref = reference_record(images.row(i), id, neg, e, c);
    CHECK(recs[i].image_id == images.ids[i]);
    CHECK(std::abs(recs[i].s_neglabel - ref.s_neglabel) <= 1e-6);
    CHECK(std::abs(recs[i].s_mm - ref.s_mm) <= 1e-6);
    CHECK(std::abs(recs[i].s_final - ref.s_final) <= 1e-6);
    CHECK(recs[i].top_in == ref.top_in);
    CHECK(recs[i].top_neg == ref.top_neg);
    CHECK(std::abs(recs[i].s_final - (recs[i].s_neglabel + c.alpha * recs[i].s_mm)) <= 1e-9);
    REQUIRE(recs[i].best_pair);
    CHECK(recs[i].best_in_label == id.ids[recs[i].top_in[recs[i].best_pair->in_rank]]);
  }
}

TEST_CASE("alpha 0 keeps the negative-label-only ranking") {
  auto images = testing::random_archive(40, 16, 5, "img");
  auto id = testing::random_archive(6, 16, 6, "id");
  auto neg = testing::random_archive(30, 16, 7, "neg");
  SyntheticEmbedder e(16, 0);
  ScoreConfig zero;
  zero.alpha = 0;
  ScoreConfig nl = zero;
  nl.use_mm = false;
  auto a = score_dataset(images, id, neg, e, zero);
  auto b = score_dataset(images, id, neg, e, nl);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].s_final == b[i].s_final);
}

TEST_CASE("per-image failure is recorded and the run continues") {
  auto images = testing::random_archive(6, 8, 1, "img");
  auto id = testing::archive_from({{1, 0, 0, 0, 0, 0, 0, 0}}, {"y"});
  auto neg = testing::random_archive(3, 8, 2, "neg");
  // Only images whose top negative set includes neg1 touch the poisoned text.
  PoisonEmbedder e("y and neg1");
  ScoreConfig c;
  c.k = 1;
  ScoreStats stats;
  auto recs = score_dataset(images, id, neg, e, c, &stats);
  std::size_t failed = 0;
  for (const auto& r : recs) {
    bool hits = neg.ids[r.top_neg[0]] == "neg1";
    CHECK(r.ok() == !hits);
    if (!r.ok()) {
      ++failed;
      CHECK(std::isnan(r.s_final));
      CHECK(r.error.find("Transport") != std::string::npos);
    }
  }
  CHECK(failed == stats.failed_images);
  CHECK(failed > 0);
  CHECK(failed < recs.size());
}

TEST_CASE("score file round trip") {
  testing::TempDir tmp("scores");
  auto images = testing::random_archive(5, 8, 1, "img");
  auto id = testing::random_archive(3, 8, 2, "id");
  auto neg = testing::random_archive(4, 8, 3, "neg");
  SyntheticEmbedder e(8, 0);
  ScoreConfig c;
  auto recs = score_dataset(images, id, neg, e, c);
  recs[2].error = "transport: down";
  recs[2].s_final = std::nan("");
  auto digest = scoring_digest(c, "a", "b", e.model_tag());
  CHECK(digest.size() == 64);
  CHECK(digest != scoring_digest(c, "a", "c", e.model_tag()));
  write_score_file(tmp / "s.tsv", digest, c, recs);
  auto f = read_score_file(tmp / "s.tsv");
  CHECK(f.config_digest == digest);
  REQUIRE(f.records.size() == 5);
  CHECK(f.failed() == 1);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(f.records[i].image_id == recs[i].image_id);
    if (i == 2) continue;
    CHECK(f.records[i].s_final == recs[i].s_final);
    CHECK(f.records[i].s_neglabel == recs[i].s_neglabel);
  }
  CHECK_THROWS_AS(read_score_file(tmp / "missing.tsv"), Error);
}
