#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "negrefine/config.hpp"
#include "negrefine/error.hpp"
#include "test_helpers.hpp"

using namespace negrefine;
namespace fs = std::filesystem;

TEST_CASE("defaults") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  auto s = c.scoring();
  CHECK(s.tau == 0.01);
  CHECK(s.k == 5);
  CHECK(s.alpha == 2.0);
  CHECK(s.variant == MmVariant::max_softmax_pair);
  CHECK(s.use_mm);
  CHECK(c.filter().n == 10);
  CHECK(c.filter_enabled());
  CHECK(c.mining().p_percent == 15.0);
  CHECK(c.tpr_target() == 0.95);
  CHECK_FALSE(c.allow_partial());
}

TEST_CASE("file parsing with relative paths") {
  testing::TempDir tmp("cfg");
  fs::create_directories(tmp / "sub");
  std::ofstream(tmp / "sub" / "c.ini") << "# top comment\n"
                                          "[scoring]\n"
                                          "alpha = 0.5   \n"
                                          "variant=max_diff\n"
                                          "; another comment\n"
                                          "[inputs]\n"
                                          "lexicon = words.txt\n"
                                          "ood_images = a=x/a, b=/abs/b\n";
  auto c = RunConfig::load(tmp / "sub" / "c.ini");
  CHECK(c.scoring().alpha == 0.5);
  CHECK(c.scoring().variant == MmVariant::max_diff);
  CHECK(fs::path(c.get("inputs", "lexicon")) == (tmp / "sub" / "words.txt").lexically_normal());
  auto ood = c.ood_images();
  REQUIRE(ood.size() == 2);
  CHECK(ood[0].first == "a");
  CHECK(ood[0].second == (tmp / "sub" / "x" / "a").lexically_normal());
  CHECK(ood[1].second == "/abs/b");

  auto again = RunConfig::load(tmp / "sub" / "c.ini");
  CHECK(again.digest() == c.digest());
}

TEST_CASE("to_text reloads to the same values") {
  testing::TempDir tmp("cfg");
  RunConfig c;
  c.set("scoring", "k", "7");
  c.set("negfilter", "enabled", "false");
  std::ofstream(tmp / "dump.ini") << c.to_text();
  auto back = RunConfig::load(tmp / "dump.ini");
  CHECK(back.to_text() == c.to_text());
  CHECK(back.digest() == c.digest());
}

TEST_CASE("rejections") {
  RunConfig c;
  CHECK_THROWS_AS(c.set("scoring", "bogus", "1"), Error);
  CHECK_THROWS_AS(c.merge_text("[nosuch]\n", "."), Error);
  CHECK_THROWS_AS(c.merge_text("alpha = 1\n", "."), Error);
  CHECK_THROWS_AS(c.merge_text("[scoring]\nalpha\n", "."), Error);
  CHECK_THROWS_AS(c.merge_text("[scoring\n", "."), Error);
  CHECK_THROWS_AS(RunConfig::load("/nonexistent/negrefine.ini"), Error);

  auto bad = [](const char* section, const char* key, const char* value) {
    RunConfig r;
    r.set(section, key, value);
    return r;
  };
  CHECK_THROWS_AS(bad("scoring", "tau", "0").validate(), Error);
  CHECK_THROWS_AS(bad("scoring", "tau", "abc").validate(), Error);
  CHECK_THROWS_AS(bad("scoring", "k", "-1").validate(), Error);
  CHECK_THROWS_AS(bad("scoring", "alpha", "-2").validate(), Error);
  CHECK_THROWS_AS(bad("scoring", "variant", "median").validate(), Error);
  CHECK_THROWS_AS(bad("negmine", "p_percent", "0").validate(), Error);
  CHECK_THROWS_AS(bad("negmine", "p_percent", "101").validate(), Error);
  CHECK_THROWS_AS(bad("negfilter", "n", "0").validate(), Error);
  CHECK_THROWS_AS(bad("negfilter", "unparseable_policy", "guess").validate(), Error);
  CHECK_THROWS_AS(bad("eval", "tpr_target", "1.5").validate(), Error);
  CHECK_THROWS_AS(bad("providers", "embedder", "clip").validate(), Error);
  CHECK_THROWS_AS(bad("providers", "embed_dim", "1").validate(), Error);
  CHECK_THROWS_AS(bad("inputs", "ood_images", "a=/x,a=/y").validate(), Error);
  CHECK_THROWS_AS(bad("inputs", "ood_images", "nameless"), Error);
}

TEST_CASE("booleans and numbers") {
  CHECK(parse_bool("ON"));
  CHECK_FALSE(parse_bool("no"));
  CHECK_THROWS_AS(parse_bool("maybe"), Error);
  CHECK(parse_double("2.5", "x") == 2.5);
  CHECK_THROWS_AS(parse_double("2.5x", "x"), Error);
  CHECK(parse_u64("12", "x") == 12);
  CHECK_THROWS_AS(parse_u64("-3", "x"), Error);
}

TEST_CASE("digest covers results, not operations") {
  RunConfig base;
  auto d = base.digest();
  auto changed = [&](const char* s, const char* k, const char* v) {
    RunConfig c;
    c.set(s, k, v);
    return c.digest();
  };
  CHECK(changed("scoring", "alpha", "3") != d);
  CHECK(changed("run", "seed", "9") != d);
  CHECK(changed("negfilter", "n", "4") != d);
  CHECK(changed("run", "out_dir", "/tmp/elsewhere") == d);
  CHECK(changed("run", "workers", "7") == d);
  CHECK(changed("providers", "retry_base_ms", "5") == d);
  CHECK(changed("providers", "llm_endpoint", "http://x") == d);
}

TEST_CASE("digest follows file contents, not paths") {
  testing::TempDir tmp("cfg");
  std::ofstream(tmp / "a.txt") << "bee\nowl\n";
  std::ofstream(tmp / "b.txt") << "bee\nowl\n";
  RunConfig a, b;
  a.set("inputs", "lexicon", (tmp / "a.txt").string());
  b.set("inputs", "lexicon", (tmp / "b.txt").string());
  CHECK(a.digest() == b.digest());
  std::ofstream(tmp / "b.txt") << "bee\nowl\ncanoe\n";
  CHECK(a.digest() != b.digest());
}

TEST_CASE("canonical subsets") {
  RunConfig a, b;
  b.set("scoring", "alpha", "0");
  CHECK(a.canonical_subset({"negmine.*"}) == b.canonical_subset({"negmine.*"}));
  CHECK(a.canonical_subset({"scoring.alpha"}) != b.canonical_subset({"scoring.alpha"}));
  CHECK(a.canonical_subset({"scoring.k"}) == b.canonical_subset({"scoring.k"}));
}

TEST_CASE("environment overlay") {
  ::setenv("NEGREFINE_LLM_MODEL", "env-model", 1);
  RunConfig c;
  CHECK(c.get("providers", "llm_model") == "env-model");
  c.merge_text("[providers]\nllm_model = file-model\n", ".");
  CHECK(c.get("providers", "llm_model") == "file-model");
  c.set("providers", "llm_model", "flag-model");
  CHECK(c.get("providers", "llm_model") == "flag-model");
  ::unsetenv("NEGREFINE_LLM_MODEL");
}
