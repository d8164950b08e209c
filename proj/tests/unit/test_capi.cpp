#include <doctest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "negrefine/negrefine.h"

namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& tag)
      : dir(fs::temp_directory_path() / ("negrefine_capi_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  std::string operator/(const std::string& s) const { return (dir / s).string(); }
};

}  // namespace

TEST_CASE("status helpers") {
  CHECK(std::string(nr_version()).size() > 0);
  CHECK(std::string(nr_status_string(NR_OK)) == "ok");
  CHECK(nr_status_exit_code(NR_OK) == 0);
  CHECK(nr_status_exit_code(NR_INVALID_ARGUMENT) == 2);
  CHECK(nr_status_exit_code(NR_TRANSPORT) == 3);
  CHECK(nr_status_exit_code(NR_PROTOCOL_VIOLATION) == 3);
  CHECK(nr_status_exit_code(NR_UNPARSEABLE) == 3);
  CHECK(nr_status_exit_code(NR_CONFIG_DIGEST_MISMATCH) == 2);
}

TEST_CASE("config handle") {
  nr_config* cfg = nullptr;
  REQUIRE(nr_config_create(&cfg) == NR_OK);
  CHECK(nr_config_set(cfg, "scoring", "alpha", "0.5") == NR_OK);
  char buf[8];
  size_t needed = 0;
  CHECK(nr_config_get(cfg, "scoring", "alpha", buf, sizeof buf, &needed) == NR_OK);
  CHECK(std::string(buf) == "0.5");
  CHECK(nr_config_get(cfg, "scoring", "concat_template", buf, sizeof buf, &needed) == NR_OK);
  CHECK(needed == std::string("{y} and {yneg}").size());
  CHECK(std::string(buf).size() == sizeof buf - 1);
  CHECK(std::string(nr_config_digest(cfg)).size() == 64);
  CHECK(std::string(nr_config_text(cfg)).find("[scoring]") != std::string::npos);
  CHECK(nr_config_validate(cfg) == NR_OK);

  CHECK(nr_config_set(cfg, "scoring", "nope", "1") == NR_INVALID_ARGUMENT);
  CHECK(std::string(nr_last_error()).find("scoring.nope") != std::string::npos);
  CHECK(nr_config_set(cfg, "scoring", "tau", "-1") == NR_OK);
  CHECK(nr_config_validate(cfg) == NR_INVALID_ARGUMENT);
  CHECK(nr_config_set(nullptr, "a", "b", "c") == NR_INVALID_ARGUMENT);
  CHECK(nr_config_load("/nonexistent/x.ini", &cfg) == NR_IO_FAILURE);
  nr_config_destroy(cfg);
  nr_config_destroy(nullptr);
}

TEST_CASE("archive handle") {
  Scratch s("arch");
  const float data[] = {3, 4, 0, 1};
  const char* ids[] = {"a", "b"};
  nr_archive* a = nullptr;
  REQUIRE(nr_archive_create(2, 2, data, ids, 0, "t", &a) == NR_OK);
  CHECK(nr_archive_rows(a) == 2);
  CHECK(nr_archive_dim(a) == 2);
  CHECK(std::string(nr_archive_id(a, 1)) == "b");
  CHECK(nr_archive_row(a, 0)[0] == doctest::Approx(0.6));
  CHECK(nr_archive_id(a, 5) == nullptr);
  REQUIRE(nr_archive_save(a, (s / "arc").c_str()) == NR_OK);

  nr_archive* b = nullptr;
  REQUIRE(nr_archive_load((s / "arc").c_str(), &b) == NR_OK);
  double sim[4];
  REQUIRE(nr_similarity(a, b, sim) == NR_OK);
  CHECK(sim[0] == doctest::Approx(1.0));
  CHECK(sim[1] == doctest::Approx(0.8));
  nr_archive_destroy(a);
  nr_archive_destroy(b);

  const char* dup[] = {"a", "a"};
  CHECK(nr_archive_create(2, 2, data, dup, 0, "t", &a) == NR_DUPLICATE_ID);
  const float zero[] = {0, 0, 1, 0};
  CHECK(nr_archive_create(2, 2, zero, ids, 0, "t", &a) == NR_DEGENERATE_ROW);
  CHECK(nr_archive_load((s / "missing").c_str(), &a) != NR_OK);
}

TEST_CASE("primitives") {
  const double in[] = {0.30, 0.25}, neg[] = {0.28, 0.20};
  double v = 0;
  REQUIRE(nr_s_neglabel(in, 2, neg, 2, 0.01, &v) == NR_OK);
  CHECK(std::abs(v - 0.8814) <= 1e-3);
  CHECK(nr_s_neglabel(in, 0, neg, 2, 0.01, &v) == NR_EMPTY_INPUT);
  CHECK(std::abs(nr_mm_kernel(0.344, 0.319, 0.01) - 0.9241) <= 1e-4);
  CHECK(nr_final_score(0.9, 0.9, 2) == doctest::Approx(2.7));

  const double id[] = {0.9, 0.4}, ood[] = {0.5, 0.1};
  REQUIRE(nr_auroc(id, 2, ood, 2, &v) == NR_OK);
  CHECK(v == 0.75);
  double gamma = 0, fpr = 0;
  REQUIRE(nr_fpr_at_tpr(id, 2, ood, 2, 0.95, &gamma, &fpr) == NR_OK);
  CHECK(gamma == 0.4);
  CHECK(fpr == 0.5);
  CHECK(nr_detect(0.4, 0.4) == 1);
  CHECK(nr_detect(0.39, 0.4) == 0);
  CHECK(nr_detect(-5, -INFINITY) == 1);
}

TEST_CASE("fixture pipeline through the handle API") {
  Scratch s("run");
  REQUIRE(nr_fixture_write((s / "data").c_str(), 3) == NR_OK);
  nr_config* cfg = nullptr;
  REQUIRE(nr_config_load((s / "data/config.ini").c_str(), &cfg) == NR_OK);
  REQUIRE(nr_config_set(cfg, "run", "out_dir", (s / "runs").c_str()) == NR_OK);

  nr_report* r = nullptr;
  REQUIRE(nr_run_pipeline(cfg, 0, &r) == NR_OK);
  CHECK(nr_report_datasets(r) == 2);
  CHECK(nr_report_skipped_stages(r) == 0);
  CHECK(nr_report_avg_auroc(r) > 0.9);
  CHECK(std::string(nr_report_dataset_name(r, 0)) == "far");
  const std::string text = nr_report_text(r);
  CHECK(fs::exists(nr_report_path(r)));

  nr_report* again = nullptr;
  REQUIRE(nr_run_pipeline(cfg, 0, &again) == NR_OK);
  CHECK(nr_report_skipped_stages(again) == 4);
  CHECK(std::string(nr_report_text(again)) == text);
  nr_report_destroy(again);
  nr_report_destroy(r);

  // Stage by stage.
  REQUIRE(nr_stage_mine(cfg, (s / "data/lexicon.txt").c_str(), (s / "data/id_labels.txt").c_str(),
                        (s / "m").c_str()) == NR_OK);
  REQUIRE(nr_stage_filter(cfg, (s / "m/neg_text").c_str(), (s / "m/id_text").c_str(),
                          (s / "j.journal").c_str(), (s / "f").c_str()) == NR_OK);
  REQUIRE(nr_stage_score(cfg, (s / "data/images/id").c_str(), (s / "m/id_text").c_str(),
                         (s / "f").c_str(), (s / "id.tsv").c_str()) == NR_OK);
  REQUIRE(nr_stage_score(cfg, (s / "data/images/ood_near").c_str(), (s / "m/id_text").c_str(),
                         (s / "f").c_str(), (s / "near.tsv").c_str()) == NR_OK);
  const std::string near_file = s / "near.tsv";
  const char* names[] = {"near"};
  const char* files[] = {near_file.c_str()};
  nr_report* ev = nullptr;
  REQUIRE(nr_stage_eval((s / "id.tsv").c_str(), names, files, 1, 0.95, 0, nullptr, &ev) == NR_OK);
  CHECK(nr_report_dataset_auroc(ev, 0) > 0.9);
  CHECK(nr_report_dataset_fpr(ev, 0) >= 0.0);
  nr_report_destroy(ev);

  const char* cells[] = {"on/on"};
  nr_ablation* t = nullptr;
  REQUIRE(nr_ablate(cfg, "components", cells, 1, 0, &t) == NR_OK);
  CHECK(nr_ablation_rows(t) == 1);
  CHECK(std::string(nr_ablation_value(t, 0)) == "on/on");
  CHECK(std::string(nr_ablation_text(t)).find("on/on\t") != std::string::npos);
  CHECK(nr_ablation_avg_fpr(t, 0) >= 0.0);
  nr_ablation_destroy(t);
  CHECK(nr_ablate(cfg, "gamma", nullptr, 0, 0, &t) == NR_INVALID_ARGUMENT);

  nr_config_destroy(cfg);
}
