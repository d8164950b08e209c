#include "negrefine/negrefine.h"

#include <cstring>
#include <string>
#include <vector>

#include "negrefine/config.hpp"
#include "negrefine/embedding_store.hpp"
#include "negrefine/error.hpp"
#include "negrefine/eval.hpp"
#include "negrefine/fixture.hpp"
#include "negrefine/pipeline.hpp"
#include "negrefine/scoring.hpp"

struct nr_config {
  negrefine::RunConfig cfg;
  std::string digest;
  std::string text;
};

struct nr_archive {
  negrefine::EmbeddingArchive a;
};

struct nr_report {
  negrefine::MetricsReport report;
  std::string text;
  std::string path;
  std::size_t skipped = 0;
};

struct nr_ablation {
  negrefine::AblationTable table;
  std::string text;
};

namespace {

thread_local std::string g_last_error;

nr_status to_status(negrefine::ErrorCode c) { return static_cast<nr_status>(static_cast<int>(c) + 1); }

template <typename F>
nr_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return NR_OK;
  } catch (const negrefine::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown failure";
  }
  return NR_INTERNAL;
}

void need(const void* p, const char* what) {
  if (!p) negrefine::fail(negrefine::ErrorCode::invalid_argument, std::string(what) + " is null");
}

std::string str(const char* s) { return s ? s : ""; }

}  // namespace

extern "C" {

const char* nr_version(void) { return "1.0.0"; }

const char* nr_last_error(void) { return g_last_error.c_str(); }

const char* nr_status_string(nr_status s) {
  if (s == NR_OK) return "ok";
  if (s == NR_INTERNAL) return "internal";
  if (s > NR_OK && s < NR_INTERNAL) {
    return negrefine::to_string(static_cast<negrefine::ErrorCode>(static_cast<int>(s) - 1));
  }
  return "unknown";
}

int nr_status_exit_code(nr_status s) {
  switch (s) {
    case NR_OK: return 0;
    case NR_TRANSPORT:
    case NR_PROTOCOL_VIOLATION:
    case NR_UNPARSEABLE: return 3;
    default: return 2;
  }
}

nr_status nr_config_create(nr_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new nr_config{};
  });
}

nr_status nr_config_load(const char* path, nr_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto cfg = negrefine::RunConfig::load(path);
    *out = new nr_config{std::move(cfg), {}, {}};
  });
}

nr_status nr_config_set(nr_config* cfg, const char* section, const char* key, const char* value) {
  return guarded([&] {
    need(cfg, "config");
    need(section, "section");
    need(key, "key");
    cfg->cfg.set(section, key, str(value));
  });
}

nr_status nr_config_get(const nr_config* cfg, const char* section, const char* key, char* buf,
                        size_t buf_len, size_t* needed) {
  return guarded([&] {
    need(cfg, "config");
    need(section, "section");
    need(key, "key");
    const auto& v = cfg->cfg.get(section, key);
    if (needed) *needed = v.size();
    if (buf && buf_len > 0) {
      const std::size_t n = std::min(buf_len - 1, v.size());
      std::memcpy(buf, v.data(), n);
      buf[n] = '\0';
    }
  });
}

const char* nr_config_digest(nr_config* cfg) {
  if (!cfg) return "";
  nr_status s = guarded([&] { cfg->digest = cfg->cfg.digest(); });
  return s == NR_OK ? cfg->digest.c_str() : "";
}

const char* nr_config_text(nr_config* cfg) {
  if (!cfg) return "";
  cfg->text = cfg->cfg.to_text();
  return cfg->text.c_str();
}

nr_status nr_config_validate(const nr_config* cfg) {
  return guarded([&] {
    need(cfg, "config");
    cfg->cfg.validate();
  });
}

void nr_config_destroy(nr_config* cfg) { delete cfg; }

nr_status nr_archive_create(size_t rows, size_t dim, const float* data, const char* const* ids,
                            int kind, const char* model_tag, nr_archive** out) {
  return guarded([&] {
    need(out, "out");
    if (rows > 0) {
      need(data, "data");
      need(ids, "ids");
    }
    negrefine::EmbeddingArchive a;
    a.vectors = negrefine::Matrix(rows, dim);
    if (rows > 0) std::memcpy(a.vectors.data.data(), data, rows * dim * sizeof(float));
    for (size_t i = 0; i < rows; ++i) a.ids.push_back(str(ids[i]));
    a.kind = kind == 1 ? negrefine::EmbeddingKind::image : negrefine::EmbeddingKind::text;
    a.model_tag = str(model_tag);
    a.validate(false);
    negrefine::normalize_rows(a.vectors);
    *out = new nr_archive{std::move(a)};
  });
}

nr_status nr_archive_load(const char* dir, nr_archive** out) {
  return guarded([&] {
    need(dir, "dir");
    need(out, "out");
    *out = new nr_archive{negrefine::load_archive(dir)};
  });
}

nr_status nr_archive_save(const nr_archive* a, const char* dir) {
  return guarded([&] {
    need(a, "archive");
    need(dir, "dir");
    negrefine::save_archive(a->a, dir);
  });
}

size_t nr_archive_rows(const nr_archive* a) { return a ? a->a.rows() : 0; }
size_t nr_archive_dim(const nr_archive* a) { return a ? a->a.dim() : 0; }

const char* nr_archive_id(const nr_archive* a, size_t row) {
  return a && row < a->a.rows() ? a->a.ids[row].c_str() : nullptr;
}

const float* nr_archive_row(const nr_archive* a, size_t row) {
  return a && row < a->a.rows() ? a->a.row(row).data() : nullptr;
}

void nr_archive_destroy(nr_archive* a) { delete a; }

nr_status nr_similarity(const nr_archive* a, const nr_archive* b, double* out) {
  return guarded([&] {
    need(a, "a");
    need(b, "b");
    need(out, "out");
    auto s = negrefine::similarity(a->a, b->a);
    std::copy(s.values.begin(), s.values.end(), out);
  });
}

nr_status nr_s_neglabel(const double* sim_in, size_t n_in, const double* sim_neg, size_t n_neg,
                        double tau, double* out) {
  return guarded([&] {
    need(out, "out");
    if (n_in) need(sim_in, "sim_in");
    if (n_neg) need(sim_neg, "sim_neg");
    *out = negrefine::s_neglabel({sim_in, n_in}, {sim_neg, n_neg}, tau);
  });
}

double nr_mm_kernel(double s_t, double s_n, double tau) { return negrefine::mm_kernel(s_t, s_n, tau); }

double nr_final_score(double s_neglabel, double s_mm, double alpha) {
  return negrefine::final_score(s_neglabel, s_mm, alpha);
}

nr_status nr_auroc(const double* id, size_t n, const double* ood, size_t m, double* out) {
  return guarded([&] {
    need(out, "out");
    if (n) need(id, "id");
    if (m) need(ood, "ood");
    *out = negrefine::auroc({id, n}, {ood, m});
  });
}

nr_status nr_fpr_at_tpr(const double* id, size_t n, const double* ood, size_t m, double tpr_target,
                        double* gamma, double* fpr) {
  return guarded([&] {
    if (n) need(id, "id");
    if (m) need(ood, "ood");
    auto r = negrefine::fpr_at_tpr({id, n}, {ood, m}, tpr_target);
    if (gamma) *gamma = r.gamma;
    if (fpr) *fpr = r.fpr;
  });
}

int nr_detect(double score, double gamma) {
  return negrefine::detect(score, gamma) == negrefine::Detection::in_distribution ? 1 : 0;
}

nr_status nr_stage_mine(const nr_config* cfg, const char* lexicon, const char* id_labels,
                        const char* out_dir) {
  return guarded([&] {
    need(cfg, "config");
    need(lexicon, "lexicon");
    need(id_labels, "id_labels");
    need(out_dir, "out_dir");
    auto prov = negrefine::make_providers(cfg->cfg);
    negrefine::mine_stage(cfg->cfg, lexicon, id_labels, out_dir, *prov.embedder);
  });
}

nr_status nr_stage_filter(const nr_config* cfg, const char* neg_dir, const char* id_dir,
                          const char* journal, const char* out_dir) {
  return guarded([&] {
    need(cfg, "config");
    need(neg_dir, "neg_dir");
    need(id_dir, "id_dir");
    need(out_dir, "out_dir");
    auto oracle = negrefine::make_oracle(cfg->cfg);
    negrefine::filter_stage(cfg->cfg, neg_dir, id_dir, str(journal), out_dir, *oracle);
  });
}

nr_status nr_stage_score(const nr_config* cfg, const char* images, const char* id_dir,
                         const char* neg_dir, const char* out_file) {
  return guarded([&] {
    need(cfg, "config");
    need(images, "images");
    need(id_dir, "id_dir");
    need(neg_dir, "neg_dir");
    need(out_file, "out_file");
    auto prov = negrefine::make_providers(cfg->cfg);
    negrefine::score_stage(cfg->cfg, images, id_dir, neg_dir, out_file, *prov.embedder);
  });
}

nr_status nr_stage_eval(const char* id_scores, const char* const* ood_names,
                        const char* const* ood_files, size_t n_ood, double tpr_target,
                        int allow_partial, const char* out_file, nr_report** out) {
  return guarded([&] {
    need(id_scores, "id_scores");
    if (n_ood) {
      need(ood_names, "ood_names");
      need(ood_files, "ood_files");
    }
    std::vector<negrefine::OodScoreSource> sources;
    for (size_t i = 0; i < n_ood; ++i) sources.push_back({str(ood_names[i]), str(ood_files[i])});
    auto rep = negrefine::eval_stage(id_scores, sources, tpr_target, allow_partial != 0, str(out_file));
    if (out) {
      auto* r = new nr_report{};
      r->text = rep.to_text();
      r->path = str(out_file);
      r->report = std::move(rep);
      *out = r;
    }
  });
}

nr_status nr_run_pipeline(const nr_config* cfg, int force, nr_report** out) {
  return guarded([&] {
    need(cfg, "config");
    negrefine::PipelineOptions opts;
    opts.force = force != 0;
    auto res = negrefine::run_pipeline(cfg->cfg, opts);
    if (out) {
      auto* r = new nr_report{};
      r->report = std::move(res.report);
      r->text = std::move(res.report_text);
      r->path = res.report_path.string();
      for (const auto& s : res.stages) r->skipped += s.skipped ? 1 : 0;
      *out = r;
    }
  });
}

const char* nr_report_text(const nr_report* r) { return r ? r->text.c_str() : ""; }
const char* nr_report_path(const nr_report* r) { return r ? r->path.c_str() : ""; }
double nr_report_avg_auroc(const nr_report* r) { return r ? r->report.avg_auroc : 0.0; }
double nr_report_avg_fpr(const nr_report* r) { return r ? r->report.avg_fpr : 0.0; }
double nr_report_gamma(const nr_report* r) { return r ? r->report.gamma : 0.0; }
size_t nr_report_datasets(const nr_report* r) { return r ? r->report.datasets.size() : 0; }

const char* nr_report_dataset_name(const nr_report* r, size_t i) {
  return r && i < r->report.datasets.size() ? r->report.datasets[i].name.c_str() : nullptr;
}
double nr_report_dataset_auroc(const nr_report* r, size_t i) {
  return r && i < r->report.datasets.size() ? r->report.datasets[i].auroc : 0.0;
}
double nr_report_dataset_fpr(const nr_report* r, size_t i) {
  return r && i < r->report.datasets.size() ? r->report.datasets[i].fpr : 0.0;
}
size_t nr_report_skipped_stages(const nr_report* r) { return r ? r->skipped : 0; }
void nr_report_destroy(nr_report* r) { delete r; }

nr_status nr_ablate(const nr_config* cfg, const char* dimension, const char* const* values,
                    size_t n_values, int force, nr_ablation** out) {
  return guarded([&] {
    need(cfg, "config");
    need(dimension, "dimension");
    need(out, "out");
    if (n_values) need(values, "values");
    std::vector<std::string> vs;
    for (size_t i = 0; i < n_values; ++i) vs.push_back(str(values[i]));
    negrefine::PipelineOptions opts;
    opts.force = force != 0;
    auto t = negrefine::ablate(cfg->cfg, dimension, std::move(vs), opts);
    auto* a = new nr_ablation{};
    a->text = t.to_text();
    a->table = std::move(t);
    *out = a;
  });
}

const char* nr_ablation_text(const nr_ablation* t) { return t ? t->text.c_str() : ""; }
size_t nr_ablation_rows(const nr_ablation* t) { return t ? t->table.rows.size() : 0; }
const char* nr_ablation_value(const nr_ablation* t, size_t i) {
  return t && i < t->table.rows.size() ? t->table.rows[i].value.c_str() : nullptr;
}
double nr_ablation_avg_auroc(const nr_ablation* t, size_t i) {
  return t && i < t->table.rows.size() ? t->table.rows[i].report.avg_auroc : 0.0;
}
double nr_ablation_avg_fpr(const nr_ablation* t, size_t i) {
  return t && i < t->table.rows.size() ? t->table.rows[i].report.avg_fpr : 0.0;
}
void nr_ablation_destroy(nr_ablation* t) { delete t; }

nr_status nr_fixture_write(const char* dir, uint64_t seed) {
  return guarded([&] {
    need(dir, "dir");
    negrefine::FixtureOptions o;
    o.seed = seed;
    negrefine::write_fixture(dir, o);
  });
}

}  // extern "C"
