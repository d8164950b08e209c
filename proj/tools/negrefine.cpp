// negrefine command line. Talks to the engine only through the C interface.
#include <CLI11.hpp>

#include <cstdio>
#include <deque>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "negrefine/negrefine.h"

namespace {

constexpr int kValidation = 2;

struct Failure {
  nr_status status;
};

void check(nr_status s) {
  if (s != NR_OK) throw Failure{s};
}

struct ConfigHandle {
  nr_config* p = nullptr;
  ~ConfigHandle() { nr_config_destroy(p); }
};

// Flags shared by every subcommand.
struct Common {
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "configuration file")->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "override, section.key=value (repeatable)");
}

void open_config(const Common& c, ConfigHandle& h) {
  check(c.config.empty() ? nr_config_create(&h.p) : nr_config_load(c.config.c_str(), &h.p));
  for (const auto& s : c.sets) {
    auto dot = s.find('.');
    auto eq = s.find('=');
    if (dot == std::string::npos || eq == std::string::npos || dot > eq) {
      std::fprintf(stderr, "error: --set expects section.key=value, got '%s'\n", s.c_str());
      throw Failure{NR_INVALID_ARGUMENT};
    }
    check(nr_config_set(h.p, s.substr(0, dot).c_str(), s.substr(dot + 1, eq - dot - 1).c_str(),
                        s.substr(eq + 1).c_str()));
  }
}

// Flag bound to one config key; applied only when given on the command line.
struct Override {
  const char* section;
  const char* key;
  std::string value;
  CLI::Option* opt = nullptr;
};

void apply_overrides(ConfigHandle& h, const std::deque<Override>& list) {
  for (const auto& o : list) {
    if (o.opt && o.opt->count() > 0) check(nr_config_set(h.p, o.section, o.key, o.value.c_str()));
  }
}

std::string get(const ConfigHandle& h, const char* section, const char* key) {
  std::size_t need = 0;
  check(nr_config_get(h.p, section, key, nullptr, 0, &need));
  std::string v(need + 1, '\0');
  check(nr_config_get(h.p, section, key, v.data(), v.size(), &need));
  v.resize(need);
  return v;
}

double to_double(const std::string& s) { return std::stod(s); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"negrefine: negative-label OOD detection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(nr_version()));

  Common common;
  // Deques keep the bound option values at stable addresses.
  std::deque<Override> mine_o, filter_o, score_o, eval_o, run_o;
  auto flag = [](CLI::App* sub, std::deque<Override>& list, const std::string& name,
                 const char* section, const char* key, const std::string& help) {
    list.push_back({section, key, {}, nullptr});
    list.back().opt = sub->add_option(name, list.back().value, help);
  };

  auto* mine = app.add_subcommand("mine", "select negative labels from a lexicon");
  add_common(mine, common);
  std::string mine_out;
  flag(mine, mine_o, "--lexicon", "inputs", "lexicon", "lexicon word list");
  flag(mine, mine_o, "--id-labels", "inputs", "id_labels", "in-distribution label list");
  flag(mine, mine_o, "--p", "negmine", "p_percent", "percentage of candidates kept");
  flag(mine, mine_o, "--aggregator", "negmine", "aggregator", "max or quantile:Q");
  flag(mine, mine_o, "--seed", "run", "seed", "seed for conjugate labels");
  mine->add_option("--out", mine_out, "output directory")->required();

  auto* filter = app.add_subcommand("filter", "remove proper nouns and subcategories");
  add_common(filter, common);
  std::string f_neg, f_id, f_journal, f_out;
  filter->add_option("--neg", f_neg, "negative label archive")->required();
  filter->add_option("--id", f_id, "in-distribution label archive")->required();
  flag(filter, filter_o, "--n", "negfilter", "n", "in-distribution labels checked per word");
  flag(filter, filter_o, "--llm-endpoint", "providers", "llm_endpoint", "chat completions base URL");
  filter->add_option("--journal", f_journal, "decision journal (resumable)");
  filter->add_option("--out", f_out, "output archive directory")->required();

  auto* score = app.add_subcommand("score", "score images");
  add_common(score, common);
  std::string s_images, s_id, s_neg, s_out;
  score->add_option("--images", s_images, "image embedding archive")->required();
  score->add_option("--id", s_id, "in-distribution label archive")->required();
  score->add_option("--neg", s_neg, "negative label archive")->required();
  flag(score, score_o, "--k", "scoring", "k", "top labels per side");
  flag(score, score_o, "--alpha", "scoring", "alpha", "weight of the multi-matching score");
  flag(score, score_o, "--tau", "scoring", "tau", "temperature");
  flag(score, score_o, "--variant", "scoring", "variant", "multi-matching variant");
  score->add_option("--out", s_out, "score file")->required();

  auto* eval = app.add_subcommand("eval", "compute AUROC and FPR at the target TPR");
  add_common(eval, common);
  std::string e_id, e_out;
  std::vector<std::string> e_ood;
  eval->add_option("--id-scores", e_id, "in-distribution score file")->required();
  eval->add_option("--ood", e_ood, "name=score_file (repeatable)")->required();
  flag(eval, eval_o, "--tpr", "eval", "tpr_target", "target true positive rate");
  bool e_partial = false;
  eval->add_flag("--allow-partial", e_partial, "exclude failed images instead of refusing");
  eval->add_option("--out", e_out, "report file");

  auto* run = app.add_subcommand("run", "mine, filter, score and evaluate");
  add_common(run, common);
  bool run_force = false;
  run->add_flag("--force", run_force, "recompute stages even when outputs exist");
  flag(run, run_o, "--out", "run", "out_dir", "run directory");

  auto* abl = app.add_subcommand("ablate", "rerun the pipeline over one varied setting");
  add_common(abl, common);
  std::string a_dim = "components", a_out;
  std::vector<std::string> a_values;
  bool a_force = false;
  abl->add_option("--dimension", a_dim, "alpha, k, p, variant or components");
  abl->add_option("--values", a_values, "values to try; components default to all four cells");
  abl->add_flag("--force", a_force, "recompute stages even when outputs exist");
  abl->add_option("--out", a_out, "table file");

  auto* fix = app.add_subcommand("fixture", "write the bundled synthetic dataset");
  std::string x_out;
  std::uint64_t x_seed = 3;
  fix->add_option("--out", x_out, "directory")->required();
  fix->add_option("--seed", x_seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kValidation;
  }

  try {
    ConfigHandle cfg;
    if (*fix) {
      check(nr_fixture_write(x_out.c_str(), x_seed));
      std::printf("wrote %s/config.ini\n", x_out.c_str());
      return 0;
    }
    open_config(common, cfg);

    if (*mine) {
      apply_overrides(cfg, mine_o);
      check(nr_config_validate(cfg.p));
      check(nr_stage_mine(cfg.p, get(cfg, "inputs", "lexicon").c_str(),
                          get(cfg, "inputs", "id_labels").c_str(), mine_out.c_str()));
      std::printf("wrote %s/id_text %s/neg_text %s/candidates.tsv\n", mine_out.c_str(),
                  mine_out.c_str(), mine_out.c_str());
    } else if (*filter) {
      apply_overrides(cfg, filter_o);
      check(nr_config_validate(cfg.p));
      check(nr_stage_filter(cfg.p, f_neg.c_str(), f_id.c_str(), f_journal.c_str(), f_out.c_str()));
      std::printf("wrote %s\n", f_out.c_str());
    } else if (*score) {
      apply_overrides(cfg, score_o);
      check(nr_config_validate(cfg.p));
      check(nr_stage_score(cfg.p, s_images.c_str(), s_id.c_str(), s_neg.c_str(), s_out.c_str()));
      std::printf("wrote %s\n", s_out.c_str());
    } else if (*eval) {
      apply_overrides(cfg, eval_o);
      check(nr_config_validate(cfg.p));
      std::vector<std::string> names, files;
      for (const auto& o : e_ood) {
        auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0) {
          std::fprintf(stderr, "error: --ood expects name=file, got '%s'\n", o.c_str());
          return kValidation;
        }
        names.push_back(o.substr(0, eq));
        files.push_back(o.substr(eq + 1));
      }
      std::vector<const char*> np, fp;
      for (std::size_t i = 0; i < names.size(); ++i) {
        np.push_back(names[i].c_str());
        fp.push_back(files[i].c_str());
      }
      const bool partial = e_partial || get(cfg, "eval", "allow_partial") == "true";
      nr_report* rep = nullptr;
      check(nr_stage_eval(e_id.c_str(), np.data(), fp.data(), np.size(),
                          to_double(get(cfg, "eval", "tpr_target")), partial ? 1 : 0,
                          e_out.c_str(), &rep));
      std::fputs(nr_report_text(rep), stdout);
      nr_report_destroy(rep);
    } else if (*run) {
      apply_overrides(cfg, run_o);
      nr_report* rep = nullptr;
      check(nr_run_pipeline(cfg.p, run_force ? 1 : 0, &rep));
      std::fputs(nr_report_text(rep), stdout);
      std::fprintf(stderr, "report: %s (%zu of 4 stages reused)\n", nr_report_path(rep),
                   nr_report_skipped_stages(rep));
      nr_report_destroy(rep);
    } else if (*abl) {
      std::vector<const char*> vp;
      for (const auto& v : a_values) vp.push_back(v.c_str());
      nr_ablation* t = nullptr;
      check(nr_ablate(cfg.p, a_dim.c_str(), vp.data(), vp.size(), a_force ? 1 : 0, &t));
      const std::string text = nr_ablation_text(t);
      nr_ablation_destroy(t);
      std::fputs(text.c_str(), stdout);
      if (!a_out.empty()) {
        std::ofstream out(a_out, std::ios::trunc);
        out << text;
        if (!out) {
          std::fprintf(stderr, "error: cannot write %s\n", a_out.c_str());
          return kValidation;
        }
      }
    }
  } catch (const Failure& f) {
    std::fprintf(stderr, "error [%s]: %s\n", nr_status_string(f.status), nr_last_error());
    return nr_status_exit_code(f.status);
  }
  return 0;
}
