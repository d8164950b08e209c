#include "negrefine/pipeline.hpp"

#include <fstream>
#include <sstream>

#include "negrefine/digest.hpp"
#include "negrefine/error.hpp"
#include "negrefine/negfilter.hpp"
#include "negrefine/negmine.hpp"

namespace negrefine {

namespace fs = std::filesystem;

namespace {

RetryPolicy retry_policy(const RunConfig& c) {
  RetryPolicy r;
  r.attempts = static_cast<int>(parse_u64(c.get("providers", "retry_attempts"), "retry_attempts"));
  r.base_delay = std::chrono::milliseconds(
      parse_u64(c.get("providers", "retry_base_ms"), "retry_base_ms"));
  return r;
}

std::shared_ptr<QueryCache> open_cache(const RunConfig& c, const std::string& name) {
  const auto& dir = c.get("providers", "cache_dir");
  if (dir.empty()) return std::make_shared<QueryCache>();
  return std::make_shared<QueryCache>(fs::path(dir) / name);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io_failure, "cannot write " + p.string());
  out << text;
  if (!out) fail(ErrorCode::io_failure, "short write to " + p.string());
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::shared_ptr<TextEmbedder> make_embedder(const RunConfig& c) {
  const auto& kind = c.get("providers", "embedder");
  const auto seed = parse_u64(c.get("providers", "embed_seed"), "embed_seed");
  if (kind == "synthetic") {
    return std::make_shared<SyntheticEmbedder>(
        parse_u64(c.get("providers", "embed_dim"), "embed_dim"), seed);
  }
  if (kind == "lookup") {
    const auto& vocab = c.get("providers", "vocab");
    if (vocab.empty()) fail(ErrorCode::invalid_argument, "lookup embedder needs providers.vocab");
    return std::make_shared<LookupEmbedder>(load_archive(vocab), seed,
                                            parse_bool(c.get("providers", "compose")));
  }
  if (kind == "remote") {
    const auto& ep = c.get("providers", "embed_endpoint");
    if (ep.empty()) {
      fail(ErrorCode::invalid_argument,
           "remote embedder needs providers.embed_endpoint or NEGREFINE_EMBED_ENDPOINT");
    }
    return std::make_shared<RemoteEmbedder>(
        ep, open_cache(c, "embed.jsonl"), retry_policy(c),
        parse_u64(c.get("providers", "max_in_flight"), "max_in_flight"));
  }
  fail(ErrorCode::invalid_argument, "unknown embedder '" + kind + "'");
}

std::shared_ptr<YesNoOracle> make_oracle(const RunConfig& c) {
  const auto& kind = c.get("providers", "oracle");
  if (kind == "scripted") {
    const auto& script = c.get("providers", "oracle_script");
    if (script.empty()) return std::make_shared<ScriptedOracle>();
    return ScriptedOracle::from_file(script);
  }
  if (kind == "remote") {
    const auto& ep = c.get("providers", "llm_endpoint");
    if (ep.empty()) {
      fail(ErrorCode::invalid_argument,
           "remote oracle needs providers.llm_endpoint or NEGREFINE_LLM_ENDPOINT");
    }
    const char* token = std::getenv("NEGREFINE_LLM_TOKEN");
    return std::make_shared<ChatOracle>(
        ep, c.get("providers", "llm_model"), open_cache(c, "llm.jsonl"), retry_policy(c),
        parse_u64(c.get("providers", "max_in_flight"), "max_in_flight"), token ? token : "");
  }
  fail(ErrorCode::invalid_argument, "unknown oracle '" + kind + "'");
}

Providers make_providers(const RunConfig& c) {
  Providers p;
  p.embedder = std::make_shared<MemoizingEmbedder>(make_embedder(c));
  return p;
}

// ---------------------------------------------------------------------------
// Stages

MineSummary mine_stage(const RunConfig& config, const fs::path& lexicon, const fs::path& id_labels,
                       const fs::path& out_dir, TextEmbedder& embedder) {
  const auto mining = config.mining();
  mining.validate();
  const std::string prompt = config.prompt_template();

  LabelPool id_pool(prompt);
  for (const auto& w : read_word_list(id_labels)) id_pool.add(w, Provenance::id);
  if (id_pool.empty()) fail(ErrorCode::empty_input, "no in-distribution labels in " + id_labels.string());

  LabelPool candidates(prompt);
  for (const auto& w : read_word_list(lexicon)) {
    if (!id_pool.contains(w)) candidates.add(w, Provenance::noun_neg);
  }
  if (const auto& adj = config.get("inputs", "adjectives"); !adj.empty()) {
    auto adjectives = read_word_list(adj);
    if (!adjectives.empty()) {
      auto conj = conjugate_pool(adjectives, mining.superclass_terms, mining.rng_seed);
      for (std::size_t i = 0; i < conj.size(); ++i) {
        if (!id_pool.contains(conj.labels()[i])) candidates.add(conj.labels()[i], Provenance::conjugate_neg);
      }
    }
  }
  if (candidates.empty()) fail(ErrorCode::empty_pool, "candidate pool is empty");

  EmbeddingArchive id_text;
  id_text.vectors = embedder.embed_batch(id_pool.prompts());
  id_text.ids = id_pool.labels();
  id_text.model_tag = embedder.model_tag();

  EmbeddingArchive cand_text;
  cand_text.vectors = embedder.embed_batch(candidates.prompts());
  cand_text.ids = candidates.labels();
  cand_text.model_tag = embedder.model_tag();

  auto scores = candidate_similarity(cand_text, id_text, mining.aggregator);
  auto keep = select_negative_indices(scores, mining.p_percent);

  save_archive(id_text, out_dir / "id_text");
  save_archive(cand_text.select(keep), out_dir / "neg_text");

  std::ostringstream tsv;
  tsv << "label\tprovenance\tscore\tselected\n";
  std::size_t next = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const bool sel = next < keep.size() && keep[next] == i;
    if (sel) ++next;
    tsv << candidates.labels()[i] << '\t' << to_string(candidates.provenance()[i]) << '\t'
        << real(scores[i]) << '\t' << (sel ? 1 : 0) << '\n';
  }
  write_text(out_dir / "candidates.tsv", tsv.str());
  return {candidates.size(), keep.size()};
}

FilterSummary filter_stage(const RunConfig& config, const fs::path& neg_dir, const fs::path& id_dir,
                           const fs::path& journal_path, const fs::path& out_dir,
                           YesNoOracle& oracle) {
  auto neg = load_archive(neg_dir);
  auto id = load_archive(id_dir);
  LabelPool pool(config.prompt_template());
  for (const auto& w : neg.ids) pool.add(w, Provenance::noun_neg);
  if (pool.size() != neg.rows()) {
    fail(ErrorCode::duplicate_id, "negative archive ids collide after normalization");
  }

  std::unique_ptr<DecisionJournal> journal;
  if (!journal_path.empty()) journal = std::make_unique<DecisionJournal>(journal_path);
  auto result = neg_filter(pool, neg.vectors, id, oracle, config.filter(), journal.get());

  FilterSummary s;
  s.input = neg.rows();
  std::vector<std::size_t> keep;
  std::ostringstream decisions;
  for (std::size_t i = 0; i < result.decisions.size(); ++i) {
    const auto& d = result.decisions[i];
    if (d.kept()) keep.push_back(i);
    switch (d.outcome) {
      case FilterOutcome::removed_proper_noun: ++s.proper_nouns; break;
      case FilterOutcome::removed_subcategory: ++s.subcategories; break;
      case FilterOutcome::kept_unparseable:
      case FilterOutcome::dropped_unparseable: ++s.unparseable; break;
      case FilterOutcome::kept: break;
    }
    decisions << DecisionJournal::format_line(d) << '\n';
  }
  s.kept = keep.size();
  save_archive(neg.select(keep), out_dir);
  write_text(out_dir / "decisions.tsv", decisions.str());
  return s;
}

ScoreStats score_stage(const RunConfig& config, const fs::path& images_dir, const fs::path& id_dir,
                       const fs::path& neg_dir, const fs::path& out_file, TextEmbedder& embedder) {
  const auto sc = config.scoring();
  auto images = load_archive(images_dir);
  auto id = load_archive(id_dir);
  auto neg = load_archive(neg_dir);
  ScoreStats stats;
  auto records = score_dataset(images, id, neg, embedder, sc, &stats);
  const auto digest = scoring_digest(sc, archive_content_digest(id_dir),
                                     archive_content_digest(neg_dir), embedder.model_tag());
  write_score_file(out_file, digest, sc, records);
  return stats;
}

MetricsReport eval_stage(const fs::path& id_scores, std::span<const OodScoreSource> ood_scores,
                         double tpr_target, bool allow_partial, const fs::path& out_file) {
  auto rep = metrics_report(id_scores, ood_scores, tpr_target, allow_partial);
  if (!out_file.empty()) {
    if (out_file.has_parent_path()) fs::create_directories(out_file.parent_path());
    write_text(out_file, rep.to_text());
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Orchestration

namespace {

template <typename Body>
StageStatus run_stage(const fs::path& root, const std::string& name, const std::string& digest,
                      bool force, Body&& body) {
  StageStatus st{name, digest, false, root / (name + "-" + digest.substr(0, 12))};
  const fs::path done = st.dir / "DONE";
  if (fs::exists(done)) {
    const std::string recorded = read_text(done);
    if (recorded == digest && !force) {
      st.skipped = true;
      return st;
    }
    if (recorded != digest && !force) {
      fail(ErrorCode::config_digest_mismatch,
           "stage " + name + ": " + st.dir.string() +
               " holds output for a different digest; rerun with --force to overwrite");
    }
  }
  std::error_code ec;
  fs::remove_all(st.dir, ec);
  fs::create_directories(st.dir, ec);
  if (ec) fail(ErrorCode::io_failure, "cannot create " + st.dir.string() + ": " + ec.message());
  try {
    body(st.dir);
  } catch (const Error& e) {
    throw Error(e.code(), "stage " + name + ": " + e.what());
  }
  write_text(done, digest);
  return st;
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& config, const PipelineOptions& options,
                            Providers* shared) {
  config.validate();
  const auto& lexicon = config.get("inputs", "lexicon");
  const auto& id_labels = config.get("inputs", "id_labels");
  const auto& id_images = config.get("inputs", "id_images");
  const auto oods = config.ood_images();
  if (lexicon.empty() || id_labels.empty() || id_images.empty() || oods.empty()) {
    fail(ErrorCode::invalid_argument,
         "run needs inputs.lexicon, inputs.id_labels, inputs.id_images and inputs.ood_images");
  }
  for (const auto& p : {fs::path(lexicon), fs::path(id_labels), fs::path(id_images)}) {
    if (!fs::exists(p)) fail(ErrorCode::invalid_argument, "input does not exist: " + p.string());
  }
  for (const auto& [name, p] : oods) {
    if (!fs::exists(p)) fail(ErrorCode::invalid_argument, "input does not exist: " + p.string());
  }

  Providers local;
  Providers& prov = shared ? *shared : local;
  if (!prov.embedder) prov.embedder = make_providers(config).embedder;

  const fs::path root = config.out_dir();
  PipelineResult result;

  const std::string mine_digest = sha256_hex(
      "mine\n" + config.canonical_subset({"run.seed", "inputs.lexicon", "inputs.adjectives",
                                          "inputs.superclasses", "inputs.id_labels",
                                          "providers.embedder", "providers.embed_dim",
                                          "providers.embed_seed", "providers.vocab",
                                          "providers.compose", "providers.prompt_template",
                                          "negmine.*"}));
  auto mine = run_stage(root, "mine", mine_digest, options.force, [&](const fs::path& dir) {
    mine_stage(config, lexicon, id_labels, dir, *prov.embedder);
  });
  result.stages.push_back(mine);
  const fs::path id_text = mine.dir / "id_text";

  const bool filtering = config.filter_enabled();
  const std::string filter_digest = sha256_hex(
      "filter\n" + mine_digest + "\n" +
      config.canonical_subset(filtering ? std::vector<std::string>{"negfilter.*", "providers.oracle",
                                                                   "providers.oracle_script",
                                                                   "providers.llm_model"}
                                        : std::vector<std::string>{"negfilter.enabled"}));
  auto filter = run_stage(root, "filter", filter_digest, options.force, [&](const fs::path& dir) {
    if (!filtering) {
      save_archive(load_archive(mine.dir / "neg_text"), dir / "neg_text");
      return;
    }
    if (!prov.oracle) prov.oracle = make_oracle(config);
    // The journal sits beside the stage directory so an aborted run resumes
    // from it even though the stage directory itself is rebuilt.
    filter_stage(config, mine.dir / "neg_text", id_text,
                 root / ("filter-" + filter_digest.substr(0, 12) + ".journal"), dir / "neg_text",
                 *prov.oracle);
  });
  result.stages.push_back(filter);
  const fs::path neg_text = filter.dir / "neg_text";

  const std::string score_digest = sha256_hex(
      "score\n" + filter_digest + "\n" +
      config.canonical_subset({"scoring.*", "inputs.id_images", "inputs.ood_images"}));
  auto score = run_stage(root, "score", score_digest, options.force, [&](const fs::path& dir) {
    score_stage(config, id_images, id_text, neg_text, dir / "scores-id.tsv", *prov.embedder);
    for (const auto& [name, path] : oods) {
      score_stage(config, path, id_text, neg_text, dir / ("scores-" + name + ".tsv"),
                  *prov.embedder);
    }
  });
  result.stages.push_back(score);

  const std::string run_digest = config.digest();
  const std::string eval_digest =
      sha256_hex("eval\n" + score_digest + "\n" + run_digest + "\n" + config.canonical_subset({"eval.*"}));
  auto eval = run_stage(root, "eval", eval_digest, options.force, [&](const fs::path& dir) {
    std::vector<OodScoreSource> sources;
    for (const auto& [name, path] : oods) sources.push_back({name, score.dir / ("scores-" + name + ".tsv")});
    auto rep = metrics_report(score.dir / "scores-id.tsv", sources, config.tpr_target(),
                              config.allow_partial());
    rep.config_digest = run_digest;
    write_text(dir / "report.txt", rep.to_text());
  });
  result.stages.push_back(eval);

  result.report_path = eval.dir / "report.txt";
  result.report_text = read_text(result.report_path);
  result.report = MetricsReport::from_text(result.report_text);
  return result;
}

std::string AblationTable::to_text() const {
  std::ostringstream s;
  s << "# negrefine ablation dimension=" << dimension << "\n";
  s << "value\tauroc\tfpr95\tconfig_digest\n";
  for (const auto& r : rows) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f\t%.2f", 100.0 * r.report.avg_auroc, 100.0 * r.report.avg_fpr);
    s << r.value << '\t' << buf << '\t' << r.config_digest << '\n';
  }
  return s.str();
}

AblationTable ablate(const RunConfig& config, const std::string& dimension,
                     std::vector<std::string> values, const PipelineOptions& options) {
  std::string section;
  std::string key;
  if (dimension == "alpha") {
    section = "scoring", key = "alpha";
  } else if (dimension == "k") {
    section = "scoring", key = "k";
  } else if (dimension == "p") {
    section = "negmine", key = "p_percent";
  } else if (dimension == "variant") {
    section = "scoring", key = "variant";
  } else if (dimension != "components") {
    fail(ErrorCode::invalid_argument,
         "ablation dimension must be alpha, k, p, variant or components");
  }
  if (dimension == "components" && values.empty()) {
    values = {"off/off", "off/on", "on/off", "on/on"};
  }
  if (values.empty()) fail(ErrorCode::invalid_argument, "ablation needs at least one value");

  AblationTable table;
  table.dimension = dimension;
  Providers shared = make_providers(config);
  for (const auto& v : values) {
    RunConfig c = config;
    if (dimension == "components") {
      const auto slash = v.find('/');
      const std::string mm = slash == std::string::npos ? "" : v.substr(0, slash);
      const std::string nf = slash == std::string::npos ? "" : v.substr(slash + 1);
      if ((mm != "on" && mm != "off") || (nf != "on" && nf != "off")) {
        fail(ErrorCode::invalid_argument, "components value must be <mm>/<filter> with on|off, got '" + v + "'");
      }
      c.set("scoring", "use_mm", mm == "on" ? "true" : "false");
      c.set("negfilter", "enabled", nf == "on" ? "true" : "false");
    } else {
      c.set(section, key, v);
    }
    auto res = run_pipeline(c, options, &shared);
    table.rows.push_back({v, c.digest(), res.report});
  }
  return table;
}

}  // namespace negrefine
