#include "negrefine/negfilter.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "negrefine/error.hpp"
#include "parallel.hpp"

namespace negrefine {

using json = nlohmann::json;

const char* to_string(FilterOutcome o) noexcept {
  switch (o) {
    case FilterOutcome::kept: return "kept";
    case FilterOutcome::removed_proper_noun: return "removed_proper_noun";
    case FilterOutcome::removed_subcategory: return "removed_subcategory";
    case FilterOutcome::kept_unparseable: return "kept_unparseable";
    case FilterOutcome::dropped_unparseable: return "dropped_unparseable";
  }
  return "kept";
}

FilterOutcome parse_filter_outcome(const std::string& text) {
  for (auto o : {FilterOutcome::kept, FilterOutcome::removed_proper_noun,
                 FilterOutcome::removed_subcategory, FilterOutcome::kept_unparseable,
                 FilterOutcome::dropped_unparseable}) {
    if (text == to_string(o)) return o;
  }
  fail(ErrorCode::invalid_argument, "unknown filter outcome '" + text + "'");
}

void FilterConfig::validate() const {
  if (n < 1) fail(ErrorCode::invalid_argument, "negfilter n must be >= 1");
  if (proper_noun_prompt.find("{w}") == std::string::npos) {
    fail(ErrorCode::invalid_argument, "proper-noun prompt lacks {w}");
  }
  if (subcategory_prompt.find("{w}") == std::string::npos ||
      subcategory_prompt.find("{l}") == std::string::npos) {
    fail(ErrorCode::invalid_argument, "subcategory prompt lacks {w} or {l}");
  }
}

namespace {

CheckResult run_check(YesNoOracle& oracle, const std::string& prompt) {
  auto answer = oracle.ask(prompt);
  CheckResult r;
  r.verdict = answer.verdict;
  for (auto& reply : answer.replies) r.transcripts.push_back({prompt, std::move(reply)});
  return r;
}

}  // namespace

CheckResult proper_noun_check(YesNoOracle& oracle, const std::string& word,
                              const FilterConfig& config) {
  if (word.empty()) fail(ErrorCode::invalid_argument, "empty word");
  return run_check(oracle, fill_template(config.proper_noun_prompt, "w", word));
}

CheckResult subcategory_check(YesNoOracle& oracle, const std::string& word,
                              const std::string& id_label, const FilterConfig& config) {
  if (word.empty() || id_label.empty()) fail(ErrorCode::invalid_argument, "empty word or label");
  return run_check(oracle, fill_template(fill_template(config.subcategory_prompt, "w", word), "l",
                                         id_label));
}

std::vector<std::size_t> top_n_id_labels(std::span<const float> word_vec,
                                         const EmbeddingArchive& id_text, std::size_t n) {
  if (n < 1) fail(ErrorCode::invalid_argument, "n must be >= 1");
  if (id_text.rows() == 0) fail(ErrorCode::empty_input, "no in-distribution labels");
  if (word_vec.size() != id_text.dim()) {
    fail(ErrorCode::dimension_mismatch, "word vector dim " + std::to_string(word_vec.size()) +
                                            " vs label dim " + std::to_string(id_text.dim()));
  }
  std::vector<double> sims(id_text.rows());
  for (std::size_t i = 0; i < sims.size(); ++i) sims[i] = dot(word_vec, id_text.row(i));
  std::vector<std::size_t> order(sims.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take = std::min(n, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return sims[a] != sims[b] ? sims[a] > sims[b] : a < b;
                    });
  order.resize(take);
  return order;
}

FilterDecision filter_word(YesNoOracle& oracle, const std::string& word,
                           std::span<const float> word_vec, const EmbeddingArchive& id_text,
                           const FilterConfig& config) {
  FilterDecision d;
  d.word = word;
  bool saw_unparseable = false;

  auto proper = proper_noun_check(oracle, word, config);
  d.transcripts = std::move(proper.transcripts);
  if (proper.verdict == Verdict::yes) {
    d.outcome = FilterOutcome::removed_proper_noun;
    return d;
  }
  if (proper.verdict == Verdict::unparseable) {
    if (config.unparseable_policy == UnparseablePolicy::drop) {
      d.outcome = FilterOutcome::dropped_unparseable;
      return d;
    }
    saw_unparseable = true;
  }

  for (auto idx : top_n_id_labels(word_vec, id_text, config.n)) {
    d.checked_id_labels.push_back(id_text.ids[idx]);
  }
  // Most similar label first, so a match tends to end the loop early.
  for (const auto& label : d.checked_id_labels) {
    auto sub = subcategory_check(oracle, word, label, config);
    d.transcripts.insert(d.transcripts.end(), sub.transcripts.begin(), sub.transcripts.end());
    if (sub.verdict == Verdict::yes) {
      d.outcome = FilterOutcome::removed_subcategory;
      d.supercategory = label;
      return d;
    }
    if (sub.verdict == Verdict::unparseable) {
      if (config.unparseable_policy == UnparseablePolicy::drop) {
        d.outcome = FilterOutcome::dropped_unparseable;
        return d;
      }
      saw_unparseable = true;
    }
  }
  d.outcome = saw_unparseable ? FilterOutcome::kept_unparseable : FilterOutcome::kept;
  return d;
}

DecisionJournal::DecisionJournal(std::filesystem::path file) : file_(std::move(file)) {
  std::ifstream in(file_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      auto d = parse_line(line);
      entries_.try_emplace(d.word, std::move(d));
    } catch (const Error&) {
      // Torn trailing line from an interrupted run.
    }
  }
}

std::optional<FilterDecision> DecisionJournal::find(const std::string& word) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(word);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void DecisionJournal::append(const FilterDecision& decision) {
  std::lock_guard lock(mu_);
  if (!entries_.try_emplace(decision.word, decision).second) return;
  if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
  std::ofstream out(file_, std::ios::app | std::ios::binary);
  if (!out) fail(ErrorCode::io_failure, "cannot append to journal " + file_.string());
  out << format_line(decision) << '\n';
}

std::size_t DecisionJournal::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

std::string DecisionJournal::format_line(const FilterDecision& d) {
  json detail;
  if (!d.supercategory.empty()) detail["of"] = d.supercategory;
  detail["checked"] = d.checked_id_labels;
  json tr = json::array();
  for (const auto& t : d.transcripts) tr.push_back(json::array({t.prompt, t.reply}));
  detail["transcripts"] = std::move(tr);
  return d.word + "\t" + to_string(d.outcome) + "\t" + detail.dump();
}

FilterDecision DecisionJournal::parse_line(const std::string& line) {
  auto t1 = line.find('\t');
  auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
  if (t2 == std::string::npos) fail(ErrorCode::invalid_argument, "journal line needs 3 fields");
  FilterDecision d;
  d.word = line.substr(0, t1);
  d.outcome = parse_filter_outcome(line.substr(t1 + 1, t2 - t1 - 1));
  try {
    auto detail = json::parse(line.substr(t2 + 1));
    if (detail.contains("of")) d.supercategory = detail["of"].get<std::string>();
    d.checked_id_labels = detail.value("checked", std::vector<std::string>{});
    for (const auto& t : detail.value("transcripts", json::array())) {
      d.transcripts.push_back({t.at(0).get<std::string>(), t.at(1).get<std::string>()});
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("bad journal detail: ") + e.what());
  }
  return d;
}

FilterResult neg_filter(const LabelPool& negatives, const Matrix& negative_vectors,
                        const EmbeddingArchive& id_text, YesNoOracle& oracle,
                        const FilterConfig& config, DecisionJournal* journal) {
  config.validate();
  if (negatives.empty()) fail(ErrorCode::empty_pool, "no negative labels to filter");
  if (id_text.rows() == 0) fail(ErrorCode::empty_pool, "no in-distribution labels");
  if (negative_vectors.rows != negatives.size()) {
    fail(ErrorCode::dimension_mismatch, "negative vectors not aligned with the pool");
  }
  if (negative_vectors.cols != id_text.dim()) {
    fail(ErrorCode::dimension_mismatch, "negative and label embeddings differ in dim");
  }

  const auto& words = negatives.labels();
  std::vector<FilterDecision> decisions(words.size());
  // Decisions reach the journal as they complete, so an aborted run keeps
  // everything computed before the failure.
  detail::parallel_for(words.size(), config.workers, [&](std::size_t i) {
    if (journal) {
      if (auto prior = journal->find(words[i])) {
        decisions[i] = std::move(*prior);
        return;
      }
    }
    decisions[i] = filter_word(oracle, words[i], negative_vectors.row(i), id_text, config);
    if (journal) journal->append(decisions[i]);
  });

  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    if (decisions[i].kept()) keep.push_back(i);
  }
  return {negatives.subset(keep), std::move(decisions)};
}

FilterResult neg_filter(const LabelPool& negatives, const LabelPool& id_labels,
                        YesNoOracle& oracle, TextEmbedder& embedder, const FilterConfig& config,
                        DecisionJournal* journal) {
  if (id_labels.empty()) fail(ErrorCode::empty_pool, "no in-distribution labels");
  EmbeddingArchive id_text;
  id_text.vectors = embedder.embed_batch(id_labels.prompts());
  id_text.ids = id_labels.labels();
  id_text.model_tag = embedder.model_tag();
  Matrix neg_vectors = embedder.embed_batch(negatives.prompts());
  return neg_filter(negatives, neg_vectors, id_text, oracle, config, journal);
}

}  // namespace negrefine
