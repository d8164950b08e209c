#include "negrefine/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "negrefine/digest.hpp"
#include "negrefine/error.hpp"
#include "negrefine/negmine.hpp"
#include "parallel.hpp"

namespace negrefine {

namespace {

std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

const char* to_string(MmVariant v) noexcept {
  switch (v) {
    case MmVariant::max_softmax_pair: return "max_softmax_pair";
    case MmVariant::max_diff: return "max_diff";
    case MmVariant::max_ratio: return "max_ratio";
    case MmVariant::avg_softmax_pair: return "avg_softmax_pair";
    case MmVariant::sum_softmax_pair: return "sum_softmax_pair";
  }
  return "max_softmax_pair";
}

MmVariant parse_mm_variant(const std::string& text) {
  for (auto v : {MmVariant::max_softmax_pair, MmVariant::max_diff, MmVariant::max_ratio,
                 MmVariant::avg_softmax_pair, MmVariant::sum_softmax_pair}) {
    if (text == to_string(v)) return v;
  }
  fail(ErrorCode::invalid_argument, "unknown multi-matching variant '" + text + "'");
}

void ScoreConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) fail(ErrorCode::invalid_argument, "tau must be > 0");
  if (k < 1) fail(ErrorCode::invalid_argument, "k must be >= 1");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    fail(ErrorCode::invalid_argument, "alpha must be >= 0");
  }
  if (concat_template.find("{y}") == std::string::npos ||
      concat_template.find("{yneg}") == std::string::npos) {
    fail(ErrorCode::invalid_argument, "concat template needs {y} and {yneg}");
  }
  if (prompt_template.find("{label}") == std::string::npos) {
    fail(ErrorCode::invalid_argument, "prompt template needs {label}");
  }
}

std::string ScoreConfig::canonical() const {
  std::ostringstream s;
  s << "tau=" << fmt_real(tau) << "\nk=" << k << "\nalpha=" << fmt_real(alpha)
    << "\nvariant=" << to_string(variant) << "\nconcat_template=" << concat_template
    << "\nprompt_template=" << prompt_template << "\nuse_mm=" << (use_mm ? 1 : 0) << "\n";
  return s.str();
}

double s_neglabel(std::span<const double> sim_in, std::span<const double> sim_neg, double tau) {
  if (sim_in.empty() || sim_neg.empty()) {
    fail(ErrorCode::empty_input, "s_neglabel needs at least one label on each side");
  }
  if (!(tau > 0.0)) fail(ErrorCode::invalid_argument, "tau must be > 0");
  double hi = -std::numeric_limits<double>::infinity();
  for (double s : sim_in) hi = std::max(hi, s / tau);
  for (double s : sim_neg) hi = std::max(hi, s / tau);
  double in = 0.0;
  double neg = 0.0;
  for (double s : sim_in) in += std::exp(s / tau - hi);
  for (double s : sim_neg) neg += std::exp(s / tau - hi);
  return in / (in + neg);
}

std::vector<std::size_t> top_k(std::span<const double> sims, std::size_t k) {
  std::vector<std::size_t> order(sims.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return sims[a] != sims[b] ? sims[a] > sims[b] : a < b;
                    });
  order.resize(take);
  return order;
}

double mm_kernel(double s_t, double s_n, double tau) noexcept {
  const double z = (s_t - s_n) / tau;
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double final_score(double s_nl, double s_mm_value, double alpha) noexcept {
  return s_nl + alpha * s_mm_value;
}

MmResult aggregate_mm(std::span<const double> pair_sims, std::span<const double> neg_sims,
                      std::size_t k_in, MmVariant variant, double tau) {
  const std::size_t k_neg = neg_sims.size();
  if (k_in == 0 || k_neg == 0 || pair_sims.size() != k_in * k_neg) {
    fail(ErrorCode::dimension_mismatch, "pair similarity block does not match k_in x k_neg");
  }
  MmResult r;
  double best_stat = -std::numeric_limits<double>::infinity();
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < k_in; ++i) {
    for (std::size_t j = 0; j < k_neg; ++j) {
      const double s_t = pair_sims[i * k_neg + j];
      const double s_n = neg_sims[j];
      double stat = 0.0;
      switch (variant) {
        case MmVariant::max_softmax_pair:
        case MmVariant::avg_softmax_pair:
        case MmVariant::sum_softmax_pair:
          stat = mm_kernel(s_t, s_n, tau);
          break;
        case MmVariant::max_diff:
          stat = (s_t - s_n) / tau;
          break;
        case MmVariant::max_ratio:
          if (s_t + s_n == 0.0) continue;  // ratio undefined
          stat = (s_t / tau) / ((s_t + s_n) / tau);
          break;
      }
      total += stat;
      ++counted;
      if (stat > best_stat) {
        best_stat = stat;
        r.best = BestPair{i, j, s_t, s_n};
      }
    }
  }
  if (counted == 0) return r;
  switch (variant) {
    case MmVariant::avg_softmax_pair: r.value = total / double(counted); break;
    case MmVariant::sum_softmax_pair: r.value = total; break;
    default: r.value = best_stat; break;
  }
  return r;
}

std::string pair_text(const std::string& id_label, const std::string& neg_label,
                      const ScoreConfig& config) {
  std::string joined = fill_template(fill_template(config.concat_template, "y", id_label), "yneg",
                                     neg_label);
  return fill_template(config.prompt_template, "label", joined);
}

std::vector<std::string> pair_texts(std::span<const std::string> top_in_labels,
                                    std::span<const std::string> top_neg_labels,
                                    const ScoreConfig& config) {
  std::vector<std::string> out;
  out.reserve(top_in_labels.size() * top_neg_labels.size());
  for (const auto& y : top_in_labels) {
    for (const auto& n : top_neg_labels) out.push_back(pair_text(y, n, config));
  }
  return out;
}

MmResult s_mm(std::span<const float> image, std::span<const std::string> top_in_labels,
              std::span<const std::string> top_neg_labels, std::span<const double> top_neg_sims,
              TextEmbedder& embedder, const ScoreConfig& config) {
  if (top_neg_sims.size() != top_neg_labels.size()) {
    fail(ErrorCode::dimension_mismatch, "negative sims not aligned with labels");
  }
  auto texts = pair_texts(top_in_labels, top_neg_labels, config);
  Matrix emb = embedder.embed_batch(texts);
  if (emb.cols != image.size()) {
    fail(ErrorCode::dimension_mismatch, "embedder dim " + std::to_string(emb.cols) +
                                            " vs image dim " + std::to_string(image.size()));
  }
  std::vector<double> pair_sims(texts.size());
  for (std::size_t t = 0; t < texts.size(); ++t) pair_sims[t] = dot(image, emb.row(t));
  return aggregate_mm(pair_sims, top_neg_sims, top_in_labels.size(), config.variant, config.tau);
}

std::vector<ScoreRecord> score_dataset(const EmbeddingArchive& images,
                                       const EmbeddingArchive& id_text,
                                       const EmbeddingArchive& neg_text, TextEmbedder& embedder,
                                       const ScoreConfig& config, ScoreStats* stats) {
  config.validate();
  if (id_text.rows() == 0 || neg_text.rows() == 0) {
    fail(ErrorCode::empty_input, "scoring needs in-distribution and negative labels");
  }
  if (images.dim() != id_text.dim() || images.dim() != neg_text.dim()) {
    fail(ErrorCode::dimension_mismatch, "image and label archives differ in dim");
  }
  const std::size_t n = images.rows();
  const std::size_t K = id_text.rows();
  const std::size_t M = neg_text.rows();
  const auto sim_in = similarity_matrix(images.vectors, id_text.vectors, config.workers);
  const auto sim_neg = similarity_matrix(images.vectors, neg_text.vectors, config.workers);

  std::vector<ScoreRecord> records(n);
  detail::parallel_for(n, config.workers, [&](std::size_t i) {
    auto& r = records[i];
    r.image_id = images.ids[i];
    std::span<const double> row_in(sim_in.data() + i * K, K);
    std::span<const double> row_neg(sim_neg.data() + i * M, M);
    r.s_neglabel = s_neglabel(row_in, row_neg, config.tau);
    r.top_in = top_k(row_in, config.k);
    r.top_neg = top_k(row_neg, config.k);
  });

  ScoreStats local;
  if (config.use_mm) {
    auto labels_of = [](const EmbeddingArchive& a, const std::vector<std::size_t>& idx) {
      std::vector<std::string> out;
      for (auto i : idx) out.push_back(a.ids[i]);
      return out;
    };
    std::vector<std::vector<std::string>> texts(n);
    std::vector<std::string> unique;
    std::unordered_map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < n; ++i) {
      texts[i] = pair_texts(labels_of(id_text, records[i].top_in),
                            labels_of(neg_text, records[i].top_neg), config);
      local.pair_texts_requested += texts[i].size();
      for (const auto& t : texts[i]) {
        if (seen.emplace(t, unique.size()).second) unique.push_back(t);
      }
    }
    local.unique_pair_texts = unique.size();

    MemoizingEmbedder memo(std::shared_ptr<TextEmbedder>(&embedder, [](TextEmbedder*) {}));
    try {
      memo.embed_batch(unique);
    } catch (const Error&) {
      // Fall through: each image retries its own texts below and failures are
      // recorded per image.
    }

    detail::parallel_for(n, config.workers, [&](std::size_t i) {
      auto& r = records[i];
      std::vector<double> neg_sims;
      for (auto j : r.top_neg) neg_sims.push_back(sim_neg[i * M + j]);
      try {
        Matrix emb = memo.embed_batch(texts[i]);
        if (emb.cols != images.dim()) {
          fail(ErrorCode::dimension_mismatch, "embedder dim " + std::to_string(emb.cols) +
                                                  " vs image dim " +
                                                  std::to_string(images.dim()));
        }
        std::vector<double> pair_sims(texts[i].size());
        for (std::size_t t = 0; t < texts[i].size(); ++t) {
          pair_sims[t] = dot(images.row(i), emb.row(t));
        }
        auto mm = aggregate_mm(pair_sims, neg_sims, r.top_in.size(), config.variant, config.tau);
        r.s_mm = mm.value;
        r.best_pair = mm.best;
        if (mm.best) {
          r.best_in_label = id_text.ids[r.top_in[mm.best->in_rank]];
          r.best_neg_label = neg_text.ids[r.top_neg[mm.best->neg_rank]];
        }
      } catch (const Error& e) {
        r.error = std::string(to_string(e.code())) + ": " + e.what();
      }
    });
  }

  for (auto& r : records) {
    if (!r.ok()) {
      ++local.failed_images;
      r.s_mm = std::numeric_limits<double>::quiet_NaN();
      r.s_final = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    r.s_final = final_score(r.s_neglabel, config.use_mm ? r.s_mm : 0.0, config.alpha);
  }
  if (stats) *stats = local;
  return records;
}

std::string scoring_digest(const ScoreConfig& config, const std::string& id_text_digest,
                           const std::string& neg_text_digest, const std::string& embedder_tag) {
  return sha256_hex("negrefine-scoring-v1\n" + config.canonical() + "id_text=" + id_text_digest +
                    "\nneg_text=" + neg_text_digest + "\nembedder=" + embedder_tag + "\n");
}

std::size_t ScoreFile::failed() const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [](const auto& r) { return !r.ok(); }));
}

void write_score_file(const std::filesystem::path& path, const std::string& config_digest,
                      const ScoreConfig& config, std::span<const ScoreRecord> records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io_failure, "cannot write " + path.string());
  out << "# negrefine-scores v1\tconfig_digest=" << config_digest << "\ttau=" << fmt_real(config.tau)
      << "\tk=" << config.k << "\talpha=" << fmt_real(config.alpha)
      << "\tvariant=" << to_string(config.variant) << "\tuse_mm=" << (config.use_mm ? 1 : 0)
      << "\n";
  out << "image_id\ts_neglabel\ts_mm\ts_final\tbest_pair\n";
  for (const auto& r : records) {
    out << r.image_id << '\t';
    if (!r.ok()) {
      std::string msg = r.error;
      std::replace_if(msg.begin(), msg.end(), [](char c) { return c == '\t' || c == '\n'; }, ' ');
      out << fmt_real(r.s_neglabel) << "\tnan\tnan\terror=" << msg << '\n';
      continue;
    }
    out << fmt_real(r.s_neglabel) << '\t' << fmt_real(r.s_mm) << '\t' << fmt_real(r.s_final)
        << '\t';
    if (r.best_pair) {
      out << "i=" << r.best_pair->in_rank << ";j=" << r.best_pair->neg_rank
          << ";s_t=" << fmt_real(r.best_pair->s_t) << ";s_n=" << fmt_real(r.best_pair->s_n)
          << ";in=" << r.best_in_label << ";neg=" << r.best_neg_label;
    } else {
      out << "-";
    }
    out << '\n';
  }
  if (!out) fail(ErrorCode::io_failure, "short write to " + path.string());
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    parts.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
    if (tab == std::string::npos) return parts;
    start = tab + 1;
  }
}

double parse_real(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    fail(ErrorCode::invalid_argument, "bad number '" + s + "' in score file");
  }
}

}  // namespace

ScoreFile read_score_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_failure, "cannot read score file " + path.string());
  ScoreFile f;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# negrefine-scores v1", 0) != 0) {
    fail(ErrorCode::malformed_header, "not a score file: " + path.string());
  }
  for (const auto& field : split_tabs(line)) {
    if (field.rfind("config_digest=", 0) == 0) f.config_digest = field.substr(14);
  }
  if (f.config_digest.empty()) fail(ErrorCode::malformed_header, "score file lacks config_digest");
  std::getline(in, line);  // column header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto parts = split_tabs(line);
    if (parts.size() != 5) {
      fail(ErrorCode::invalid_argument, "score line needs 5 fields in " + path.string());
    }
    ScoreRecord r;
    r.image_id = parts[0];
    r.s_neglabel = parse_real(parts[1]);
    if (parts[4].rfind("error=", 0) == 0) {
      r.error = parts[4].substr(6);
      if (r.error.empty()) r.error = "unspecified";
      r.s_mm = r.s_final = std::numeric_limits<double>::quiet_NaN();
    } else {
      r.s_mm = parse_real(parts[2]);
      r.s_final = parse_real(parts[3]);
    }
    f.records.push_back(std::move(r));
  }
  return f;
}

}  // namespace negrefine
