#include "negrefine/fixture.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <vector>

#include "negrefine/embedding_store.hpp"
#include "negrefine/error.hpp"
#include "negrefine/providers.hpp"

namespace negrefine {

namespace fs = std::filesystem;

namespace {

using Vec = std::vector<double>;

const char* const kIdLabels[] = {"daisy",  "beach",    "bee",    "tulip",   "lighthouse",
                                 "goldfish", "violin", "canoe",  "pretzel", "owl"};

// Three look-alikes per in-distribution label, same order as kIdLabels.
const char* const kDecoys[][3] = {
    {"chamomile", "aster", "marigold"},    {"sand dune", "seashore", "lagoon"},
    {"wasp", "hornet", "hoverfly"},        {"lily", "crocus", "hyacinth"},
    {"watchtower", "beacon", "pier"},      {"koi", "guppy", "carp"},
    {"viola", "cello", "fiddle"},          {"kayak", "rowboat", "paddle"},
    {"bagel", "croissant", "breadstick"},  {"hawk", "falcon", "barn swallow"},
};

const char* const kFar[] = {"costa rica", "sunflower", "glacier", "volcano", "saxophone",
                            "cactus",     "tractor",   "comet",   "submarine"};

constexpr const char* kSubcategory = "african daisy";

class Gen {
 public:
  Gen(std::uint64_t seed, std::size_t dim) : key_(seed ^ 0x6e65677265666978ULL), dim_(dim) {}

  double normal() {
    const double u1 = counter_uniform(key_, n_++);
    const double u2 = counter_uniform(key_, n_++);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  double uniform() { return counter_uniform(key_, n_++); }

  Vec gaussian() {
    Vec v(dim_);
    for (auto& x : v) x = normal();
    return v;
  }
  Vec unit() { return normalized(gaussian()); }

  static Vec normalized(Vec v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    s = std::sqrt(s);
    for (auto& x : v) x /= s;
    return v;
  }

 private:
  std::uint64_t key_;
  std::uint64_t n_ = 0;
  std::size_t dim_;
};

double dotv(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Vec axpy(Vec y, double a, const Vec& x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
  return y;
}

// Fresh unit vector orthogonal to everything in `basis`; appended to it.
Vec orthogonal(Gen& g, std::vector<Vec>& basis) {
  Vec v = g.gaussian();
  for (const auto& b : basis) v = axpy(std::move(v), -dotv(v, b), b);
  v = Gen::normalized(std::move(v));
  basis.push_back(v);
  return v;
}

struct Builder {
  std::vector<std::string> ids;
  std::vector<Vec> rows;
  void add(std::string id, Vec v) {
    ids.push_back(std::move(id));
    rows.push_back(Gen::normalized(std::move(v)));
  }
  EmbeddingArchive archive(EmbeddingKind kind) const {
    EmbeddingArchive a;
    a.kind = kind;
    a.model_tag = "fixture";
    a.ids = ids;
    a.vectors = Matrix(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < rows[r].size(); ++c) {
        a.vectors.row(r)[c] = static_cast<float>(rows[r][c]);
      }
    }
    return a;
  }
};

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p, std::ios::trunc);
  for (const auto& l : lines) out << l << '\n';
  if (!out) fail(ErrorCode::io_failure, "cannot write " + p.string());
}

std::string id_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04zu", prefix, i);
  return buf;
}

}  // namespace

FixtureSummary write_fixture(const fs::path& dir, const FixtureOptions& o) {
  constexpr std::size_t n_id = std::size(kIdLabels);
  constexpr std::size_t n_far = std::size(kFar);
  if (o.dim < 2 * (n_id + n_far) + 30) fail(ErrorCode::invalid_argument, "fixture dim too small");
  if (o.awkward_per_class > o.id_per_class) {
    fail(ErrorCode::invalid_argument, "awkward_per_class exceeds id_per_class");
  }
  Gen g(o.seed, o.dim);

  std::vector<Vec> basis;
  std::vector<Vec> id_vec;
  for (std::size_t i = 0; i < n_id; ++i) id_vec.push_back(orthogonal(g, basis));
  std::vector<Vec> far_vec;
  for (std::size_t i = 0; i < n_far; ++i) far_vec.push_back(orthogonal(g, basis));
  // Mostly its own direction, slightly toward daisy.
  const Vec sub_vec = axpy(axpy(Vec(o.dim, 0.0), 0.15, id_vec[0]), std::sqrt(1 - 0.0225),
                           orthogonal(g, basis));

  Builder vocab;
  std::vector<std::string> lexicon;
  std::vector<std::vector<Vec>> decoy_vec(n_id);
  for (std::size_t i = 0; i < n_id; ++i) vocab.add(kIdLabels[i], id_vec[i]);
  for (std::size_t i = 0; i < n_id; ++i) {
    for (const char* w : kDecoys[i]) {
      Vec v(o.dim, 0.0);
      v = axpy(axpy(std::move(v), 0.8, g.unit()), 0.6, id_vec[i]);
      decoy_vec[i].push_back(Gen::normalized(std::move(v)));
      vocab.add(w, decoy_vec[i].back());
      lexicon.push_back(w);
    }
  }
  for (std::size_t i = 0; i < n_far; ++i) {
    vocab.add(kFar[i], far_vec[i]);
    lexicon.push_back(kFar[i]);
  }
  vocab.add(kSubcategory, sub_vec);
  lexicon.push_back(kSubcategory);

  // Orthonormal basis of the vocabulary span, for drawing label-free noise.
  std::vector<Vec> span;
  for (const auto& r : vocab.rows) {
    Vec v = r;
    for (const auto& b : span) v = axpy(std::move(v), -dotv(v, b), b);
    double n = std::sqrt(dotv(v, v));
    if (n > 1e-6) span.push_back(Gen::normalized(std::move(v)));
  }
  if (span.size() >= o.dim) fail(ErrorCode::invalid_argument, "fixture dim too small");
  auto visual = [&] {
    Vec v = g.gaussian();
    for (const auto& b : span) v = axpy(std::move(v), -dotv(v, b), b);
    return Gen::normalized(std::move(v));
  };
  auto noisy = [&](Vec v, double strength = 1.0) {
    v = axpy(axpy(Vec(o.dim, 0.0), strength, Gen::normalized(std::move(v))), o.label_noise,
             g.gaussian());
    return axpy(std::move(v), o.visual_noise * (0.5 + g.uniform()), visual());
  };

  // In-distribution images. Awkward ones: daisy -> african daisy, beach ->
  // costa rica backdrop, bee -> sitting on a sunflower.
  Builder id_images;
  std::size_t next = 0;
  for (std::size_t c = 0; c < n_id; ++c) {
    for (std::size_t j = 0; j < o.id_per_class; ++j) {
      Vec v = id_vec[c];
      if (j < o.awkward_per_class) {
        const double w = 0.7 + 0.6 * g.uniform();
        if (c == 0) v = axpy(axpy(Vec(o.dim, 0.0), o.subcategory_daisy, id_vec[0]), w, sub_vec);
        if (c == 1) v = axpy(id_vec[1], w, far_vec[0]);
        if (c == 2) v = axpy(id_vec[2], w * o.cooccur_weight, far_vec[1]);
      }
      id_images.add(id_name("id", next++), noisy(std::move(v)));
    }
  }

  // Far OOD: scenes of kept negatives (never the landmark, which the filter
  // removes from the label set).
  Builder far;
  for (std::size_t i = 0; i < o.ood_far; ++i) {
    const std::size_t n = 1 + i % (n_far - 1);
    far.add(id_name("far", i), noisy(far_vec[n], o.far_strength_min + (1.0 - o.far_strength_min) * g.uniform()));
  }
  // Near OOD: negatives next to in-distribution context, and look-alikes.
  Builder near;
  for (std::size_t i = 0; i < o.ood_near_negative; ++i) {
    const std::size_t n = 1 + i % (n_far - 1);
    const std::size_t c = 3 + i % (n_id - 3);
    near.add(id_name("near", i), noisy(axpy(far_vec[n], 0.35, id_vec[c])));
  }
  for (std::size_t i = 0; i < o.ood_near_decoy; ++i) {
    const std::size_t c = 3 + i % (n_id - 3);
    near.add(id_name("near", o.ood_near_negative + i), noisy(decoy_vec[c][i % 3]));
  }

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io_failure, "cannot create " + dir.string());
  save_archive(vocab.archive(EmbeddingKind::text), dir / "vocab");
  save_archive(id_images.archive(EmbeddingKind::image), dir / "images" / "id");
  save_archive(far.archive(EmbeddingKind::image), dir / "images" / "ood_far");
  save_archive(near.archive(EmbeddingKind::image), dir / "images" / "ood_near");
  write_lines(dir / "id_labels.txt", {std::begin(kIdLabels), std::end(kIdLabels)});
  write_lines(dir / "lexicon.txt", lexicon);
  write_lines(dir / "oracle_script.tsv",
              {"# prompt\treply; unlisted prompts get the '*' reply",
               "*\tNo",
               "Is costa rica a proper noun, like the name of an entity?\tYes",
               "Is african daisy a subcategory of daisy?\tYes"});
  write_lines(dir / "config.ini",
              {"[run]", "seed = 0", "out_dir = runs", "",
               "[inputs]", "lexicon = lexicon.txt", "id_labels = id_labels.txt",
               "id_images = images/id", "ood_images = far=images/ood_far,near=images/ood_near", "",
               "[providers]", "embedder = lookup", "vocab = vocab", "compose = true",
               "prompt_template = {label}", "oracle = scripted",
               "oracle_script = oracle_script.tsv", "",
               "[negmine]", "p_percent = 25", "",
               "[scoring]", "tau = 0.01", "k = 5", "alpha = 2"});

  FixtureSummary s;
  s.id_labels = n_id;
  s.lexicon = lexicon.size();
  s.id_images = id_images.ids.size();
  s.ood_images = far.ids.size() + near.ids.size();
  s.config = dir / "config.ini";
  return s;
}

}  // namespace negrefine
