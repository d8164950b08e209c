#include "negrefine/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "negrefine/digest.hpp"
#include "negrefine/error.hpp"

namespace negrefine {

namespace fs = std::filesystem;

namespace {

struct KeySpec {
  const char* section;
  const char* key;
  const char* default_value;
  bool is_path;
  bool in_digest;
};

// clang-format off
constexpr KeySpec kKeys[] = {
  {"run", "seed", "0", false, true},
  {"run", "out_dir", "runs", true, false},
  {"run", "workers", "0", false, false},

  {"inputs", "lexicon", "", true, true},
  {"inputs", "adjectives", "", true, true},
  {"inputs", "superclasses", "", true, true},
  {"inputs", "id_labels", "", true, true},
  {"inputs", "id_images", "", true, true},
  {"inputs", "ood_images", "", true, true},  // name=path, comma separated

  {"providers", "embedder", "synthetic", false, true},
  {"providers", "embed_dim", "512", false, true},
  {"providers", "embed_seed", "0", false, true},
  {"providers", "vocab", "", true, true},
  {"providers", "compose", "false", false, true},
  {"providers", "prompt_template", "This is a {label}", false, true},
  {"providers", "embed_endpoint", "", false, false},
  {"providers", "oracle", "remote", false, true},
  {"providers", "oracle_script", "", true, true},
  {"providers", "llm_endpoint", "", false, false},
  {"providers", "llm_model", "", false, true},
  {"providers", "cache_dir", "", true, false},
  {"providers", "max_in_flight", "8", false, false},
  {"providers", "retry_attempts", "3", false, false},
  {"providers", "retry_base_ms", "1000", false, false},

  {"negmine", "p_percent", "15", false, true},
  {"negmine", "aggregator", "max", false, true},

  {"negfilter", "enabled", "true", false, true},
  {"negfilter", "n", "10", false, true},
  {"negfilter", "proper_noun_prompt", "Is {w} a proper noun, like the name of an entity?", false, true},
  {"negfilter", "subcategory_prompt", "Is {w} a subcategory of {l}?", false, true},
  {"negfilter", "unparseable_policy", "keep", false, true},
  {"negfilter", "workers", "1", false, false},

  {"scoring", "tau", "0.01", false, true},
  {"scoring", "k", "5", false, true},
  {"scoring", "alpha", "2", false, true},
  {"scoring", "variant", "max_softmax_pair", false, true},
  {"scoring", "concat_template", "{y} and {yneg}", false, true},
  {"scoring", "use_mm", "true", false, true},

  {"eval", "tpr_target", "0.95", false, true},
  {"eval", "allow_partial", "false", false, true},
};
// clang-format on

const KeySpec* find_spec(const std::string& section, const std::string& key) {
  for (const auto& k : kKeys) {
    if (section == k.section && key == k.key) return &k;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string resolve_path(const std::string& value, const fs::path& base) {
  if (value.empty()) return value;
  fs::path p(value);
  if (p.is_relative()) p = base / p;
  return p.lexically_normal().string();
}

// ood_images is a list; resolve each path component.
std::string resolve_ood_list(const std::string& value, const fs::path& base) {
  std::string out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    auto eq = item.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::invalid_argument, "ood_images entry must be name=path: '" + item + "'");
    }
    if (!out.empty()) out += ",";
    out += trim(item.substr(0, eq)) + "=" + resolve_path(trim(item.substr(eq + 1)), base);
  }
  return out;
}

std::string content_digest(const std::string& path) {
  if (path.empty()) return "";
  fs::path p(path);
  std::error_code ec;
  if (fs::is_directory(p, ec)) {
    if (fs::exists(p / "manifest")) return "archive:" + archive_content_digest(p);
    return "missing-archive";
  }
  if (fs::is_regular_file(p, ec)) return "sha256:" + sha256_file_hex(p);
  return "missing";
}

}  // namespace

bool parse_bool(const std::string& text) {
  std::string t;
  for (char c : text) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  fail(ErrorCode::invalid_argument, "expected a boolean, got '" + text + "'");
}

double parse_double(const std::string& text, const std::string& what) {
  try {
    std::size_t pos = 0;
    double v = std::stod(text, &pos);
    if (pos == text.size()) return v;
  } catch (const std::logic_error&) {
  }
  fail(ErrorCode::invalid_argument, what + ": expected a number, got '" + text + "'");
}

std::uint64_t parse_u64(const std::string& text, const std::string& what) {
  try {
    std::size_t pos = 0;
    if (!text.empty() && text[0] != '-') {
      auto v = std::stoull(text, &pos);
      if (pos == text.size()) return v;
    }
  } catch (const std::logic_error&) {
  }
  fail(ErrorCode::invalid_argument, what + ": expected a non-negative integer, got '" + text + "'");
}

RunConfig::RunConfig() {
  for (const auto& k : kKeys) values_[k.section][k.key] = k.default_value;
  const std::pair<const char*, const char*> env_keys[] = {
      {"NEGREFINE_LLM_ENDPOINT", "llm_endpoint"},
      {"NEGREFINE_LLM_MODEL", "llm_model"},
      {"NEGREFINE_EMBED_ENDPOINT", "embed_endpoint"},
      {"NEGREFINE_CACHE_DIR", "cache_dir"},
  };
  for (const auto& [var, key] : env_keys) {
    if (const char* v = std::getenv(var); v != nullptr && *v != '\0') set("providers", key, v);
  }
}

RunConfig RunConfig::load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) fail(ErrorCode::io_failure, "cannot read config " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  cfg.merge_text(ss.str(), fs::absolute(file).parent_path());
  return cfg;
}

void RunConfig::merge_text(const std::string& text, const fs::path& base_dir) {
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        fail(ErrorCode::invalid_argument, "line " + std::to_string(lineno) + ": bad section header");
      }
      section = trim(t.substr(1, t.size() - 2));
      if (!values_.count(section)) {
        fail(ErrorCode::invalid_argument, "unknown config section [" + section + "]");
      }
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos || section.empty()) {
      fail(ErrorCode::invalid_argument,
           "line " + std::to_string(lineno) + ": expected 'key = value' inside a section");
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    const KeySpec* spec = find_spec(section, key);
    if (!spec) fail(ErrorCode::invalid_argument, "unknown config key " + section + "." + key);
    if (section == "inputs" && key == "ood_images") {
      value = resolve_ood_list(value, base_dir);
    } else if (spec->is_path) {
      value = resolve_path(value, base_dir);
    }
    values_[section][key] = value;
  }
}

void RunConfig::set(const std::string& section, const std::string& key, const std::string& value) {
  const KeySpec* spec = find_spec(section, key);
  if (!spec) fail(ErrorCode::invalid_argument, "unknown config key " + section + "." + key);
  if (section == "inputs" && key == "ood_images") {
    values_[section][key] = resolve_ood_list(value, fs::current_path());
  } else if (spec->is_path) {
    values_[section][key] = resolve_path(value, fs::current_path());
  } else {
    values_[section][key] = value;
  }
}

const std::string& RunConfig::get(const std::string& section, const std::string& key) const {
  if (!find_spec(section, key)) fail(ErrorCode::invalid_argument, "unknown config key " + section + "." + key);
  return values_.at(section).at(key);
}

bool RunConfig::known(const std::string& section, const std::string& key) {
  return find_spec(section, key) != nullptr;
}

std::string RunConfig::to_text() const {
  std::ostringstream s;
  for (const auto& [section, keys] : values_) {
    s << "[" << section << "]\n";
    for (const auto& [key, value] : keys) {
      // Absolute paths so the dump reloads the same from any directory.
      const bool path = find_spec(section, key)->is_path && !value.empty();
      s << key << " = " << (path ? fs::absolute(value).lexically_normal().string() : value) << "\n";
    }
    s << "\n";
  }
  return s.str();
}

std::string RunConfig::canonical_subset(const std::vector<std::string>& selectors) const {
  auto selected = [&](const std::string& section, const std::string& key) {
    for (const auto& sel : selectors) {
      if (sel == section + ".*" || sel == section + "." + key) return true;
    }
    return false;
  };
  std::ostringstream s;
  s << "negrefine-config-v1\n";
  for (const auto& [section, keys] : values_) {
    for (const auto& [key, value] : keys) {
      const KeySpec* spec = find_spec(section, key);
      if (!spec->in_digest || !selected(section, key)) continue;
      std::string v = value;
      if (section == "inputs" && key == "ood_images") {
        std::string out;
        for (const auto& [name, path] : ood_images()) {
          out += name + "=" + content_digest(path.string()) + ",";
        }
        v = out;
      } else if (spec->is_path) {
        v = content_digest(value);
      }
      s << section << "." << key << "=" << v << "\n";
    }
  }
  return s.str();
}

std::string RunConfig::canonical_text() const {
  std::vector<std::string> all;
  for (const auto& [section, keys] : values_) all.push_back(section + ".*");
  return canonical_subset(all);
}

std::string RunConfig::digest() const { return sha256_hex(canonical_text()); }

std::uint64_t RunConfig::seed() const { return parse_u64(get("run", "seed"), "run.seed"); }

std::size_t RunConfig::workers() const { return parse_u64(get("run", "workers"), "run.workers"); }

fs::path RunConfig::out_dir() const { return get("run", "out_dir"); }

MiningConfig RunConfig::mining() const {
  MiningConfig m;
  m.p_percent = parse_double(get("negmine", "p_percent"), "negmine.p_percent");
  m.aggregator = Aggregator::parse(get("negmine", "aggregator"));
  m.rng_seed = seed();
  if (const auto& sc = get("inputs", "superclasses"); !sc.empty()) {
    m.superclass_terms = read_word_list(sc);
  }
  return m;
}

FilterConfig RunConfig::filter() const {
  FilterConfig f;
  f.n = parse_u64(get("negfilter", "n"), "negfilter.n");
  f.proper_noun_prompt = get("negfilter", "proper_noun_prompt");
  f.subcategory_prompt = get("negfilter", "subcategory_prompt");
  const auto& policy = get("negfilter", "unparseable_policy");
  if (policy == "keep") {
    f.unparseable_policy = UnparseablePolicy::keep;
  } else if (policy == "drop") {
    f.unparseable_policy = UnparseablePolicy::drop;
  } else {
    fail(ErrorCode::invalid_argument, "negfilter.unparseable_policy must be keep or drop");
  }
  f.workers = parse_u64(get("negfilter", "workers"), "negfilter.workers");
  return f;
}

bool RunConfig::filter_enabled() const { return parse_bool(get("negfilter", "enabled")); }

ScoreConfig RunConfig::scoring() const {
  ScoreConfig s;
  s.tau = parse_double(get("scoring", "tau"), "scoring.tau");
  s.k = parse_u64(get("scoring", "k"), "scoring.k");
  s.alpha = parse_double(get("scoring", "alpha"), "scoring.alpha");
  s.variant = parse_mm_variant(get("scoring", "variant"));
  s.concat_template = get("scoring", "concat_template");
  s.prompt_template = prompt_template();
  s.use_mm = parse_bool(get("scoring", "use_mm"));
  s.workers = workers();
  return s;
}

double RunConfig::tpr_target() const { return parse_double(get("eval", "tpr_target"), "eval.tpr_target"); }

bool RunConfig::allow_partial() const { return parse_bool(get("eval", "allow_partial")); }

std::string RunConfig::prompt_template() const { return get("providers", "prompt_template"); }

std::vector<std::pair<std::string, fs::path>> RunConfig::ood_images() const {
  std::vector<std::pair<std::string, fs::path>> out;
  std::stringstream ss(get("inputs", "ood_images"));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    auto eq = item.find('=');
    out.emplace_back(item.substr(0, eq), item.substr(eq + 1));
  }
  return out;
}

void RunConfig::validate() const {
  mining().validate();
  filter().validate();
  scoring().validate();
  const double t = tpr_target();
  if (!(t > 0.0 && t <= 1.0)) fail(ErrorCode::invalid_argument, "eval.tpr_target must be in (0, 1]");
  const auto& embedder = get("providers", "embedder");
  if (embedder != "synthetic" && embedder != "lookup" && embedder != "remote") {
    fail(ErrorCode::invalid_argument, "providers.embedder must be synthetic, lookup or remote");
  }
  const auto& oracle = get("providers", "oracle");
  if (oracle != "scripted" && oracle != "remote") {
    fail(ErrorCode::invalid_argument, "providers.oracle must be scripted or remote");
  }
  if (parse_u64(get("providers", "embed_dim"), "providers.embed_dim") < 2) {
    fail(ErrorCode::invalid_argument, "providers.embed_dim must be >= 2");
  }
  parse_bool(get("providers", "compose"));
  parse_u64(get("providers", "embed_seed"), "providers.embed_seed");
  parse_u64(get("providers", "max_in_flight"), "providers.max_in_flight");
  parse_u64(get("providers", "retry_attempts"), "providers.retry_attempts");
  parse_u64(get("providers", "retry_base_ms"), "providers.retry_base_ms");
  allow_partial();
  std::set<std::string> names;
  for (const auto& [name, path] : ood_images()) {
    if (name.empty() || !names.insert(name).second) {
      fail(ErrorCode::invalid_argument, "ood_images names must be unique and non-empty");
    }
  }
}

}  // namespace negrefine
