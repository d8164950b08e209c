#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "negrefine/negfilter.hpp"
#include "negrefine/negmine.hpp"
#include "negrefine/scoring.hpp"

namespace negrefine {

// Sectioned key/value configuration:
//
//   # comment
//   [scoring]
//   alpha = 2
//
// Every key has a default; unknown sections or keys are rejected. Defaults
// are overlaid by NEGREFINE_* environment variables, then by a config file,
// then by explicit set() calls.
class RunConfig {
 public:
  RunConfig();

  static RunConfig load(const std::filesystem::path& file);

  // Parses `text` on top of the current values; relative paths resolve
  // against base_dir.
  void merge_text(const std::string& text, const std::filesystem::path& base_dir);

  // Relative path values resolve against the current working directory.
  void set(const std::string& section, const std::string& key, const std::string& value);
  const std::string& get(const std::string& section, const std::string& key) const;
  static bool known(const std::string& section, const std::string& key);

  // All values, one section per block; reloadable with load().
  std::string to_text() const;

  // Result-relevant values only, with every path replaced by a digest of the
  // content it names. Operational keys (output directory, worker counts,
  // endpoints, cache location, retry timing) are omitted.
  std::string canonical_text() const;
  std::string digest() const;

  // Canonical text restricted to the given "section.key" or "section.*"
  // selectors.
  std::string canonical_subset(const std::vector<std::string>& selectors) const;

  // Typed views.
  std::uint64_t seed() const;
  std::size_t workers() const;
  std::filesystem::path out_dir() const;
  MiningConfig mining() const;
  FilterConfig filter() const;
  bool filter_enabled() const;
  ScoreConfig scoring() const;
  double tpr_target() const;
  bool allow_partial() const;
  std::string prompt_template() const;
  std::vector<std::pair<std::string, std::filesystem::path>> ood_images() const;

  // Throws invalid_argument for unparsable or out-of-range values.
  void validate() const;

 private:
  std::map<std::string, std::map<std::string, std::string>> values_;
};

bool parse_bool(const std::string& text);
double parse_double(const std::string& text, const std::string& what);
std::uint64_t parse_u64(const std::string& text, const std::string& what);

}  // namespace negrefine
