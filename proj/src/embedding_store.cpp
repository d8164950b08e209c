#include "negrefine/embedding_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include "negrefine/digest.hpp"
#include "negrefine/error.hpp"
#include "parallel.hpp"

namespace negrefine {

namespace fs = std::filesystem;

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

const char* to_string(EmbeddingKind kind) noexcept {
  return kind == EmbeddingKind::text ? "text" : "image";
}

EmbeddingKind parse_embedding_kind(const std::string& text) {
  if (text == "text") return EmbeddingKind::text;
  if (text == "image") return EmbeddingKind::image;
  fail(ErrorCode::malformed_header, "unknown archive kind '" + text + "'");
}

double dot(std::span<const float> a, std::span<const float> b) noexcept {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += double(a[i]) * double(b[i]);
  return acc;
}

void normalize_rows(Matrix& m) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto row = m.row(r);
    double sq = 0.0;
    for (float v : row) {
      if (!std::isfinite(v)) {
        fail(ErrorCode::non_finite_value, "row " + std::to_string(r) + " contains NaN/Inf");
      }
      sq += double(v) * double(v);
    }
    double norm = std::sqrt(sq);
    if (norm < kDegenerateNorm) {
      fail(ErrorCode::degenerate_row, "row " + std::to_string(r) + " has zero norm");
    }
    if (std::abs(norm - 1.0) <= kRenormalizeBand) continue;
    for (float& v : row) v = static_cast<float>(double(v) / norm);
  }
}

void EmbeddingArchive::validate(bool require_unit_norm) const {
  if (vectors.data.size() != vectors.rows * vectors.cols) {
    fail(ErrorCode::dimension_mismatch, "payload size does not match rows x dim");
  }
  if (ids.size() != vectors.rows) {
    fail(ErrorCode::dimension_mismatch, "ids count " + std::to_string(ids.size()) +
                                            " != rows " + std::to_string(vectors.rows));
  }
  if (vectors.cols == 0) fail(ErrorCode::dimension_mismatch, "dim must be positive");
  std::unordered_set<std::string> seen;
  for (const auto& id : ids) {
    if (id.find_first_of("\n\r\t") != std::string::npos) {
      fail(ErrorCode::invalid_argument, "id contains a control separator: '" + id + "'");
    }
    if (!seen.insert(id).second) fail(ErrorCode::duplicate_id, "duplicate id '" + id + "'");
  }
  for (std::size_t r = 0; r < rows(); ++r) {
    double sq = 0.0;
    for (float v : row(r)) {
      if (!std::isfinite(v)) {
        fail(ErrorCode::non_finite_value, "row " + std::to_string(r) + " contains NaN/Inf");
      }
      sq += double(v) * double(v);
    }
    if (require_unit_norm && std::abs(std::sqrt(sq) - 1.0) > kUnitNormTolerance) {
      fail(ErrorCode::invalid_argument, "row " + std::to_string(r) + " is not unit norm");
    }
  }
}

EmbeddingArchive EmbeddingArchive::select(std::span<const std::size_t> keep) const {
  EmbeddingArchive out;
  out.kind = kind;
  out.model_tag = model_tag;
  out.vectors = Matrix(keep.size(), dim());
  out.ids.reserve(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    auto src = row(keep[i]);
    std::copy(src.begin(), src.end(), out.vectors.row(i).begin());
    out.ids.push_back(ids[keep[i]]);
  }
  return out;
}

namespace {

std::string payload_bytes(const Matrix& m) {
  std::string bytes(m.data.size() * 4, '\0');
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(bytes.data(), m.data.data(), bytes.size());
  } else {
    for (std::size_t i = 0; i < m.data.size(); ++i) {
      auto u = std::bit_cast<std::uint32_t>(m.data[i]);
      for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((u >> (8 * b)) & 0xFF);
    }
  }
  return bytes;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorCode::io_failure, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, std::string_view bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io_failure, "cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) fail(ErrorCode::io_failure, "short write to " + p.string());
}

std::map<std::string, std::string> parse_manifest(const std::string& text) {
  std::map<std::string, std::string> fields;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto colon = line.find(':');
    if (colon == std::string::npos) fail(ErrorCode::malformed_header, "manifest line without ':'");
    std::string key = line.substr(0, colon);
    std::string value = line.substr(colon + 1);
    if (!value.empty() && value.front() == ' ') value.erase(0, 1);
    fields[key] = value;
  }
  return fields;
}

std::size_t parse_count(const std::map<std::string, std::string>& f, const std::string& key) {
  auto it = f.find(key);
  if (it == f.end()) fail(ErrorCode::malformed_header, "manifest missing '" + key + "'");
  try {
    std::size_t pos = 0;
    long long v = std::stoll(it->second, &pos);
    if (pos != it->second.size() || v < 0) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    fail(ErrorCode::malformed_header, "manifest field '" + key + "' is not a count");
  }
}

}  // namespace

void save_archive(const EmbeddingArchive& archive, const fs::path& dir) {
  archive.validate(false);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io_failure, "cannot create " + dir.string() + ": " + ec.message());

  std::string payload = payload_bytes(archive.vectors);
  std::string ids;
  for (const auto& id : archive.ids) ids += id + "\n";

  std::ostringstream manifest;
  manifest << "magic: " << kArchiveMagic << "\n"
           << "dim: " << archive.dim() << "\n"
           << "rows: " << archive.rows() << "\n"
           << "kind: " << to_string(archive.kind) << "\n"
           << "model_tag: " << archive.model_tag << "\n"
           << "payload_sha256: " << sha256_hex(payload) << "\n";

  write_file(dir / "vectors.f32", payload);
  write_file(dir / "ids.txt", ids);
  write_file(dir / "manifest", manifest.str());
}

EmbeddingArchive load_archive(const fs::path& dir) {
  if (!fs::exists(dir / "manifest")) {
    fail(ErrorCode::malformed_header, "no manifest in " + dir.string());
  }
  auto fields = parse_manifest(read_file(dir / "manifest"));
  if (fields["magic"] != kArchiveMagic) {
    fail(ErrorCode::malformed_header, "bad magic in " + dir.string());
  }
  const std::size_t dim = parse_count(fields, "dim");
  const std::size_t rows = parse_count(fields, "rows");
  if (dim == 0) fail(ErrorCode::malformed_header, "dim must be positive");

  EmbeddingArchive a;
  a.kind = parse_embedding_kind(fields["kind"]);
  a.model_tag = fields["model_tag"];

  std::string payload = read_file(dir / "vectors.f32");
  if (payload.size() != rows * dim * 4) {
    fail(ErrorCode::dimension_mismatch,
         "payload holds " + std::to_string(payload.size()) + " bytes, manifest implies " +
             std::to_string(rows * dim * 4));
  }
  if (auto it = fields.find("payload_sha256");
      it != fields.end() && !it->second.empty() && it->second != sha256_hex(payload)) {
    fail(ErrorCode::checksum_mismatch, "payload checksum mismatch in " + dir.string());
  }

  a.vectors = Matrix(rows, dim);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(a.vectors.data.data(), payload.data(), payload.size());
  } else {
    for (std::size_t i = 0; i < rows * dim; ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= std::uint32_t(std::uint8_t(payload[i * 4 + b])) << (8 * b);
      a.vectors.data[i] = std::bit_cast<float>(u);
    }
  }

  std::istringstream ids(read_file(dir / "ids.txt"));
  std::string line;
  while (std::getline(ids, line)) a.ids.push_back(line);
  if (a.ids.size() != rows) {
    fail(ErrorCode::dimension_mismatch, "ids.txt has " + std::to_string(a.ids.size()) +
                                            " lines, manifest declares " + std::to_string(rows));
  }

  normalize_rows(a.vectors);
  a.validate(true);
  return a;
}

std::string archive_content_digest(const fs::path& dir) {
  Sha256Stream s;
  s.update(read_file(dir / "manifest"));
  s.update("\n--ids--\n");
  s.update(read_file(dir / "ids.txt"));
  return to_hex(s.finish());
}

std::vector<double> similarity_matrix(const Matrix& a, const Matrix& b, std::size_t workers) {
  if (a.cols != b.cols) {
    fail(ErrorCode::dimension_mismatch,
         "dim " + std::to_string(a.cols) + " vs " + std::to_string(b.cols));
  }
  std::vector<double> out(a.rows * b.rows);
  constexpr std::size_t kBlock = 64;
  const std::size_t blocks = (a.rows + kBlock - 1) / kBlock;
  // Each entry depends only on its own pair of rows, so any block schedule
  // yields identical output.
  detail::parallel_for(blocks, workers, [&](std::size_t blk) {
    const std::size_t lo = blk * kBlock;
    const std::size_t hi = std::min(a.rows, lo + kBlock);
    for (std::size_t i = lo; i < hi; ++i) {
      auto ai = a.row(i);
      for (std::size_t j = 0; j < b.rows; ++j) out[i * b.rows + j] = dot(ai, b.row(j));
    }
  });
  return out;
}

SimilarityBlock similarity(const EmbeddingArchive& a, const EmbeddingArchive& b,
                           std::size_t workers) {
  SimilarityBlock s;
  s.n = a.rows();
  s.m = b.rows();
  s.values = similarity_matrix(a.vectors, b.vectors, workers);
  s.row_ids = a.ids;
  s.col_ids = b.ids;
  return s;
}

}  // namespace negrefine
