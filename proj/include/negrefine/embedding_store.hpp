#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace negrefine {

// Dense row-major float matrix. Rows are embeddings.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

  std::span<const float> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  std::span<float> row(std::size_t i) { return {data.data() + i * cols, cols}; }
};

enum class EmbeddingKind { text, image };

const char* to_string(EmbeddingKind kind) noexcept;
EmbeddingKind parse_embedding_kind(const std::string& text);

// Labeled matrix of unit vectors. ids[i] names row i.
struct EmbeddingArchive {
  Matrix vectors;
  std::vector<std::string> ids;
  EmbeddingKind kind = EmbeddingKind::text;
  std::string model_tag;

  std::size_t rows() const noexcept { return vectors.rows; }
  std::size_t dim() const noexcept { return vectors.cols; }
  std::span<const float> row(std::size_t i) const { return vectors.row(i); }

  // Checks ids/rows agreement, unique ids, finite values and (optionally)
  // unit norm to 1e-4. Throws Error.
  void validate(bool require_unit_norm = true) const;

  // Returns the subset of rows whose index appears in `keep`, in that order.
  EmbeddingArchive select(std::span<const std::size_t> keep) const;
};

inline constexpr const char* kArchiveMagic = "NEGR1";
inline constexpr double kUnitNormTolerance = 1e-4;
inline constexpr double kDegenerateNorm = 1e-8;

// Rows whose norm differs from 1 by more than this are rescaled at load.
// Rows inside the band are kept bit-for-bit.
inline constexpr double kRenormalizeBand = 1e-6;

// Normalizes every row in place. Throws degenerate_row / non_finite_value.
void normalize_rows(Matrix& m);

// Archive directory layout: manifest, ids.txt, vectors.f32.
EmbeddingArchive load_archive(const std::filesystem::path& dir);
void save_archive(const EmbeddingArchive& archive, const std::filesystem::path& dir);

// Hash of manifest + ids.txt; identifies archive content without rereading
// the payload (the manifest carries the payload digest).
std::string archive_content_digest(const std::filesystem::path& dir);

double dot(std::span<const float> a, std::span<const float> b) noexcept;

// n x m block of cosine similarities between rows of a and rows of b.
struct SimilarityBlock {
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<double> values;
  std::vector<std::string> row_ids;
  std::vector<std::string> col_ids;

  double at(std::size_t i, std::size_t j) const { return values[i * m + j]; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * m, m}; }
};

SimilarityBlock similarity(const EmbeddingArchive& a, const EmbeddingArchive& b,
                           std::size_t workers = 0);

// Same computation on raw matrices; rows of a against rows of b.
std::vector<double> similarity_matrix(const Matrix& a, const Matrix& b, std::size_t workers = 0);

}  // namespace negrefine
