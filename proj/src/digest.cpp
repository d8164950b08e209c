#include "negrefine/digest.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <vector>

#include "negrefine/error.hpp"

namespace negrefine {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::io_failure: return "IoFailure";
    case ErrorCode::malformed_header: return "MalformedHeader";
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
    case ErrorCode::duplicate_id: return "DuplicateId";
    case ErrorCode::non_finite_value: return "NonFiniteValue";
    case ErrorCode::degenerate_row: return "DegenerateRow";
    case ErrorCode::checksum_mismatch: return "ChecksumMismatch";
    case ErrorCode::empty_input: return "EmptyInput";
    case ErrorCode::empty_pool: return "EmptyPool";
    case ErrorCode::transport: return "Transport";
    case ErrorCode::protocol_violation: return "ProtocolViolation";
    case ErrorCode::unparseable: return "Unparseable";
    case ErrorCode::config_digest_mismatch: return "ConfigDigestMismatch";
    case ErrorCode::partial_results: return "PartialResults";
    case ErrorCode::stage_failure: return "StageFailure";
  }
  return "Unknown";
}

Sha256Stream::Sha256Stream() : ctx_(EVP_MD_CTX_new()) {
  if (ctx_ == nullptr ||
      EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr) != 1) {
    fail(ErrorCode::io_failure, "sha256: failed to initialise digest context");
  }
}

Sha256Stream::~Sha256Stream() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

void Sha256Stream::update(const void* data, std::size_t size) {
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, size);
}

Sha256 Sha256Stream::finish() {
  Sha256 out{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), out.data(), &len);
  return out;
}

Sha256 sha256(std::span<const std::uint8_t> bytes) {
  Sha256Stream s;
  s.update(bytes.data(), bytes.size());
  return s.finish();
}

Sha256 sha256(std::string_view text) {
  Sha256Stream s;
  s.update(text);
  return s.finish();
}

std::string to_hex(const Sha256& digest) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(64);
  for (auto b : digest) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

std::string sha256_hex(std::string_view text) { return to_hex(sha256(text)); }

std::string sha256_file_hex(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io_failure, "cannot read " + path.string());
  Sha256Stream s;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    s.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return to_hex(s.finish());
}

}  // namespace negrefine
