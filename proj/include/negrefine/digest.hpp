#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace negrefine {

using Sha256 = std::array<std::uint8_t, 32>;

Sha256 sha256(std::span<const std::uint8_t> bytes);
Sha256 sha256(std::string_view text);
std::string to_hex(const Sha256& digest);
std::string sha256_hex(std::string_view text);

// Hex digest of a file's bytes. Throws io_failure if unreadable.
std::string sha256_file_hex(const std::filesystem::path& path);

// Incremental hasher for payloads that are produced piecewise.
class Sha256Stream {
 public:
  Sha256Stream();
  ~Sha256Stream();
  Sha256Stream(const Sha256Stream&) = delete;
  Sha256Stream& operator=(const Sha256Stream&) = delete;

  void update(const void* data, std::size_t size);
  void update(std::string_view text) { update(text.data(), text.size()); }
  Sha256 finish();

 private:
  void* ctx_;
};

}  // namespace negrefine
