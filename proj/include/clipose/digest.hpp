#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "clipose/tensor.hpp"

namespace clipose {

/// Incremental SHA-256, hex-encoded on finish().
class Digest {
 public:
  Digest();
  ~Digest();
  Digest(const Digest&) = delete;
  Digest& operator=(const Digest&) = delete;

  Digest& update(std::span<const unsigned char> bytes);
  Digest& update(std::string_view text);
  Digest& update(const Tensor& tensor);
  std::string finish();

 private:
  void* ctx_;
};

std::string sha256_hex(std::string_view text);
std::string file_sha256(const std::filesystem::path& path);
std::string tensor_sha256(const Tensor& tensor);

}  // namespace clipose
