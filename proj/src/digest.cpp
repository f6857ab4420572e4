#include "clipose/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstring>
#include <fstream>

#include "clipose/errors.hpp"

namespace clipose {

Digest::Digest() : ctx_(EVP_MD_CTX_new()) {
  if (!ctx_ || EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 initialisation failed");
  }
}

Digest::~Digest() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

Digest& Digest::update(std::span<const unsigned char> bytes) {
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), bytes.data(), bytes.size());
  return *this;
}

Digest& Digest::update(std::string_view text) {
  return update(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

Digest& Digest::update(const Tensor& tensor) {
  for (std::size_t d : tensor.shape()) {
    const auto dim = static_cast<std::uint64_t>(d);
    update(std::span(reinterpret_cast<const unsigned char*>(&dim), sizeof dim));
  }
  const auto v = tensor.values();
  return update(std::span(reinterpret_cast<const unsigned char*>(v.data()), v.size_bytes()));
}

std::string Digest::finish() {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), md.data(), &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xf]);
  }
  return out;
}

std::string sha256_hex(std::string_view text) { return Digest().update(text).finish(); }

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  Digest d;
  std::array<char, 1 << 15> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    d.update(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
  }
  return d.finish();
}

std::string tensor_sha256(const Tensor& tensor) { return Digest().update(tensor).finish(); }

}  // namespace clipose
