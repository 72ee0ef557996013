#pragma once

// BLAKE2b (RFC 7693) with arbitrary digest sizes 1..64 and optional key.
// The digest size is part of the parameter block, so BLAKE2b-2 is not a
// truncation of BLAKE2b-64.

#include <array>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <vector>

namespace crossfire {

class Blake2b {
 public:
  static constexpr std::size_t kBlockBytes = 128;
  static constexpr std::size_t kMaxDigest = 64;
  static constexpr std::size_t kMaxKey = 64;

  explicit Blake2b(std::size_t digest_size, std::span<const std::uint8_t> key = {})
      : digest_size_(digest_size) {
    if (digest_size == 0 || digest_size > kMaxDigest) {
      throw std::invalid_argument("Blake2b: digest size must be in [1,64]");
    }
    if (key.size() > kMaxKey) {
      throw std::invalid_argument("Blake2b: key longer than 64 bytes");
    }
    h_ = kIv;
    h_[0] ^= 0x01010000ULL ^ (static_cast<std::uint64_t>(key.size()) << 8) ^ digest_size;
    if (!key.empty()) {
      std::array<std::uint8_t, kBlockBytes> block{};
      std::memcpy(block.data(), key.data(), key.size());
      update(block);
    }
  }

  Blake2b& update(std::span<const std::uint8_t> data) {
    if (finalized_) throw std::logic_error("Blake2b: update after finalize");
    std::size_t i = 0;
    while (i < data.size()) {
      if (buf_len_ == kBlockBytes) {
        // Only compress a full buffer once more input is known to follow, so
        // the final block is always compressed with the last-block flag.
        add_counter(kBlockBytes);
        compress(false);
        buf_len_ = 0;
      }
      const std::size_t take = std::min(kBlockBytes - buf_len_, data.size() - i);
      std::memcpy(buf_.data() + buf_len_, data.data() + i, take);
      buf_len_ += take;
      i += take;
    }
    return *this;
  }

  std::vector<std::uint8_t> finalize() {
    if (finalized_) throw std::logic_error("Blake2b: finalize called twice");
    finalized_ = true;
    add_counter(buf_len_);
    std::memset(buf_.data() + buf_len_, 0, kBlockBytes - buf_len_);
    compress(true);
    std::vector<std::uint8_t> out(digest_size_);
    for (std::size_t i = 0; i < digest_size_; ++i) {
      out[i] = static_cast<std::uint8_t>(h_[i / 8] >> (8 * (i % 8)));
    }
    return out;
  }

  static std::vector<std::uint8_t> digest(std::span<const std::uint8_t> data,
                                          std::size_t digest_size) {
    return Blake2b(digest_size).update(data).finalize();
  }

  std::size_t digest_size() const noexcept { return digest_size_; }

 private:
  static constexpr std::array<std::uint64_t, 8> kIv = {
      0x6a09e667f3bcc908ULL, 0xbb67ae8584caa73bULL, 0x3c6ef372fe94f82bULL,
      0xa54ff53a5f1d36f1ULL, 0x510e527fade682d1ULL, 0x9b05688c2b3e6c1fULL,
      0x1f83d9abfb41bd6bULL, 0x5be0cd19137e2179ULL};

  static constexpr std::uint8_t kSigma[12][16] = {
      {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15},
      {14, 10, 4, 8, 9, 15, 13, 6, 1, 12, 0, 2, 11, 7, 5, 3},
      {11, 8, 12, 0, 5, 2, 15, 13, 10, 14, 3, 6, 7, 1, 9, 4},
      {7, 9, 3, 1, 13, 12, 11, 14, 2, 6, 5, 10, 4, 0, 15, 8},
      {9, 0, 5, 7, 2, 4, 10, 15, 14, 1, 11, 12, 6, 8, 3, 13},
      {2, 12, 6, 10, 0, 11, 8, 3, 4, 13, 7, 5, 15, 14, 1, 9},
      {12, 5, 1, 15, 14, 13, 4, 10, 0, 7, 6, 3, 9, 2, 8, 11},
      {13, 11, 7, 14, 12, 1, 3, 9, 5, 0, 15, 4, 8, 6, 2, 10},
      {6, 15, 14, 9, 11, 3, 0, 8, 12, 2, 13, 7, 1, 4, 10, 5},
      {10, 2, 8, 4, 7, 6, 1, 5, 15, 11, 9, 14, 3, 12, 13, 0},
      {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15},
      {14, 10, 4, 8, 9, 15, 13, 6, 1, 12, 0, 2, 11, 7, 5, 3}};

  static constexpr std::uint64_t rotr(std::uint64_t x, int n) noexcept {
    return (x >> n) | (x << (64 - n));
  }

  static std::uint64_t load64(const std::uint8_t* p) noexcept {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }

  void add_counter(std::size_t n) noexcept {
    t_[0] += n;
    if (t_[0] < n) ++t_[1];
  }

  void compress(bool last) noexcept {
    std::uint64_t m[16];
    for (int i = 0; i < 16; ++i) m[i] = load64(buf_.data() + 8 * i);
    std::uint64_t v[16];
    for (int i = 0; i < 8; ++i) {
      v[i] = h_[i];
      v[i + 8] = kIv[i];
    }
    v[12] ^= t_[0];
    v[13] ^= t_[1];
    if (last) v[14] = ~v[14];

    auto g = [&v](int a, int b, int c, int d, std::uint64_t x, std::uint64_t y) {
      v[a] = v[a] + v[b] + x;
      v[d] = rotr(v[d] ^ v[a], 32);
      v[c] = v[c] + v[d];
      v[b] = rotr(v[b] ^ v[c], 24);
      v[a] = v[a] + v[b] + y;
      v[d] = rotr(v[d] ^ v[a], 16);
      v[c] = v[c] + v[d];
      v[b] = rotr(v[b] ^ v[c], 63);
    };

    for (const auto& s : kSigma) {
      g(0, 4, 8, 12, m[s[0]], m[s[1]]);
      g(1, 5, 9, 13, m[s[2]], m[s[3]]);
      g(2, 6, 10, 14, m[s[4]], m[s[5]]);
      g(3, 7, 11, 15, m[s[6]], m[s[7]]);
      g(0, 5, 10, 15, m[s[8]], m[s[9]]);
      g(1, 6, 11, 12, m[s[10]], m[s[11]]);
      g(2, 7, 8, 13, m[s[12]], m[s[13]]);
      g(3, 4, 9, 14, m[s[14]], m[s[15]]);
    }
    for (int i = 0; i < 8; ++i) h_[i] ^= v[i] ^ v[i + 8];
  }

  std::size_t digest_size_;
  std::array<std::uint64_t, 8> h_{};
  std::array<std::uint64_t, 2> t_{};
  std::array<std::uint8_t, kBlockBytes> buf_{};
  std::size_t buf_len_ = 0;
  bool finalized_ = false;
};

/// Little-endian 64-bit two's-complement encoding of `v`.
inline std::array<std::uint8_t, 8> le64(std::int64_t v) noexcept {
  std::array<std::uint8_t, 8> out{};
  auto u = static_cast<std::uint64_t>(v);
  for (auto& b : out) {
    b = static_cast<std::uint8_t>(u & 0xff);
    u >>= 8;
  }
  return out;
}

}  // namespace crossfire
