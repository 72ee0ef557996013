#include <gtest/gtest.h>

#include <random>
#include <string>
#include <vector>

#include "crossfire/blake2b.hpp"

using crossfire::Blake2b;
using crossfire::le64;

namespace {

std::vector<std::uint8_t> bytes(const std::string& s) { return {s.begin(), s.end()}; }

std::string hex(std::span<const std::uint8_t> d) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (auto b : d) {
    out += digits[b >> 4];
    out += digits[b & 15];
  }
  return out;
}

std::string digest_hex(const std::vector<std::uint8_t>& data, std::size_t d) {
  return hex(Blake2b::digest(data, d));
}

}  // namespace

// Reference values produced by Python's hashlib.blake2b.
TEST(Blake2b, ReferenceVectorsFullWidth) {
  EXPECT_EQ(digest_hex(bytes("abc"), 64),
            "ba80a53f981c4d0d6a2797b69f12f6e94c212f14685ac4b74b12bb6fdbffa2d1"
            "7d87c5392aab792dc252d5de4533cc9518d38aa8dbf1925ab92386edd4009923");
}

TEST(Blake2b, ReferenceVectorsShortDigests) {
  EXPECT_EQ(digest_hex({}, 1), "2e");
  EXPECT_EQ(digest_hex(bytes("abc"), 1), "6b");
  EXPECT_EQ(digest_hex({}, 2), "b1fe");
  EXPECT_EQ(digest_hex(bytes("abc"), 2), "ae1e");
  EXPECT_EQ(digest_hex({}, 4), "1271cf25");
  EXPECT_EQ(digest_hex(bytes("abc"), 4), "63906248");
  EXPECT_EQ(digest_hex({}, 8), "e4a6a0577479b2b4");
  EXPECT_EQ(digest_hex(bytes("abc"), 8), "d8bb14d833d59559");
}

TEST(Blake2b, ReferenceVectorsMultiBlock) {
  std::vector<std::uint8_t> data;
  for (int rep = 0; rep < 5; ++rep) {
    for (int i = 0; i < 256; ++i) data.push_back(static_cast<std::uint8_t>(i));
  }
  EXPECT_EQ(digest_hex(data, 4), "cc4991cc");
  EXPECT_EQ(digest_hex(data, 64),
            "a86b784c748f990b998e6d30d71e20cc95228d2b08dd85e29f63e4de8d8839bd"
            "f935f4291537af5014fe44c0b578a073e4c9217c7b05542d0c450784c30bac8a");
}

TEST(Blake2b, ReferenceVectorKeyed) {
  const auto key = bytes("secret");
  Blake2b h(16, key);
  h.update(bytes("abc"));
  EXPECT_EQ(hex(h.finalize()), "b728f0c8cb10089e9c7b3549c0cdea97");
}

TEST(Blake2b, ReferenceVectorsLe64Sums) {
  auto sum_hex = [](std::int64_t v, std::size_t d) {
    const auto enc = le64(v);
    return hex(Blake2b::digest(enc, d));
  };
  EXPECT_EQ(sum_hex(0, 2), "4e56");
  EXPECT_EQ(sum_hex(-3, 2), "9823");
  EXPECT_EQ(sum_hex(136, 2), "6b59");
  EXPECT_EQ(sum_hex(-200000, 2), "318e");
  EXPECT_EQ(sum_hex(0, 1), "88");
  EXPECT_EQ(sum_hex(-3, 1), "f8");
  EXPECT_EQ(sum_hex(136, 1), "95");
  EXPECT_EQ(sum_hex(-200000, 1), "63");
}

TEST(Blake2b, Le64Encoding) {
  const auto a = le64(-3);
  EXPECT_EQ(a[0], 0xfd);
  for (int i = 1; i < 8; ++i) EXPECT_EQ(a[i], 0xff);
  const auto b = le64(0x0102);
  EXPECT_EQ(b[0], 0x02);
  EXPECT_EQ(b[1], 0x01);
  EXPECT_EQ(b[2], 0x00);
}

TEST(Blake2b, RejectsInvalidParameters) {
  EXPECT_THROW(Blake2b(0), std::invalid_argument);
  EXPECT_THROW(Blake2b(65), std::invalid_argument);
  std::vector<std::uint8_t> long_key(65, 1);
  EXPECT_THROW(Blake2b(8, long_key), std::invalid_argument);
  Blake2b h(4);
  h.finalize();
  EXPECT_THROW(h.finalize(), std::logic_error);
  EXPECT_THROW(h.update(bytes("x")), std::logic_error);
}

TEST(Blake2b, StreamingMatchesOneShotProperty) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::uint8_t> data(rng() % 700);
    for (auto& b : data) b = static_cast<std::uint8_t>(rng());
    const std::size_t d = 1 + rng() % 64;
    Blake2b h(d);
    std::size_t i = 0;
    while (i < data.size()) {
      const std::size_t take = std::min<std::size_t>(data.size() - i, rng() % 200);
      h.update(std::span<const std::uint8_t>(data).subspan(i, take));
      i += take;
    }
    EXPECT_EQ(h.finalize(), Blake2b::digest(data, d));
  }
}

TEST(Blake2b, DigestSizeIsPartOfParameterBlock) {
  const auto d2 = Blake2b::digest(bytes("abc"), 2);
  const auto d64 = Blake2b::digest(bytes("abc"), 64);
  EXPECT_NE(d2[0], d64[0]);
}
