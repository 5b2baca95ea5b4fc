#include "fperr/digest.hpp"

#include <array>
#include <cstring>

namespace fperr {

namespace {

constexpr std::array<uint32_t, 64> K = {
    0xd76aa478, 0xe8c7b756, 0x242070db, 0xc1bdceee, 0xf57c0faf, 0x4787c62a, 0xa8304613,
    0xfd469501, 0x698098d8, 0x8b44f7af, 0xffff5bb1, 0x895cd7be, 0x6b901122, 0xfd987193,
    0xa679438e, 0x49b40821, 0xf61e2562, 0xc040b340, 0x265e5a51, 0xe9b6c7aa, 0xd62f105d,
    0x02441453, 0xd8a1e681, 0xe7d3fbc8, 0x21e1cde6, 0xc33707d6, 0xf4d50d87, 0x455a14ed,
    0xa9e3e905, 0xfcefa3f8, 0x676f02d9, 0x8d2a4c8a, 0xfffa3942, 0x8771f681, 0x6d9d6122,
    0xfde5380c, 0xa4beea44, 0x4bdecfa9, 0xf6bb4b60, 0xbebfbc70, 0x289b7ec6, 0xeaa127fa,
    0xd4ef3085, 0x04881d05, 0xd9d4d039, 0xe6db99e5, 0x1fa27cf8, 0xc4ac5665, 0xf4292244,
    0x432aff97, 0xab9423a7, 0xfc93a039, 0x655b59c3, 0x8f0ccc92, 0xffeff47d, 0x85845dd1,
    0x6fa87e4f, 0xfe2ce6e0, 0xa3014314, 0x4e0811a1, 0xf7537e82, 0xbd3af235, 0x2ad7d2bb,
    0xeb86d391};

constexpr std::array<uint32_t, 64> S = {
    7, 12, 17, 22, 7, 12, 17, 22, 7, 12, 17, 22, 7, 12, 17, 22, 5, 9,  14, 20, 5, 9,
    14, 20, 5, 9,  14, 20, 5, 9,  14, 20, 4, 11, 16, 23, 4, 11, 16, 23, 4, 11, 16, 23,
    4, 11, 16, 23, 6, 10, 15, 21, 6, 10, 15, 21, 6, 10, 15, 21, 6, 10, 15, 21};

inline uint32_t rotl(uint32_t x, uint32_t c) { return (x << c) | (x >> (32 - c)); }

void process_block(const uint8_t* p, uint32_t h[4]) {
  uint32_t M[16];
  for (int i = 0; i < 16; ++i)
    M[i] = uint32_t(p[4 * i]) | uint32_t(p[4 * i + 1]) << 8 | uint32_t(p[4 * i + 2]) << 16 |
           uint32_t(p[4 * i + 3]) << 24;
  uint32_t A = h[0], B = h[1], C = h[2], D = h[3];
  for (uint32_t i = 0; i < 64; ++i) {
    uint32_t F, g;
    if (i < 16) { F = (B & C) | (~B & D); g = i; }
    else if (i < 32) { F = (D & B) | (~D & C); g = (5 * i + 1) % 16; }
    else if (i < 48) { F = B ^ C ^ D; g = (3 * i + 5) % 16; }
    else { F = C ^ (B | ~D); g = (7 * i) % 16; }
    F += A + K[i] + M[g];
    A = D;
    D = C;
    C = B;
    B += rotl(F, S[i]);
  }
  h[0] += A;
  h[1] += B;
  h[2] += C;
  h[3] += D;
}

}  // namespace

std::string md5_hex(const std::string& data) {
  uint32_t h[4] = {0x67452301, 0xefcdab89, 0x98badcfe, 0x10325476};
  const uint8_t* bytes = reinterpret_cast<const uint8_t*>(data.data());
  size_t n = data.size();
  size_t full = n / 64;
  for (size_t i = 0; i < full; ++i) process_block(bytes + 64 * i, h);

  uint8_t tail[128] = {0};
  size_t rem = n - full * 64;
  std::memcpy(tail, bytes + full * 64, rem);
  tail[rem] = 0x80;
  size_t tail_len = (rem < 56) ? 64 : 128;
  uint64_t bits = uint64_t(n) * 8;
  for (int i = 0; i < 8; ++i) tail[tail_len - 8 + i] = uint8_t(bits >> (8 * i));
  process_block(tail, h);
  if (tail_len == 128) process_block(tail + 64, h);

  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(32);
  for (uint32_t v : h)
    for (int i = 0; i < 4; ++i) {
      uint8_t b = uint8_t(v >> (8 * i));
      out.push_back(hex[b >> 4]);
      out.push_back(hex[b & 15]);
    }
  return out;
}

}  // namespace fperr
