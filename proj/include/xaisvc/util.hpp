#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <mutex>
#include <random>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "xaisvc/error.hpp"

namespace xaisvc {

using json = nlohmann::json;

/// Canonical JSON text: sorted keys (nlohmann objects are ordered maps), no
/// whitespace, shortest round-trip number formatting.
inline std::string canonical_dump(const json& j) { return j.dump(); }

inline std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::InvalidArgument, "sha256 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

inline std::string content_hash(const json& payload) { return sha256_hex(canonical_dump(payload)); }

/// UTC RFC-3339 timestamp with millisecond precision.
inline std::string rfc3339_utc(std::chrono::system_clock::time_point tp) {
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(tp.time_since_epoch()).count();
  std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms % 1000));
  return out;
}

inline std::string now_rfc3339() { return rfc3339_utc(std::chrono::system_clock::now()); }

/// Lowercase slug ids: [a-z0-9-]+.
inline bool is_slug(std::string_view id) {
  if (id.empty() || id.size() > 128) return false;
  for (char c : id) {
    if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-')) return false;
  }
  return true;
}

inline void require_slug(std::string_view id, std::string_view what) {
  if (!is_slug(id)) {
    throw Error(ErrorCode::InvalidId, std::string(what) + " id must match [a-z0-9-]+", {{"id", std::string(id)}});
  }
}

/// Sortable 26-character identifiers (48-bit millisecond time + 80 random
/// bits, Crockford base32). Ids minted within the same millisecond increment
/// the random part so generation order equals lexical order.
class UlidGenerator {
 public:
  UlidGenerator() : rng_(std::random_device{}()) {}

  std::string next() {
    std::lock_guard lk(mu_);
    const auto now = static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
            .count());
    if (now <= last_ms_) {
      // Same (or earlier) millisecond: bump the random tail.
      if (++lo_ == 0) ++hi_;
    } else {
      last_ms_ = now;
      hi_ = static_cast<std::uint16_t>(rng_());
      lo_ = rng_() & 0x7FFFFFFFFFFFFFFFULL;
    }
    return encode(last_ms_, hi_, lo_);
  }

 private:
  static std::string encode(std::uint64_t ms, std::uint16_t hi, std::uint64_t lo) {
    static constexpr char alphabet[] = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";
    std::string out(26, '0');
    for (int i = 9; i >= 0; --i) {
      out[i] = alphabet[ms & 31];
      ms >>= 5;
    }
    // 80 random bits: 16 from hi, 64 from lo, emitted as 16 base32 digits.
    for (int i = 25; i >= 10; --i) {
      out[i] = alphabet[lo & 31];
      lo = (lo >> 5) | (static_cast<std::uint64_t>(hi & 31) << 59);
      hi >>= 5;
    }
    return out;
  }

  std::mutex mu_;
  std::mt19937_64 rng_;
  std::uint64_t last_ms_ = 0;
  std::uint16_t hi_ = 0;
  std::uint64_t lo_ = 0;
};

/// Deterministic seeded randomness. Distributions are derived by hand from
/// the raw engine output because std:: distributions are not specified
/// bit-for-bit across standard libraries.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }

 private:
  std::mt19937_64 engine_;
};

/// SplitMix64 step, used to derive independent per-item seeds.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace xaisvc
