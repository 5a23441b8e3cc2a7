#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace eams {

// Typed failures raised by the pipeline. Anything not caught by a caller
// aborts the run with the carried message.
struct EmptyMesh : std::runtime_error { using std::runtime_error::runtime_error; };
struct ZeroNormal : std::runtime_error { using std::runtime_error::runtime_error; };
struct MissingAnnotation : std::runtime_error { using std::runtime_error::runtime_error; };
struct NotOrthogonal : std::runtime_error { using std::runtime_error::runtime_error; };
struct DegenerateSpectrum : std::runtime_error { using std::runtime_error::runtime_error; };
struct CacheVersionMismatch : std::runtime_error { using std::runtime_error::runtime_error; };
struct HashMismatch : std::runtime_error { using std::runtime_error::runtime_error; };
struct MissingCache : std::runtime_error { using std::runtime_error::runtime_error; };
struct DimensionMismatch : std::runtime_error { using std::runtime_error::runtime_error; };
struct ShapeMismatch : std::runtime_error { using std::runtime_error::runtime_error; };
struct IndexOutOfRange : std::runtime_error { using std::runtime_error::runtime_error; };
struct ConfigMismatch : std::runtime_error { using std::runtime_error::runtime_error; };
struct EmptyTargets : std::runtime_error { using std::runtime_error::runtime_error; };
struct MissingPart : std::runtime_error { using std::runtime_error::runtime_error; };
struct NonFiniteGradient : std::runtime_error { using std::runtime_error::runtime_error; };
struct NonFiniteValue : std::runtime_error { using std::runtime_error::runtime_error; };
struct TooFewMeshes : std::runtime_error { using std::runtime_error::runtime_error; };
struct UnsupportedFormat : std::runtime_error { using std::runtime_error::runtime_error; };
struct LengthMismatch : std::runtime_error { using std::runtime_error::runtime_error; };
struct UnknownColor : std::runtime_error { using std::runtime_error::runtime_error; };

struct NoConvergence : std::runtime_error {
  int iterations = 0;
  explicit NoConvergence(const std::string& what, int iters)
      : std::runtime_error(what), iterations(iters) {}
};

struct ParseError : std::runtime_error {
  int line = 0;
  explicit ParseError(const std::string& what, int line_no)
      : std::runtime_error(what + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
};

// FNV-1a, used both for content hashing and for deriving RNG stream seeds.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Independent, reproducible RNG streams: one master seed fans out into named
// per-purpose streams, so resuming at epoch e re-derives the exact sequence.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0) {
  std::uint64_t h = fnv1a64(stream.data(), stream.size());
  h = splitmix64(h ^ splitmix64(seed));
  return splitmix64(h ^ (index * 0x9e3779b97f4a7c15ull + 1));
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0) {
  return std::mt19937_64(derive_seed(seed, stream, index));
}

// Platform-independent uniforms (std::uniform_real_distribution is
// implementation-defined, which would break bit-exact reproducibility).
inline double uniform_unit(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform_in(std::mt19937_64& g, double lo, double hi) {
  return lo + (hi - lo) * uniform_unit(g);
}

inline double normal_sample(std::mt19937_64& g) {
  // Box-Muller on explicit uniforms, again for cross-platform determinism.
  double u1 = uniform_unit(g);
  double u2 = uniform_unit(g);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline int uniform_index(std::mt19937_64& g, int n) {
  return static_cast<int>(uniform_unit(g) * n) % n;
}

}  // namespace eams
