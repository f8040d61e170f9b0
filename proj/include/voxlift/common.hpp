#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace voxlift {

using Index = Eigen::Index;

template <class S> using Vec2 = Eigen::Matrix<S, 2, 1>;
template <class S> using Vec3 = Eigen::Matrix<S, 3, 1>;
template <class S> using Mat3 = Eigen::Matrix<S, 3, 3>;
template <class S> using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
// Row-major so that one row = one voxel/pixel record sits contiguously.
template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Vec2d = Vec2<double>;
using Vec3d = Vec3<double>;
using Mat3d = Mat3<double>;
using VecXd = VecX<double>;
using MatXd = MatX<double>;

// Norm below which a direction vector is treated as "no direction".
inline constexpr double kNormalNormFloor = 1e-8;

// ---------------------------------------------------------------------------
// Deterministic random streams.
//
// Every random draw in the project flows from one root seed through named
// sub-streams, so a config seed fully pins all artifacts.

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_name(std::string_view name) {
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

// Seed for a named child stream; indexes give families of streams.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view name,
                                 std::uint64_t index = 0) {
  std::uint64_t s = root ^ hash_name(name) ^
                    (0x9e3779b97f4a7c15ull * (index + 1));
  splitmix64(s);
  return splitmix64(s);
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : gen_(seed) {}

  // Stream derived from (root seed, name); independent of draw order elsewhere.
  static RngStream substream(std::uint64_t root, std::string_view name) {
    std::uint64_t s = root ^ hash_name(name);
    splitmix64(s);
    return RngStream(splitmix64(s));
  }

  static RngStream substream(std::uint64_t root, std::string_view name,
                             std::uint64_t index) {
    std::uint64_t s = root ^ hash_name(name);
    s ^= 0x9e3779b97f4a7c15ull * (index + 1);
    splitmix64(s);
    return RngStream(splitmix64(s));
  }

  std::uint64_t bits() { return gen_(); }

  // Uniform in [0, 1), 53-bit resolution; portable across stdlib versions.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [lo, hi]. Modulo bias is irrelevant at the span sizes used here.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(gen_() % span);
  }

  // Standard normal via Box-Muller (deterministic, no stdlib distribution).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// ---------------------------------------------------------------------------
// Logging. VOXLIFT_LOG = 0 (errors) .. 3 (debug); default 1.

enum class LogLevel : int { error = 0, warn = 1, info = 2, debug = 3 };

inline int log_verbosity() {
  static const int level = [] {
    const char* env = std::getenv("VOXLIFT_LOG");
    if (!env) return 1;
    return std::atoi(env);
  }();
  return level;
}

inline void log_msg(LogLevel level, const std::string& msg) {
  if (static_cast<int>(level) > log_verbosity()) return;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::cerr << "[voxlift:" << names[static_cast<int>(level)] << "] " << msg
            << "\n";
}

// ---------------------------------------------------------------------------
// Parallel helper. Ranges are contiguous, writes must be disjoint per index;
// output is then identical for any thread count.

inline void parallel_for(Index n, int threads,
                         const std::function<void(Index, Index)>& body) {
  if (n <= 0) return;
  if (threads <= 1 || n < 2) {
    body(0, n);
    return;
  }
  const int t = static_cast<int>(std::min<Index>(threads, n));
  std::vector<std::thread> pool;
  pool.reserve(t);
  const Index chunk = (n + t - 1) / t;
  for (int w = 0; w < t; ++w) {
    const Index lo = w * chunk;
    const Index hi = std::min<Index>(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

inline bool nearly_equal(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace voxlift
