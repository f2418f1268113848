#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace snid {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based child seed: the same (master, stream, index) always maps to
/// the same seed, regardless of the order in which children are requested.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                 std::uint64_t index = 0) {
  return splitmix64(splitmix64(splitmix64(master) ^ stream) + index);
}

/// Named streams for the pipeline stages.
namespace stream {
inline constexpr std::uint64_t teacher = 1;
inline constexpr std::uint64_t hessian = 2;
inline constexpr std::uint64_t spm = 3;
inline constexpr std::uint64_t refine = 4;
inline constexpr std::uint64_t eval = 5;
inline constexpr std::uint64_t baseline = 6;
inline constexpr std::uint64_t diagnostics = 7;
inline constexpr std::uint64_t study = 8;
}  // namespace stream

inline Eigen::VectorXd gaussian_vector(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

/// Columns i.i.d. standard Gaussian.
inline Eigen::MatrixXd gaussian_matrix(Rng& rng, Eigen::Index rows,
                                       Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd a(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) a(i, j) = normal(rng);
  return a;
}

/// Uniform on the unit sphere via a normalized Gaussian.
inline Eigen::VectorXd sphere_vector(Rng& rng, Eigen::Index n) {
  for (;;) {
    Eigen::VectorXd v = gaussian_vector(rng, n);
    const double norm = v.norm();
    if (norm > 0.0) return v / norm;
  }
}

inline Eigen::MatrixXd sphere_columns(Rng& rng, Eigen::Index rows,
                                      Eigen::Index cols) {
  Eigen::MatrixXd w(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) w.col(j) = sphere_vector(rng, rows);
  return w;
}

}  // namespace snid
