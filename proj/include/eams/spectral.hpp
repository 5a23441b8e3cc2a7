#pragma once

#include <Eigen/Sparse>

#include "eams/mesh.hpp"

namespace eams {

/// Diagonal regularisation added to the stiffness diagonal; keeps the
/// operator positive definite without cotangent clamping.
inline constexpr double kLbDiagRegularization = 1e-9;

struct LaplaceBeltrami {
  Eigen::SparseMatrix<double> stiffness;  // W, symmetric; row sums ~ delta
  Eigen::VectorXd mass;                   // lumped barycentric vertex areas
};

/// Cotangent stiffness with barycentric lumped mass. Interior edges get
/// -(cot a + cot b)/2, boundary edges half of that (single face).
LaplaceBeltrami assemble_lb(const Mesh& mesh, const FaceGeometry& geometry);

struct SpectralBasis {
  Eigen::VectorXd eigenvalues;   // ascending, nonnegative up to regularisation
  Eigen::MatrixXd eigenvectors;  // N x K, M-orthonormal
  int k_requested = 0;
  double solver_tol = 0.0;
};

/// Smallest-k eigenpairs of W phi = lambda M phi via shift-invert subspace
/// iteration on the symmetrised operator M^{-1/2} W M^{-1/2}. Columns are
/// M-orthonormal with a deterministic sign convention. Throws NoConvergence
/// after max_sweeps (default 50*k) sweeps.
SpectralBasis eig_smallest(const LaplaceBeltrami& lb, int k = 64, double tol = 1e-8,
                           int max_sweeps = -1);

/// Log-spaced times over [4 ln 10 / lambda_K, 4 ln 10 / lambda_2].
Eigen::VectorXd hks_time_scales(const SpectralBasis& basis, int n_times);

/// HKS(i,t) = sum_k exp(-lambda_k t) phi_k(i)^2 at n_times log-spaced scales;
/// z-scored per column when normalize is set.
Eigen::MatrixXd hks(const SpectralBasis& basis, int n_times = 8, bool normalize = true);

inline constexpr int kSpectralCacheVersion = 1;

/// Cache layout: <cache_dir>/<mesh_id>/{manifest.json,eigenvalues.f64,
/// eigenvectors.f64}; arrays are little-endian 64-bit reals, eigenvectors
/// column-major. Writes go through a temp directory and an atomic rename.
void write_spectral_cache(const std::string& cache_dir, const std::string& mesh_id,
                          std::uint64_t mesh_hash, const SpectralBasis& basis);

/// Throws CacheVersionMismatch on version/corruption problems and
/// HashMismatch when the stored mesh hash differs from expected_hash.
SpectralBasis read_spectral_cache(const std::string& cache_dir, const std::string& mesh_id,
                                  std::uint64_t expected_hash);

bool has_spectral_cache(const std::string& cache_dir, const std::string& mesh_id);

}  // namespace eams
