#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "eams/io.hpp"
#include "eams/spectral.hpp"
#include "oracles.hpp"

using namespace eams;
namespace fs = std::filesystem;

namespace {

Mesh equilateral_triangle() {
  Mesh m;
  m.vertices.resize(3, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 0.5, std::sqrt(3.0) / 2.0, 0;
  m.faces.resize(1, 3);
  m.faces << 0, 1, 2;
  return m;
}

Mesh jittered_sphere(int level, std::uint64_t seed) {
  SynthParams p;
  p.level = level;
  p.bump_amplitude = 0.0;
  p.jitter = 0.03;
  return synth_mesh(SynthKind::icosphere_cap, p, seed);
}

}  // namespace

TEST_CASE("cotangent weights on the unit equilateral triangle") {
  Mesh m = equilateral_triangle();
  LaplaceBeltrami lb = assemble_lb(m, face_geometry(m));
  // cot(60 deg)/2 = 1/(2 sqrt 3) on every (boundary) edge.
  const double expected = -1.0 / (2.0 * std::sqrt(3.0));
  Eigen::MatrixXd dense(lb.stiffness);
  CHECK(dense(0, 1) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(dense(1, 2) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(dense(0, 2) == doctest::Approx(expected).epsilon(1e-12));
  // Lumped mass: one third of the face area per vertex.
  const double area = std::sqrt(3.0) / 4.0;
  for (int i = 0; i < 3; ++i) CHECK(lb.mass[i] == doctest::Approx(area / 3.0).epsilon(1e-12));

  // Independent dense assembly oracle.
  Eigen::MatrixXd w_oracle;
  Eigen::VectorXd m_oracle;
  oracle::dense_laplacian(m, w_oracle, m_oracle, kLbDiagRegularization);
  CHECK((dense - w_oracle).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((lb.mass - m_oracle).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("stiffness annihilates constants up to the regularisation") {
  Mesh m = jittered_sphere(2, 1);
  LaplaceBeltrami lb = assemble_lb(m, face_geometry(m));
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(m.n_vertices());
  CHECK((lb.stiffness * ones).norm() <=
        1e-8 + 3.0 * kLbDiagRegularization * std::sqrt(double(m.n_vertices())));
  CHECK(lb.mass.minCoeff() > 0.0);
  // Symmetry
  Eigen::MatrixXd dense(lb.stiffness);
  CHECK((dense - dense.transpose()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("eig_smallest matches a dense generalized eigensolver") {
  Mesh m = jittered_sphere(2, 2);  // 162 vertices
  LaplaceBeltrami lb = assemble_lb(m, face_geometry(m));
  const int k = 24;
  SpectralBasis basis = eig_smallest(lb, k, 1e-9);

  Eigen::MatrixXd dense(lb.stiffness);
  Eigen::VectorXd dinv = lb.mass.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd sym = dinv.asDiagonal() * dense * dinv.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (sym + sym.transpose()));
  for (int j = 0; j < k; ++j) {
    const double reference = es.eigenvalues()[j];
    CHECK(std::abs(basis.eigenvalues[j] - reference) <=
          1e-7 * std::max(std::abs(reference), 1e-6));
  }

  // Constant mode: lambda_1 ~ 0, phi_1 constant in the M-norm.
  CHECK(basis.eigenvalues[0] <= 1e-6);
  Eigen::VectorXd phi1 = basis.eigenvectors.col(0);
  CHECK((phi1.array() - phi1.mean()).abs().maxCoeff() < 1e-6 * std::abs(phi1.mean()) + 1e-9);

  // M-orthonormality.
  Eigen::MatrixXd gram =
      basis.eigenvectors.transpose() * lb.mass.asDiagonal() * basis.eigenvectors;
  CHECK((gram - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() < 1e-6);

  // Residuals within the documented bound.
  double w_inf = 0.0;
  for (int i = 0; i < dense.rows(); ++i) w_inf = std::max(w_inf, dense.row(i).cwiseAbs().sum());
  for (int j = 0; j < k; ++j) {
    Eigen::VectorXd phi = basis.eigenvectors.col(j);
    const double res =
        (dense * phi - basis.eigenvalues[j] * lb.mass.cwiseProduct(phi)).norm();
    CHECK(res <= 1e-9 * w_inf);
  }
}

TEST_CASE("unit icosphere spectrum has the spherical-harmonic triplet") {
  SynthParams p;
  p.level = 2;
  p.bump_amplitude = 0.0;
  Mesh m = synth_mesh(SynthKind::icosphere_cap, p, 0);
  LaplaceBeltrami lb = assemble_lb(m, face_geometry(m));
  SpectralBasis basis = eig_smallest(lb, 8, 1e-9);
  const double mean = (basis.eigenvalues[1] + basis.eigenvalues[2] + basis.eigenvalues[3]) / 3.0;
  for (int j = 1; j <= 3; ++j) CHECK(std::abs(basis.eigenvalues[j] - mean) < 0.05 * mean);
}

TEST_CASE("eig_smallest rejects k > N and reports non-convergence") {
  Mesh m = equilateral_triangle();
  LaplaceBeltrami lb = assemble_lb(m, face_geometry(m));
  CHECK_THROWS_AS(eig_smallest(lb, 4, 1e-8), ConfigMismatch);
  CHECK_THROWS_AS(eig_smallest(lb, 0, 1e-8), ConfigMismatch);
  Mesh sphere = jittered_sphere(1, 0);
  LaplaceBeltrami lb2 = assemble_lb(sphere, face_geometry(sphere));
  CHECK_THROWS_AS(eig_smallest(lb2, 8, 1e-8, /*max_sweeps=*/1), NoConvergence);
}

TEST_CASE("HKS on the regular tetrahedron is vertex-transitive") {
  Mesh tet = synth_mesh(SynthKind::tetrahedron, SynthParams{}, 0);
  LaplaceBeltrami lb = assemble_lb(tet, face_geometry(tet));
  SpectralBasis basis = eig_smallest(lb, 4, 1e-10);  // complete spectrum: no split cluster
  Eigen::MatrixXd sig = hks(basis, 8, /*normalize=*/false);
  for (int i = 1; i < 4; ++i)
    CHECK((sig.row(i) - sig.row(0)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("HKS is nearly constant on the unit icosphere") {
  SynthParams p;
  p.level = 2;
  p.bump_amplitude = 0.0;
  Mesh m = synth_mesh(SynthKind::icosphere_cap, p, 0);
  LaplaceBeltrami lb = assemble_lb(m, face_geometry(m));
  SpectralBasis basis = eig_smallest(lb, 32, 1e-9);
  Eigen::MatrixXd sig = hks(basis, 8, /*normalize=*/false);
  for (int j = 0; j < sig.cols(); ++j) {
    const double mean = sig.col(j).mean();
    const double sd = std::sqrt((sig.col(j).array() - mean).square().mean());
    CHECK(sd < 0.01 * mean);
  }
}

TEST_CASE("z-scored HKS columns have zero mean and unit deviation") {
  Mesh m = jittered_sphere(2, 5);
  LaplaceBeltrami lb = assemble_lb(m, face_geometry(m));
  SpectralBasis basis = eig_smallest(lb, 24, 1e-9);
  Eigen::MatrixXd sig = hks(basis, 8, /*normalize=*/true);
  for (int j = 0; j < sig.cols(); ++j) {
    CHECK(std::abs(sig.col(j).mean()) < 1e-9);
    CHECK(std::abs(std::sqrt(sig.col(j).array().square().mean()) - 1.0) < 1e-9);
  }
}

TEST_CASE("raw HKS decays monotonically in time") {
  SynthParams p;
  p.level = 1;
  p.bump_amplitude = 0.3;
  Mesh m = synth_mesh(SynthKind::icosphere_cap, p, 3);
  LaplaceBeltrami lb = assemble_lb(m, face_geometry(m));
  SpectralBasis basis = eig_smallest(lb, 16, 1e-9);
  Eigen::MatrixXd sig = hks(basis, 8, /*normalize=*/false);
  for (int i = 0; i < sig.rows(); ++i)
    for (int j = 1; j < sig.cols(); ++j) CHECK(sig(i, j) <= sig(i, j - 1) + 1e-15);
}

TEST_CASE("disconnected meshes raise DegenerateSpectrum") {
  // Two far-apart triangles.
  Mesh m;
  m.vertices.resize(6, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0, 100, 100, 100, 101, 100, 100, 100, 101, 100;
  m.faces.resize(2, 3);
  m.faces << 0, 1, 2, 3, 4, 5;
  LaplaceBeltrami lb = assemble_lb(m, face_geometry(m));
  SpectralBasis basis = eig_smallest(lb, 4, 1e-10);
  CHECK_THROWS_AS(hks(basis, 8, false), DegenerateSpectrum);
}

TEST_CASE("HKS is E(3)-invariant under recomputation from scratch") {
  Mesh m = jittered_sphere(2, 7);
  const double tol = 1e-9;
  auto compute = [tol](const Mesh& mesh) {
    LaplaceBeltrami lb = assemble_lb(mesh, face_geometry(mesh));
    SpectralBasis basis = eig_smallest(lb, 24, tol);
    return hks(basis, 8, /*normalize=*/false);
  };
  Eigen::MatrixXd base = compute(m);
  auto rng = make_rng(13, "hks_e3");
  Eigen::Matrix3d refl = Eigen::Matrix3d::Identity();
  refl(0, 0) = -1.0;
  for (const Eigen::Matrix3d& r :
       {rotation_z(0.7), random_rotation(rng), refl}) {
    Mesh moved = rigid_transform(m, r, Eigen::Vector3d(0.4, -2.0, 1.0), true);
    Eigen::MatrixXd sig = compute(moved);
    CHECK((sig - base).cwiseAbs().maxCoeff() < 10.0 * tol);
  }
}

TEST_CASE("spectral cache round-trips bit-identically and validates") {
  Mesh m = jittered_sphere(1, 9);
  LaplaceBeltrami lb = assemble_lb(m, face_geometry(m));
  SpectralBasis basis = eig_smallest(lb, 8, 1e-9);
  const std::uint64_t hash = content_hash(m);

  fs::path dir = fs::temp_directory_path() / "eams_spectral_cache_test";
  fs::remove_all(dir);
  write_spectral_cache(dir.string(), "mesh0", hash, basis);
  SpectralBasis back = read_spectral_cache(dir.string(), "mesh0", hash);
  CHECK(back.eigenvalues == basis.eigenvalues);
  CHECK(back.eigenvectors == basis.eigenvectors);
  CHECK(back.k_requested == basis.k_requested);

  // Perturbing a vertex changes the content hash: stale caches are rejected.
  Mesh perturbed = m;
  perturbed.vertices(0, 0) += 1e-9;
  CHECK_THROWS_AS(read_spectral_cache(dir.string(), "mesh0", content_hash(perturbed)),
                  HashMismatch);

  // Corrupt manifest header byte.
  {
    std::fstream f(dir / "mesh0" / "manifest.json",
                   std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
  }
  CHECK_THROWS_AS(read_spectral_cache(dir.string(), "mesh0", hash), CacheVersionMismatch);
  CHECK_THROWS_AS(read_spectral_cache(dir.string(), "nope", hash), MissingCache);
}
