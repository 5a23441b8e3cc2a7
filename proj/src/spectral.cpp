#include "eams/spectral.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace eams {

LaplaceBeltrami assemble_lb(const Mesh& mesh, const FaceGeometry& geometry) {
  const int nv = mesh.n_vertices();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(mesh.n_faces() * 12);
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(nv);
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(nv);

  for (int f = 0; f < mesh.n_faces(); ++f) {
    const int idx[3] = {mesh.faces(f, 0), mesh.faces(f, 1), mesh.faces(f, 2)};
    for (int c = 0; c < 3; ++c) mass[idx[c]] += geometry.face_areas[f] / 3.0;
    for (int c = 0; c < 3; ++c) {
      // Angle at corner c faces the edge (c+1, c+2).
      const int p = idx[c], q = idx[(c + 1) % 3], r = idx[(c + 2) % 3];
      const Eigen::Vector3d e1 = mesh.vertices.row(q) - mesh.vertices.row(p);
      const Eigen::Vector3d e2 = mesh.vertices.row(r) - mesh.vertices.row(p);
      const double cot = e1.dot(e2) / e1.cross(e2).norm();
      const double w = -0.5 * cot;
      trip.emplace_back(q, r, w);
      trip.emplace_back(r, q, w);
      diag[q] -= w;
      diag[r] -= w;
    }
  }
  for (int i = 0; i < nv; ++i) trip.emplace_back(i, i, diag[i] + kLbDiagRegularization);

  LaplaceBeltrami lb;
  lb.stiffness.resize(nv, nv);
  lb.stiffness.setFromTriplets(trip.begin(), trip.end());
  lb.mass = std::move(mass);
  return lb;
}

SpectralBasis eig_smallest(const LaplaceBeltrami& lb, int k, double tol, int max_sweeps) {
  const int n = static_cast<int>(lb.mass.size());
  // k = N is allowed: tiny meshes need the complete spectrum so that
  // degenerate clusters are never truncated mid-cluster.
  if (k < 1 || k > n)
    throw ConfigMismatch("eig_smallest: need 1 <= k <= N, got k=" + std::to_string(k) +
                         " N=" + std::to_string(n));
  if (max_sweeps < 0) max_sweeps = 50 * k;

  const Eigen::VectorXd dinv_sqrt = lb.mass.cwiseSqrt().cwiseInverse();
  // S = M^{-1/2} W M^{-1/2}, symmetric positive definite after regularisation.
  Eigen::SparseMatrix<double> S = lb.stiffness;
  for (int col = 0; col < S.outerSize(); ++col)
    for (Eigen::SparseMatrix<double>::InnerIterator it(S, col); it; ++it)
      it.valueRef() *= dinv_sqrt[it.row()] * dinv_sqrt[it.col()];

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(S);
  if (solver.info() != Eigen::Success)
    throw NoConvergence("eig_smallest: factorization failed", 0);

  double w_inf_norm = 0.0;  // max absolute row sum of W
  {
    Eigen::VectorXd row_abs = Eigen::VectorXd::Zero(n);
    for (int col = 0; col < lb.stiffness.outerSize(); ++col)
      for (Eigen::SparseMatrix<double>::InnerIterator it(lb.stiffness, col); it; ++it)
        row_abs[it.row()] += std::abs(it.value());
    w_inf_norm = row_abs.maxCoeff();
  }

  const int block = std::min(n, k + std::max(8, k / 4));
  auto rng = make_rng(0x1f0c5eedull, "eig_smallest/start");
  Eigen::MatrixXd x(n, block);
  for (int j = 0; j < block; ++j)
    for (int i = 0; i < n; ++i) x(i, j) = uniform_in(rng, -1.0, 1.0);

  Eigen::VectorXd ritz;
  int sweep = 0;
  for (;; ++sweep) {
    if (sweep >= max_sweeps)
      throw NoConvergence("eig_smallest: no convergence after " + std::to_string(sweep) +
                              " sweeps",
                          sweep);
    // Inverse iteration amplifies the small end of the spectrum.
    Eigen::MatrixXd y = solver.solve(x);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, block);
    Eigen::MatrixXd sq = S * q;
    Eigen::MatrixXd t = q.transpose() * sq;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (t + t.transpose()));
    x = q * es.eigenvectors();
    ritz = es.eigenvalues();

    // Residuals checked in the original generalized problem.
    bool converged = true;
    for (int j = 0; j < k && converged; ++j) {
      Eigen::VectorXd phi = dinv_sqrt.cwiseProduct(x.col(j));
      const double res = (lb.stiffness * phi - ritz[j] * lb.mass.cwiseProduct(phi)).norm();
      if (res > tol * w_inf_norm) converged = false;
    }
    if (converged) break;
  }

  SpectralBasis basis;
  basis.k_requested = k;
  basis.solver_tol = tol;
  basis.eigenvalues = ritz.head(k);
  basis.eigenvectors.resize(n, k);
  for (int j = 0; j < k; ++j) {
    Eigen::VectorXd phi = dinv_sqrt.cwiseProduct(x.col(j));
    // Deterministic sign: largest-magnitude entry positive.
    int arg = 0;
    phi.cwiseAbs().maxCoeff(&arg);
    if (phi[arg] < 0.0) phi = -phi;
    basis.eigenvectors.col(j) = phi;
  }
  return basis;
}

Eigen::VectorXd hks_time_scales(const SpectralBasis& basis, int n_times) {
  const int k = static_cast<int>(basis.eigenvalues.size());
  if (k < 2) throw DegenerateSpectrum("hks: need at least 2 eigenpairs");
  const double lambda2 = basis.eigenvalues[1];
  const double lambda_k = basis.eigenvalues[k - 1];
  // A second regularisation-scale eigenvalue means a second constant mode,
  // i.e. a disconnected mesh (the diagonal shift keeps null modes near
  // delta/mass rather than at literal zero).
  if (lambda2 <= std::max(1e-12, 1e3 * kLbDiagRegularization))
    throw DegenerateSpectrum("hks: lambda_2 at the regularisation scale (disconnected mesh?)");
  const double t_min = 4.0 * std::log(10.0) / lambda_k;
  const double t_max = 4.0 * std::log(10.0) / lambda2;
  Eigen::VectorXd times(n_times);
  if (n_times == 1) {
    times[0] = t_min;
    return times;
  }
  const double l0 = std::log(t_min), l1 = std::log(t_max);
  for (int j = 0; j < n_times; ++j)
    times[j] = std::exp(l0 + (l1 - l0) * j / (n_times - 1));
  return times;
}

Eigen::MatrixXd hks(const SpectralBasis& basis, int n_times, bool normalize) {
  const Eigen::VectorXd times = hks_time_scales(basis, n_times);
  const int n = static_cast<int>(basis.eigenvectors.rows());
  const Eigen::MatrixXd phi_sq = basis.eigenvectors.array().square();
  Eigen::MatrixXd out(n, n_times);
  for (int j = 0; j < n_times; ++j)
    out.col(j) = phi_sq * (-times[j] * basis.eigenvalues.array()).exp().matrix();
  if (normalize) {
    for (int j = 0; j < n_times; ++j) {
      const double mean = out.col(j).mean();
      const double var = (out.col(j).array() - mean).square().mean();
      const double sd = std::sqrt(var);
      if (sd < 1e-30)
        out.col(j).setZero();
      else
        out.col(j) = (out.col(j).array() - mean) / sd;
    }
  }
  return out;
}

namespace {

void write_doubles(const fs::path& path, const double* data, std::size_t count) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UnsupportedFormat("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
}

void read_doubles(const fs::path& path, double* data, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CacheVersionMismatch("missing cache array: " + path.string());
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double)))
    throw CacheVersionMismatch("truncated cache array: " + path.string());
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

void write_spectral_cache(const std::string& cache_dir, const std::string& mesh_id,
                          std::uint64_t mesh_hash, const SpectralBasis& basis) {
  const fs::path dir = fs::path(cache_dir) / mesh_id;
  const fs::path tmp = fs::path(cache_dir) / (mesh_id + ".tmp");
  fs::create_directories(tmp);

  nlohmann::json manifest;
  manifest["version"] = kSpectralCacheVersion;
  manifest["hash"] = hash_hex(mesh_hash);
  manifest["k"] = basis.k_requested;
  manifest["tol"] = basis.solver_tol;
  manifest["n_vertices"] = static_cast<int>(basis.eigenvectors.rows());
  manifest["n_pairs"] = static_cast<int>(basis.eigenvalues.size());
  {
    std::ofstream out(tmp / "manifest.json");
    out << manifest.dump(2) << '\n';
  }
  write_doubles(tmp / "eigenvalues.f64", basis.eigenvalues.data(),
                static_cast<std::size_t>(basis.eigenvalues.size()));
  write_doubles(tmp / "eigenvectors.f64", basis.eigenvectors.data(),
                static_cast<std::size_t>(basis.eigenvectors.size()));

  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

SpectralBasis read_spectral_cache(const std::string& cache_dir, const std::string& mesh_id,
                                  std::uint64_t expected_hash) {
  const fs::path dir = fs::path(cache_dir) / mesh_id;
  std::ifstream in(dir / "manifest.json");
  if (!in) throw MissingCache("no spectral cache for mesh id " + mesh_id);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception&) {
    throw CacheVersionMismatch("unreadable cache manifest for mesh id " + mesh_id);
  }
  if (!manifest.contains("version") || manifest["version"].get<int>() != kSpectralCacheVersion)
    throw CacheVersionMismatch("cache version mismatch for mesh id " + mesh_id);
  if (manifest.value("hash", "") != hash_hex(expected_hash))
    throw HashMismatch("cache content hash mismatch for mesh id " + mesh_id);

  SpectralBasis basis;
  basis.k_requested = manifest.value("k", 0);
  basis.solver_tol = manifest.value("tol", 0.0);
  const int n = manifest.value("n_vertices", 0);
  const int kp = manifest.value("n_pairs", 0);
  if (n <= 0 || kp <= 0) throw CacheVersionMismatch("corrupt cache manifest for " + mesh_id);
  basis.eigenvalues.resize(kp);
  basis.eigenvectors.resize(n, kp);
  read_doubles(dir / "eigenvalues.f64", basis.eigenvalues.data(), static_cast<std::size_t>(kp));
  read_doubles(dir / "eigenvectors.f64", basis.eigenvectors.data(),
               static_cast<std::size_t>(n) * static_cast<std::size_t>(kp));
  return basis;
}

bool has_spectral_cache(const std::string& cache_dir, const std::string& mesh_id) {
  return fs::exists(fs::path(cache_dir) / mesh_id / "manifest.json");
}

}  // namespace eams
