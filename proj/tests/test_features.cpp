#include <doctest.h>

#include <map>

#include "eams/features.hpp"
#include "eams/io.hpp"
#include "oracles.hpp"

using namespace eams;

namespace {

struct MeshCtx {
  Mesh mesh;
  FaceGeometry geo;
  AdjacencyIndex adj;
};

MeshCtx context(const Mesh& m) {
  return {m, face_geometry(m), build_adjacency(m)};
}

Mesh arch_fixture(std::uint64_t seed = 0) {
  SynthParams p;
  p.jitter = 0.004;
  return synth_mesh(SynthKind::tube_arch, p, seed);
}

Mesh ellipsoid_fixture(double a, double b, double c, std::uint64_t seed = 0) {
  SynthParams p;
  p.level = 2;
  p.bump_amplitude = 0.0;
  p.jitter = 0.0;
  Mesh m = synth_mesh(SynthKind::icosphere_cap, p, seed);
  m.vertices.col(0) *= a;
  m.vertices.col(1) *= b;
  m.vertices.col(2) *= c;
  // Shift mass toward one end so the skewness statistics are bounded away
  // from zero along every axis.
  for (int i = 0; i < m.n_vertices(); ++i) {
    const double warp = 1.0 + 0.2 * std::tanh(m.vertices(i, 0) / a) +
                        0.1 * std::tanh(m.vertices(i, 1) / b) +
                        0.05 * std::tanh(m.vertices(i, 2) / c);
    m.vertices.row(i) *= warp;
  }
  return m;
}

}  // namespace

TEST_CASE("pointwise area basics") {
  Mesh tri;
  tri.vertices.resize(3, 3);
  tri.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  tri.faces.resize(1, 3);
  tri.faces << 0, 1, 2;
  MeshCtx ctx = context(tri);
  Eigen::VectorXd area = pointwise_area(ctx.geo, ctx.adj);
  for (int i = 0; i < 3; ++i) CHECK(area[i] == doctest::Approx(0.5));

  // Scaling the mesh by 2 scales areas by 4.
  Mesh scaled = tri;
  scaled.vertices *= 2.0;
  MeshCtx ctx2 = context(scaled);
  CHECK(pointwise_area(ctx2.geo, ctx2.adj)[0] == doctest::Approx(2.0));
}

TEST_CASE("icosphere pointwise areas are near the global mean") {
  SynthParams p;
  p.level = 2;
  p.bump_amplitude = 0.0;
  MeshCtx ctx = context(synth_mesh(SynthKind::icosphere_cap, p, 0));
  Eigen::VectorXd area = pointwise_area(ctx.geo, ctx.adj);
  const double mean_face_area = ctx.geo.face_areas.mean();
  for (int i = 0; i < area.size(); ++i)
    CHECK(std::abs(area[i] - mean_face_area) < 0.10 * mean_face_area);
}

TEST_CASE("edge scalars: dihedrals, degree weights, copy weights") {
  // Two coplanar faces with consistent winding -> dihedral 0.
  Mesh m;
  m.vertices.resize(4, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0;
  m.faces.resize(2, 3);
  m.faces << 0, 1, 2, 2, 1, 3;
  MeshCtx ctx = context(m);
  Eigen::MatrixXd es = edge_scalar_features(ctx.geo, ctx.adj);
  REQUIRE(es.rows() == ctx.adj.n_directed_edges());
  for (int d = 0; d < es.rows(); ++d) {
    const int u = ctx.adj.directed_to_undirected[d];
    const bool boundary = ctx.adj.edge_face_pairs[u][1] < 0;
    if (boundary)
      CHECK(es(d, 0) == doctest::Approx(M_PI));
    else
      CHECK(es(d, 0) == doctest::Approx(0.0));
    // degree weight = 1/deg(target)
    const int target = ctx.adj.directed_edges(d, 1);
    CHECK(es(d, 1) == doctest::Approx(1.0 / ctx.adj.vertex_degree[target]));
    CHECK(es(d, 2) == doctest::Approx(1e-3));  // fallback copy weight
  }

  Eigen::VectorXd copy = Eigen::VectorXd::LinSpaced(ctx.adj.n_undirected_edges(), 0.1, 0.9);
  Eigen::MatrixXd es2 = edge_scalar_features(ctx.geo, ctx.adj, &copy);
  for (int d = 0; d < es2.rows(); ++d)
    CHECK(es2(d, 2) == copy[ctx.adj.directed_to_undirected[d]]);
}

TEST_CASE("degree weight 0.2 for a degree-5 target") {
  SynthParams p;
  p.level = 1;
  p.bump_amplitude = 0.0;
  MeshCtx ctx = context(synth_mesh(SynthKind::icosphere_cap, p, 0));
  Eigen::MatrixXd es = edge_scalar_features(ctx.geo, ctx.adj);
  bool found = false;
  for (int d = 0; d < es.rows() && !found; ++d) {
    if (ctx.adj.vertex_degree[ctx.adj.directed_edges(d, 1)] == 5) {
      CHECK(es(d, 1) == doctest::Approx(0.2));
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("dental frame: cylindrical conversion sanity") {
  FrameResult res = dental_frame_cylindrical(arch_fixture());
  REQUIRE(res.cylindrical.rows() > 0);
  CHECK(res.cylindrical.allFinite());
  CHECK(!res.degenerate_pca);
  CHECK(res.axes.determinant() == doctest::Approx(1.0));
  // Baseline shift leaves the second frame coordinate nonnegative.
  CHECK(res.cartesian.col(1).minCoeff() == doctest::Approx(0.0));
  // cart2cyl identity: a point with frame coordinates (r,0,z) has theta=0.
  for (int i = 0; i < res.cartesian.rows(); ++i) {
    CHECK(res.cylindrical(i, 0) ==
          doctest::Approx(std::hypot(res.cartesian(i, 0), res.cartesian(i, 1))));
    CHECK(res.cylindrical(i, 2) == doctest::Approx(res.cartesian(i, 2)));
  }
}

TEST_CASE("dental frame is SE(3)-invariant and chirality-sensitive") {
  Mesh m = arch_fixture(1);
  FrameResult base = dental_frame_cylindrical(m);
  auto rng = make_rng(21, "dental");
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::Matrix3d r = random_rotation(rng);
    Eigen::Vector3d t(uniform_in(rng, -3, 3), uniform_in(rng, -3, 3), uniform_in(rng, -3, 3));
    FrameResult moved = dental_frame_cylindrical(rigid_transform(m, r, t));
    CHECK((moved.cylindrical - base.cylindrical).cwiseAbs().maxCoeff() < 1e-6);
  }
  // 40-degree z-rotation with translation, the headline robustness condition.
  FrameResult rot =
      dental_frame_cylindrical(rigid_transform(m, rotation_z(40 * M_PI / 180), {1, 2, 3}));
  CHECK((rot.cylindrical - base.cylindrical).cwiseAbs().maxCoeff() < 1e-6);

  // Reflection: theta must differ (chirality preserved, not compensated).
  Eigen::Matrix3d refl = Eigen::Matrix3d::Identity();
  refl(0, 0) = -1.0;
  FrameResult mirrored = dental_frame_cylindrical(rigid_transform(m, refl, {0, 0, 0}));
  CHECK((mirrored.cylindrical.col(1) - base.cylindrical.col(1)).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("degenerate PCA is reported but still yields a deterministic frame") {
  SynthParams p;
  p.level = 2;
  p.bump_amplitude = 0.0;  // perfect sphere: fully degenerate covariance
  Mesh sphere = synth_mesh(SynthKind::icosphere_cap, p, 0);
  FrameResult a = dental_frame_cylindrical(sphere);
  CHECK(a.degenerate_pca);
  CHECK(a.cylindrical.allFinite());
  FrameResult b = dental_frame_cylindrical(sphere);
  CHECK(a.cylindrical == b.cylindrical);  // deterministic ordering by index
}

TEST_CASE("liver frame aligns with analytic ellipsoid axes") {
  Mesh m = ellipsoid_fixture(3.0, 1.5, 0.8);
  MeshCtx ctx = context(m);
  FrameResult res = liver_frame_cylindrical(ctx.mesh, ctx.geo, ctx.adj);
  const Eigen::Vector3d ex = Eigen::Vector3d::UnitX(), ey = Eigen::Vector3d::UnitY(),
                        ez = Eigen::Vector3d::UnitZ();
  CHECK(std::abs(res.axes.col(0).dot(ex)) > std::cos(2.0 * M_PI / 180.0));
  CHECK(std::abs(res.axes.col(1).dot(ey)) > std::cos(2.0 * M_PI / 180.0));
  CHECK(std::abs(res.axes.col(2).dot(ez)) > std::cos(2.0 * M_PI / 180.0));
}

TEST_CASE("liver frame is SE(3)-invariant on a skewed ellipsoid") {
  Mesh m = ellipsoid_fixture(2.5, 1.4, 0.7, 2);
  MeshCtx ctx = context(m);
  FrameResult base = liver_frame_cylindrical(ctx.mesh, ctx.geo, ctx.adj);
  auto rng = make_rng(31, "liver");
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::Matrix3d r = random_rotation(rng);
    Eigen::Vector3d t(uniform_in(rng, -2, 2), uniform_in(rng, -2, 2), uniform_in(rng, -2, 2));
    Mesh moved = rigid_transform(m, r, t);
    MeshCtx mc = context(moved);
    FrameResult got = liver_frame_cylindrical(mc.mesh, mc.geo, mc.adj);
    CHECK((got.cylindrical - base.cylindrical).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("area weighting makes the liver centre tessellation-insensitive") {
  Mesh m = arch_fixture(3);
  MeshCtx ctx = context(m);
  const Eigen::Vector3d mu = liver_frame_cylindrical(ctx.mesh, ctx.geo, ctx.adj).center;

  // Refine a quarter of the faces 4x in place (flat midpoint split keeps the
  // surface identical).
  Mesh refined = m;
  std::vector<Eigen::RowVector3d> verts;
  for (int i = 0; i < m.n_vertices(); ++i) verts.push_back(m.vertices.row(i));
  std::vector<std::array<int, 3>> faces;
  std::map<std::pair<int, int>, int> midpoints;
  const int split_until = m.n_faces() / 4;
  for (int f = 0; f < m.n_faces(); ++f) {
    const int a = m.faces(f, 0), b = m.faces(f, 1), c = m.faces(f, 2);
    if (f >= split_until) {
      faces.push_back({a, b, c});
      continue;
    }
    auto midpoint = [&verts, &midpoints](int p, int q) {
      const auto key = std::minmax(p, q);
      auto it = midpoints.find({key.first, key.second});
      if (it != midpoints.end()) return it->second;
      verts.push_back(0.5 * (verts[p] + verts[q]));
      const int id = static_cast<int>(verts.size()) - 1;
      midpoints[{key.first, key.second}] = id;
      return id;
    };
    const int ab = midpoint(a, b), bc = midpoint(b, c), ca = midpoint(c, a);
    faces.push_back({a, ab, ca});
    faces.push_back({b, bc, ab});
    faces.push_back({c, ca, bc});
    faces.push_back({ab, bc, ca});
  }
  refined.vertices.resize(static_cast<int>(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i) refined.vertices.row(static_cast<int>(i)) = verts[i];
  refined.faces.resize(static_cast<int>(faces.size()), 3);
  for (size_t i = 0; i < faces.size(); ++i)
    for (int c = 0; c < 3; ++c) refined.faces(static_cast<int>(i), c) = faces[i][c];
  refined.face_labels.clear();

  MeshCtx rc = context(refined);
  const Eigen::Vector3d mu2 = liver_frame_cylindrical(rc.mesh, rc.geo, rc.adj).center;

  const Eigen::Vector3d lo = m.vertices.colwise().minCoeff();
  const Eigen::Vector3d hi = m.vertices.colwise().maxCoeff();
  CHECK((mu2 - mu).norm() < 1e-3 * (hi - lo).norm());

  // Barycentric cell areas are exactly preserved by flat refinement.
  const double total_before = barycentric_vertex_area(m, ctx.geo).sum();
  const double total_after = barycentric_vertex_area(refined, rc.geo).sum();
  CHECK(total_after == doctest::Approx(total_before).epsilon(1e-12));
}

TEST_CASE("liver frame reflections flip the frame z (chirality preserved)") {
  Mesh m = ellipsoid_fixture(2.5, 1.4, 0.7, 4);
  MeshCtx ctx = context(m);
  FrameResult base = liver_frame_cylindrical(ctx.mesh, ctx.geo, ctx.adj);
  Eigen::Matrix3d refl = Eigen::Matrix3d::Identity();
  refl(0, 0) = -1.0;
  Mesh mirrored = rigid_transform(m, refl, Eigen::Vector3d::Zero(), true);
  MeshCtx mc = context(mirrored);
  FrameResult got = liver_frame_cylindrical(mc.mesh, mc.geo, mc.adj);
  CHECK((got.cylindrical.col(2) + base.cylindrical.col(2)).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((got.cylindrical.col(2) - base.cylindrical.col(2)).cwiseAbs().maxCoeff() > 1e-3);
  CHECK((got.cylindrical.col(0) - base.cylindrical.col(0)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("fps anchors match the brute-force oracle") {
  SynthParams p;
  p.level = 2;
  p.jitter = 0.05;
  Mesh m = synth_mesh(SynthKind::icosphere_cap, p, 4);  // 162 < 500 vertices
  Eigen::MatrixXd dist = fps_anchor_distances(m);
  std::vector<int> anchors = oracle::brute_force_fps(m.vertices, 3);
  const Eigen::Vector3d centroid = m.vertices.colwise().mean();
  for (int i = 0; i < m.n_vertices(); ++i) {
    CHECK(dist(i, 0) == doctest::Approx((m.vertices.row(i).transpose() - centroid).norm()));
    for (int a = 0; a < 3; ++a)
      CHECK(dist(i, a + 1) ==
            doctest::Approx((m.vertices.row(i) - m.vertices.row(anchors[a])).norm()));
  }
  // Centroid-nearest vertex attains the column-0 minimum.
  int arg = 0;
  dist.col(0).minCoeff(&arg);
  for (int i = 0; i < m.n_vertices(); ++i) CHECK(dist(arg, 0) <= dist(i, 0));
}

TEST_CASE("fps anchors on a line segment are its endpoints") {
  Mesh m;
  m.vertices.resize(11, 3);
  for (int i = 0; i <= 10; ++i) m.vertices.row(i) << i / 10.0, 0, 0;
  m.faces.resize(0, 3);
  Eigen::MatrixXd dist = fps_anchor_distances(m);
  // Anchor 1 is an endpoint; anchor 2 is the other endpoint.
  CHECK(dist(0, 1) * dist(10, 1) == doctest::Approx(0.0));
  CHECK(dist(0, 2) + dist(10, 2) == doctest::Approx(1.0));
  CHECK(std::min(dist(0, 2), dist(10, 2)) == doctest::Approx(0.0));
}

TEST_CASE("fps distances are invariant under rigid motion") {
  Mesh m = arch_fixture(5);
  Eigen::MatrixXd base = fps_anchor_distances(m);
  auto rng = make_rng(41, "fps");
  Mesh moved = rigid_transform(m, random_rotation(rng), Eigen::Vector3d(5, -3, 2));
  CHECK((fps_anchor_distances(moved) - base).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("assemble_features hits the documented dimensions") {
  auto build = [](DatasetTag tag, const Mesh& mesh) {
    MeshCtx ctx = context(mesh);
    LaplaceBeltrami lb = assemble_lb(ctx.mesh, ctx.geo);
    SpectralBasis basis = eig_smallest(lb, std::min(24, mesh.n_vertices() - 1), 1e-8);
    return assemble_features(ctx.mesh, ctx.geo, ctx.adj, &basis, FeatureConfig::preset(tag));
  };
  SynthParams p;
  p.level = 2;
  p.jitter = 0.02;
  Mesh sphere = synth_mesh(SynthKind::icosphere_cap, p, 6);
  FeatureSet intra = build(DatasetTag::intra, sphere);
  CHECK(intra.node_scalars.cols() == 9);
  CHECK(intra.edge_scalars.cols() == 3);
  CHECK(intra.coord_state.size() == 2);

  Mesh arch = arch_fixture(6);
  CHECK(build(DatasetTag::teeth3ds, arch).node_scalars.cols() == 12);
  CHECK(build(DatasetTag::liver, arch).node_scalars.cols() == 19);

  // Determinism: two assemblies are bit-identical.
  FeatureSet again = build(DatasetTag::intra, sphere);
  CHECK(again.node_scalars == intra.node_scalars);
  CHECK(again.edge_scalars == intra.edge_scalars);

  // HKS without a basis is a MissingCache error.
  MeshCtx ctx = context(sphere);
  CHECK_THROWS_AS(
      assemble_features(ctx.mesh, ctx.geo, ctx.adj, nullptr, FeatureConfig::preset(DatasetTag::intra)),
      MissingCache);
}

TEST_CASE("intrinsic scalar features are E(3)-invariant") {
  Mesh m = arch_fixture(7);
  MeshCtx ctx = context(m);
  Eigen::VectorXd area = pointwise_area(ctx.geo, ctx.adj);
  Eigen::MatrixXd es = edge_scalar_features(ctx.geo, ctx.adj);
  auto rng = make_rng(51, "intrinsics");
  Eigen::Matrix3d refl = Eigen::Matrix3d::Identity();
  refl(2, 2) = -1.0;
  for (const Eigen::Matrix3d& r : {random_rotation(rng), refl}) {
    Mesh moved = rigid_transform(m, r, Eigen::Vector3d(0.5, 0.25, -1.0), true);
    MeshCtx mc = context(moved);
    CHECK((pointwise_area(mc.geo, mc.adj) - area).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((edge_scalar_features(mc.geo, mc.adj) - es).cwiseAbs().maxCoeff() < 1e-9);
  }
}
