#include <doctest.h>

#include "eams/io.hpp"
#include "eams/mesh.hpp"

using namespace eams;

namespace {

Mesh triangle_mesh() {
  Mesh m;
  m.vertices.resize(3, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  m.faces.resize(1, 3);
  m.faces << 0, 1, 2;
  return m;
}

Mesh icosphere(int level, std::uint64_t seed = 0, double jitter = 0.0) {
  SynthParams p;
  p.level = level;
  p.bump_amplitude = 0.0;
  p.jitter = jitter;
  return synth_mesh(SynthKind::icosphere_cap, p, seed);
}

}  // namespace

TEST_CASE("clean_mesh drops repeated-index faces") {
  Mesh m = triangle_mesh();
  m.faces.conservativeResize(2, 3);
  m.faces.row(1) << 0, 1, 1;
  Mesh cleaned = clean_mesh(m);
  CHECK(cleaned.n_faces() == 1);
  CHECK(cleaned.n_vertices() == 3);
}

TEST_CASE("clean_mesh removes NaN vertices and their faces") {
  Mesh m;
  m.vertices.resize(4, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1;
  m.vertices(3, 2) = std::nan("");
  m.faces.resize(3, 3);
  m.faces << 0, 1, 2, 0, 1, 3, 1, 2, 3;  // two faces touch the NaN vertex
  Mesh cleaned = clean_mesh(m);
  CHECK(cleaned.n_faces() == 1);
  CHECK(cleaned.n_vertices() == 3);
  CHECK(cleaned.vertices.allFinite());
}

TEST_CASE("clean_mesh drops tiny faces even when NaN vertices are present") {
  Mesh m;
  m.vertices.resize(7, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0,                 // unit triangle
      0, 0, 1e-8, 1e-8, 0, 1e-8, 0, 1e-8, 1e-8,            // near-zero-area sliver
      std::nan(""), 0, 0;                                   // poison vertex
  m.faces.resize(2, 3);
  m.faces << 0, 1, 2, 3, 4, 5;
  Mesh cleaned = clean_mesh(m, 1e-10);
  CHECK(cleaned.n_faces() == 1);  // the sliver went, despite the NaN row
  CHECK(cleaned.n_vertices() == 3);
}

TEST_CASE("clean_mesh is the identity on clean input and idempotent") {
  Mesh m = icosphere(1);
  Mesh once = clean_mesh(m);
  CHECK(once.vertices == m.vertices);
  CHECK(once.faces == m.faces);
  Mesh twice = clean_mesh(once);
  CHECK(twice.vertices == once.vertices);
  CHECK(twice.faces == once.faces);
}

TEST_CASE("clean_mesh throws EmptyMesh when nothing survives") {
  Mesh m = triangle_mesh();
  m.faces(0, 1) = 0;  // degenerate
  CHECK_THROWS_AS(clean_mesh(m), EmptyMesh);
}

TEST_CASE("normalize_coords two-point example") {
  Mesh m;
  m.vertices.resize(2, 3);
  m.vertices << 0, 0, 0, 2, 0, 0;
  NormalizeResult res = normalize_coords(m);
  CHECK(res.centroid.isApprox(Eigen::Vector3d(1, 0, 0)));
  CHECK(res.scale == doctest::Approx(1.0));
  CHECK(res.mesh.vertices(0, 0) == doctest::Approx(-1.0));
  CHECK(res.mesh.vertices(1, 0) == doctest::Approx(1.0));
}

TEST_CASE("normalize_coords is a fixed point on a centred unit icosphere") {
  Mesh m = icosphere(2);
  NormalizeResult res = normalize_coords(m);
  CHECK((res.mesh.vertices - m.vertices).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("normalize_coords bounds vertex norms by one") {
  auto rng = make_rng(7, "normtest");
  for (int trial = 0; trial < 5; ++trial) {
    Mesh m = icosphere(1, trial, 0.3);
    m.vertices.array() *= 17.0;
    m.vertices.rowwise() += Eigen::RowVector3d(4, -2, 9);
    NormalizeResult res = normalize_coords(m);
    CHECK(res.mesh.vertices.rowwise().norm().maxCoeff() <= 1.0 + 1e-12);
  }
  (void)rng;
}

TEST_CASE("face_geometry unit right triangle and winding flip") {
  Mesh m = triangle_mesh();
  FaceGeometry geo = face_geometry(m);
  CHECK(geo.face_normals.row(0).isApprox(Eigen::RowVector3d(0, 0, 1)));
  CHECK(geo.face_areas[0] == doctest::Approx(0.5));
  std::swap(m.faces(0, 1), m.faces(0, 2));
  FaceGeometry flipped = face_geometry(m);
  CHECK(flipped.face_normals.row(0).isApprox(Eigen::RowVector3d(0, 0, -1)));
}

TEST_CASE("face_geometry rejects zero cross products") {
  Mesh m;
  m.vertices.resize(3, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 2, 0, 0;  // colinear
  m.faces.resize(1, 3);
  m.faces << 0, 1, 2;
  CHECK_THROWS_AS(face_geometry(m), ZeroNormal);
}

TEST_CASE("face areas equal half the normal magnitude exactly") {
  Mesh m = icosphere(2, 3, 0.05);
  FaceGeometry geo = face_geometry(m);
  for (int f = 0; f < m.n_faces(); ++f)
    CHECK(geo.face_areas[f] == 0.5 * geo.face_normals.row(f).norm());
}

TEST_CASE("icosphere vertex normals align with the radial direction") {
  Mesh m = icosphere(2);
  FaceGeometry geo = face_geometry(m);
  for (int i = 0; i < m.n_vertices(); ++i) {
    const Eigen::RowVector3d radial = m.vertices.row(i).normalized();
    const double cosine = geo.vertex_normals.row(i).dot(radial);
    CHECK(cosine > std::cos(2.0 * M_PI / 180.0));
    CHECK(geo.vertex_normals.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("build_adjacency on a single triangle") {
  AdjacencyIndex adj = build_adjacency(triangle_mesh());
  CHECK(adj.n_directed_edges() == 6);
  CHECK(adj.n_undirected_edges() == 3);
  CHECK(adj.n_boundary_edges == 3);
  CHECK(adj.vertex_degree == std::vector<int>{2, 2, 2});
}

TEST_CASE("two triangles sharing an edge map it to two faces") {
  Mesh m;
  m.vertices.resize(4, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0;
  m.faces.resize(2, 3);
  m.faces << 0, 1, 2, 2, 1, 3;
  AdjacencyIndex adj = build_adjacency(m);
  int shared = -1;
  for (int e = 0; e < adj.n_undirected_edges(); ++e)
    if (adj.undirected_edges(e, 0) == 1 && adj.undirected_edges(e, 1) == 2) shared = e;
  REQUIRE(shared >= 0);
  CHECK(adj.edge_face_pairs[shared][0] == 0);
  CHECK(adj.edge_face_pairs[shared][1] == 1);
  CHECK(adj.n_boundary_edges == 4);
  CHECK(adj.n_nonmanifold_edges == 0);
}

TEST_CASE("closed icosphere: no boundary edges, Euler characteristic 2") {
  Mesh m = icosphere(2);
  AdjacencyIndex adj = build_adjacency(m);
  CHECK(adj.n_boundary_edges == 0);
  CHECK(m.n_vertices() - adj.n_undirected_edges() + m.n_faces() == 2);
  // symmetric directed edges
  for (int d = 0; d < adj.n_directed_edges(); ++d) {
    bool found = false;
    for (int e = 0; e < adj.n_directed_edges() && !found; ++e)
      found = adj.directed_edges(e, 0) == adj.directed_edges(d, 1) &&
              adj.directed_edges(e, 1) == adj.directed_edges(d, 0);
    CHECK(found);
  }
}

TEST_CASE("non-manifold edge is counted, not fatal") {
  Mesh m;
  m.vertices.resize(5, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, -1, 0;
  m.faces.resize(3, 3);
  m.faces << 0, 1, 2, 0, 1, 3, 0, 1, 4;  // edge (0,1) touches 3 faces
  AdjacencyIndex adj = build_adjacency(m);
  CHECK(adj.n_nonmanifold_edges == 1);
}

TEST_CASE("convert_labels majority vote and tie-break") {
  Mesh m;
  m.vertices.resize(5, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0, -1, 0, 0, 0, -1, 0;
  m.faces.resize(3, 3);
  m.faces << 0, 1, 2, 0, 2, 3, 0, 3, 4;
  m.face_labels = {2, 2, 5};
  std::vector<int> labels = convert_labels(m, LabelConversion::face_majority_to_vertex);
  CHECK(labels[0] == 2);  // votes {2,2,5}

  // Tie fixture: vertex 0 touches exactly one face of each label.
  Mesh tie;
  tie.vertices.resize(4, 3);
  tie.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0, -1, 0, 0;
  tie.faces.resize(2, 3);
  tie.faces << 0, 1, 2, 0, 2, 3;
  SUBCASE("exhaustive two-face tie fixtures") {
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) {
        tie.face_labels = {a, b};
        std::vector<int> got = convert_labels(tie, LabelConversion::face_majority_to_vertex);
        CHECK(got[0] == std::min(a, b));
      }
  }
  SUBCASE("pair {1,3} resolves to 1") {
    tie.face_labels = {3, 1};
    CHECK(convert_labels(tie, LabelConversion::face_majority_to_vertex)[0] == 1);
  }
}

TEST_CASE("convert_labels nearest-point identity remap") {
  Mesh m = triangle_mesh();
  Points pts = m.vertices;
  std::vector<int> labels = {4, 5, 6};
  std::vector<int> got =
      convert_labels(m, LabelConversion::nearest_point_remap, &pts, &labels);
  CHECK(got == labels);
  CHECK_THROWS_AS(convert_labels(m, LabelConversion::nearest_point_remap), MissingAnnotation);
  CHECK_THROWS_AS(convert_labels(m, LabelConversion::face_majority_to_vertex),
                  MissingAnnotation);
}

TEST_CASE("rigid_transform identity and isometry") {
  Mesh m = icosphere(1, 1, 0.1);
  Mesh same = rigid_transform(m, Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero());
  CHECK(same.vertices == m.vertices);
  CHECK(same.faces == m.faces);

  Mesh rotated = rigid_transform(m, rotation_z(40.0 * M_PI / 180.0), Eigen::Vector3d(1, 2, 3));
  for (int i = 0; i < 10; ++i)
    for (int j = i + 1; j < 10; ++j) {
      const double before = (m.vertices.row(i) - m.vertices.row(j)).norm();
      const double after = (rotated.vertices.row(i) - rotated.vertices.row(j)).norm();
      CHECK(std::abs(before - after) < 1e-12);
    }
}

TEST_CASE("rigid_transform rejects non-orthogonal matrices") {
  Eigen::Matrix3d bad = Eigen::Matrix3d::Identity();
  bad(0, 1) = 0.01;
  CHECK_THROWS_AS(rigid_transform(triangle_mesh(), bad, Eigen::Vector3d::Zero()), NotOrthogonal);
}

TEST_CASE("proper rotations rotate face normals") {
  Mesh m = icosphere(1, 2, 0.05);
  FaceGeometry geo = face_geometry(m);
  auto rng = make_rng(11, "normals");
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Matrix3d r = random_rotation(rng);
    FaceGeometry rotated = face_geometry(rigid_transform(m, r, Eigen::Vector3d(0.3, -1, 2)));
    const Points expected = geo.face_normals * r.transpose();
    CHECK((rotated.face_normals - expected).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("rewound reflection reflects face normals") {
  Mesh m = icosphere(1, 4, 0.05);
  FaceGeometry geo = face_geometry(m);
  Eigen::Matrix3d refl = Eigen::Matrix3d::Identity();
  refl(0, 0) = -1.0;
  Mesh reflected = rigid_transform(m, refl, Eigen::Vector3d::Zero(), true);
  FaceGeometry out = face_geometry(reflected);
  const Points expected = geo.face_normals * refl.transpose();
  CHECK((out.face_normals - expected).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("content_hash changes when geometry changes") {
  Mesh m = icosphere(1);
  const std::uint64_t h0 = content_hash(m);
  CHECK(content_hash(m) == h0);
  m.vertices(0, 0) += 1e-12;
  CHECK(content_hash(m) != h0);
}

TEST_CASE("augmentation sampler stays inside documented ranges") {
  auto rng = make_rng(3, "augment");
  for (int i = 0; i < 50; ++i) {
    RigidSample s = sample_rigid_augmentation(rng);
    CHECK((s.rotation.transpose() * s.rotation - Eigen::Matrix3d::Identity())
              .cwiseAbs()
              .maxCoeff() < 1e-12);
    CHECK(s.rotation.determinant() == doctest::Approx(1.0));
    CHECK(std::abs(s.translation[0]) <= 6.0);
    CHECK(std::abs(s.translation[1]) <= 8.0);
    CHECK(std::abs(s.translation[2]) <= 5.0);
  }
}
