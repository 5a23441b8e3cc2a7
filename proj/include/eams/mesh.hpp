#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "eams/common.hpp"

namespace eams {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3>;

/// Triangle mesh with optional per-element labels. Immutable by convention:
/// every operation returns a new mesh instead of mutating in place.
struct Mesh {
  Points vertices;                 // N x 3
  Faces faces;                     // F x 3, oriented
  std::vector<int> vertex_labels;  // empty when absent
  std::vector<int> edge_labels;    // per undirected edge, empty when absent
  std::vector<int> face_labels;    // empty when absent
  std::string provenance;

  int n_vertices() const { return static_cast<int>(vertices.rows()); }
  int n_faces() const { return static_cast<int>(faces.rows()); }
};

/// One-ring, incident-face, and edge->face maps. Directed edges come in
/// symmetric pairs; boundary edges map to a single face.
struct AdjacencyIndex {
  std::vector<std::vector<int>> one_ring;        // sorted neighbour ids per vertex
  std::vector<std::vector<int>> incident_faces;  // sorted face ids per vertex
  Eigen::Matrix<int, Eigen::Dynamic, 2> directed_edges;    // (source, target), lexicographic
  Eigen::Matrix<int, Eigen::Dynamic, 2> undirected_edges;  // (min, max), lexicographic
  std::vector<std::array<int, 2>> edge_face_pairs;         // per undirected edge; -1 = absent
  std::vector<int> directed_to_undirected;
  std::vector<int> vertex_degree;
  int n_boundary_edges = 0;
  int n_nonmanifold_edges = 0;  // extra incidences beyond two are dropped, not fatal

  int n_directed_edges() const { return static_cast<int>(directed_edges.rows()); }
  int n_undirected_edges() const { return static_cast<int>(undirected_edges.rows()); }
};

/// Per-face cross products and areas plus area-weighted unit vertex normals.
struct FaceGeometry {
  Points face_normals;          // unnormalised (x_j - x_i) x (x_k - x_i)
  Eigen::VectorXd face_areas;   // ||n|| / 2
  Points vertex_normals;        // unit rows; zero row where undefined
};

/// Defensive cleanup: drops non-finite vertices, faces touching them, faces
/// with repeated indices, and faces with area below area_eps * bbox_diag^2;
/// prunes unreferenced vertices and compacts indices. No remeshing and no
/// vertex merging, so label alignment is preserved.
Mesh clean_mesh(const Mesh& raw, double area_eps = 1e-10);

struct NormalizeResult {
  Mesh mesh;
  Eigen::Vector3d centroid;
  double scale = 0.0;  // max distance from the centroid
};

/// Centre at the vertex mean and scale by the max distance from it
/// (rotation-invariant, so normalisation commutes with rigid motions).
NormalizeResult normalize_coords(const Mesh& mesh);

FaceGeometry face_geometry(const Mesh& mesh);

AdjacencyIndex build_adjacency(const Mesh& mesh);

enum class LabelConversion {
  face_majority_to_vertex,  // majority over incident face labels, ties -> smallest id
  nearest_point_remap,      // label of the nearest annotated point, ties -> smallest index
};

std::vector<int> convert_labels(const Mesh& mesh, LabelConversion mode,
                                const Points* annotated_points = nullptr,
                                const std::vector<int>* annotated_labels = nullptr);

/// x <- R x + t. When det(R) < 0 and rewind_on_reflection, each face (i,j,k)
/// becomes (i,k,j) so the oriented normal convention survives the reflection.
Mesh rigid_transform(const Mesh& mesh, const Eigen::Matrix3d& rotation,
                     const Eigen::Vector3d& translation,
                     bool rewind_on_reflection = true);

struct RigidSample {
  Eigen::Matrix3d rotation;
  Eigen::Vector3d translation;
};

/// Training augmentation draw: per-axis Euler angles uniform in
/// [-0.15*pi, 0.15*pi], translation uniform in [-6,6]x[-8,8]x[-5,5]
/// (applied before normalisation).
RigidSample sample_rigid_augmentation(std::mt19937_64& rng);

Eigen::Matrix3d rotation_about_axis(const Eigen::Vector3d& axis, double radians);
Eigen::Matrix3d rotation_z(double radians);
/// Uniform random rotation from quaternion sampling.
Eigen::Matrix3d random_rotation(std::mt19937_64& rng);

/// Content hash over vertex/face/label bytes; keys the spectral cache.
std::uint64_t content_hash(const Mesh& mesh);

}  // namespace eams
