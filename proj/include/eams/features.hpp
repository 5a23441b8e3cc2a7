#pragma once

#include "eams/mesh.hpp"
#include "eams/spectral.hpp"

namespace eams {

enum class DatasetTag { intra, liver, teeth3ds, iosseg, custom };

DatasetTag dataset_tag_from_string(const std::string& name);
std::string to_string(DatasetTag tag);

/// Ordered feature lists; assembly concatenates in list order.
/// Known node features: area(1), hks(8), dental_cyl(3), canonical_cyl(3),
/// canonical_cart(3), fps(4). Edge columns are fixed:
/// [dihedral, degree_weight, copy_weight].
struct FeatureConfig {
  std::vector<std::string> node_features;
  std::vector<std::string> edge_features = {"dihedral", "degree_weight", "copy_weight"};
  int coord_channels = 2;
  DatasetTag dataset_tag = DatasetTag::custom;
  // Inverse-distance copy weights w ~ 1/(d + eps), unit mean; the liver
  // preset switches this on, everything else falls back to the constant.
  bool inverse_distance_copy_weights = false;

  static FeatureConfig preset(DatasetTag tag);
  int node_dim() const;
  int edge_dim() const { return static_cast<int>(edge_features.size()); }
};

struct FeatureSet {
  Eigen::MatrixXd node_scalars;       // N x D
  Eigen::MatrixXd edge_scalars;       // E_directed x 3
  std::vector<Points> coord_state;    // channel 0 positions, channel 1 vertex normals
};

/// Mean area of incident triangles per vertex.
Eigen::VectorXd pointwise_area(const FaceGeometry& geometry, const AdjacencyIndex& adjacency);

/// Barycentric cell areas (one third of the summed incident face areas):
/// exactly preserved under flat refinement, which is what the area-weighted
/// liver frame relies on.
Eigen::VectorXd barycentric_vertex_area(const Mesh& mesh, const FaceGeometry& geometry);

/// Per directed edge: [dihedral angle (pi on boundary), 1/deg(target),
/// copy weight]. copy_weights is per undirected edge; absent -> 1e-3.
Eigen::MatrixXd edge_scalar_features(const FaceGeometry& geometry,
                                     const AdjacencyIndex& adjacency,
                                     const Eigen::VectorXd* copy_weights = nullptr);

struct FrameResult {
  Eigen::MatrixXd cylindrical;  // N x 3: (r, theta, z)
  Eigen::MatrixXd cartesian;    // N x 3: frame coordinates after baseline shift
  Eigen::Matrix3d axes;         // columns, descending variance, det = +1
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  bool degenerate_pca = false;  // leading eigenvalues coincide; ordering kept by index
};

/// PCA arch frame: axes ordered by descending eigenvalue. The
/// anterior-posterior sign comes from the quadratic arch fit (apex toward
/// positive AP), the vertical sign from projection skewness, and the lateral
/// axis completes a right-handed frame. Reflections therefore flip theta:
/// chirality is deliberately not compensated.
FrameResult dental_frame_cylindrical(const Mesh& mesh);

/// Area-weighted variant: barycentric vertex areas weight the centre,
/// covariance, and skewness statistics; the first two axes are sign-resolved
/// by nonnegative skewness and the third by right-handedness (reflections
/// flip the frame z).
FrameResult liver_frame_cylindrical(const Mesh& mesh, const FaceGeometry& geometry,
                                    const AdjacencyIndex& adjacency);

/// Distances to the centroid and to three anchors picked by farthest-point
/// sampling seeded at the vertex farthest from the centroid.
Eigen::MatrixXd fps_anchor_distances(const Mesh& mesh);

FeatureSet assemble_features(const Mesh& mesh, const FaceGeometry& geometry,
                             const AdjacencyIndex& adjacency, const SpectralBasis* basis,
                             const FeatureConfig& config,
                             const Eigen::VectorXd* copy_weights = nullptr);

}  // namespace eams
