#include "eams/features.hpp"

#include <algorithm>
#include <cmath>

namespace eams {

DatasetTag dataset_tag_from_string(const std::string& name) {
  if (name == "intra") return DatasetTag::intra;
  if (name == "liver") return DatasetTag::liver;
  if (name == "teeth3ds") return DatasetTag::teeth3ds;
  if (name == "iosseg") return DatasetTag::iosseg;
  if (name == "custom") return DatasetTag::custom;
  throw ConfigMismatch("unknown dataset tag: " + name);
}

std::string to_string(DatasetTag tag) {
  switch (tag) {
    case DatasetTag::intra: return "intra";
    case DatasetTag::liver: return "liver";
    case DatasetTag::teeth3ds: return "teeth3ds";
    case DatasetTag::iosseg: return "iosseg";
    case DatasetTag::custom: return "custom";
  }
  return "custom";
}

FeatureConfig FeatureConfig::preset(DatasetTag tag) {
  FeatureConfig cfg;
  cfg.dataset_tag = tag;
  switch (tag) {
    case DatasetTag::intra:
    case DatasetTag::custom:
      cfg.node_features = {"area", "hks"};
      break;
    case DatasetTag::teeth3ds:
    case DatasetTag::iosseg:
      cfg.node_features = {"area", "hks", "dental_cyl"};
      break;
    case DatasetTag::liver:
      cfg.node_features = {"area", "hks", "canonical_cyl", "canonical_cart", "fps"};
      cfg.inverse_distance_copy_weights = true;
      break;
  }
  return cfg;
}

namespace {

int feature_width(const std::string& name) {
  if (name == "area") return 1;
  if (name == "hks") return 8;
  if (name == "dental_cyl" || name == "canonical_cyl" || name == "canonical_cart") return 3;
  if (name == "fps") return 4;
  throw ConfigMismatch("unknown node feature: " + name);
}

int expected_node_dim(DatasetTag tag) {
  switch (tag) {
    case DatasetTag::intra: return 9;
    case DatasetTag::teeth3ds:
    case DatasetTag::iosseg: return 12;
    case DatasetTag::liver: return 19;
    case DatasetTag::custom: return -1;
  }
  return -1;
}

}  // namespace

int FeatureConfig::node_dim() const {
  int d = 0;
  for (const auto& name : node_features) d += feature_width(name);
  return d;
}

Eigen::VectorXd pointwise_area(const FaceGeometry& geometry, const AdjacencyIndex& adjacency) {
  const int nv = static_cast<int>(adjacency.incident_faces.size());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(nv);
  for (int i = 0; i < nv; ++i) {
    const auto& faces = adjacency.incident_faces[i];
    if (faces.empty()) continue;
    double sum = 0.0;
    for (int f : faces) sum += geometry.face_areas[f];
    out[i] = sum / static_cast<double>(faces.size());
  }
  return out;
}

Eigen::VectorXd barycentric_vertex_area(const Mesh& mesh, const FaceGeometry& geometry) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(mesh.n_vertices());
  for (int f = 0; f < mesh.n_faces(); ++f)
    for (int c = 0; c < 3; ++c) out[mesh.faces(f, c)] += geometry.face_areas[f] / 3.0;
  return out;
}

Eigen::MatrixXd edge_scalar_features(const FaceGeometry& geometry,
                                     const AdjacencyIndex& adjacency,
                                     const Eigen::VectorXd* copy_weights) {
  const int ne = adjacency.n_undirected_edges();
  Eigen::VectorXd dihedral(ne);
  for (int e = 0; e < ne; ++e) {
    const auto [f0, f1] = adjacency.edge_face_pairs[e];
    if (f0 < 0 || f1 < 0) {
      dihedral[e] = M_PI;  // boundary edge
      continue;
    }
    const Eigen::Vector3d n0 = geometry.face_normals.row(f0).normalized();
    const Eigen::Vector3d n1 = geometry.face_normals.row(f1).normalized();
    dihedral[e] = std::acos(std::clamp(n0.dot(n1), -1.0, 1.0));
  }

  const int nd = adjacency.n_directed_edges();
  Eigen::MatrixXd out(nd, 3);
  for (int d = 0; d < nd; ++d) {
    const int target = adjacency.directed_edges(d, 1);
    const int u = adjacency.directed_to_undirected[d];
    out(d, 0) = dihedral[u];
    out(d, 1) = 1.0 / static_cast<double>(std::max(1, adjacency.vertex_degree[target]));
    out(d, 2) = copy_weights != nullptr ? (*copy_weights)[u] : 1e-3;
  }
  return out;
}

namespace {

struct WeightedStats {
  double skewness(const Eigen::VectorXd& t, const Eigen::VectorXd* w) const {
    double mean, m2, m3;
    if (w == nullptr) {
      mean = t.mean();
      const Eigen::ArrayXd c = t.array() - mean;
      m2 = c.square().mean();
      m3 = c.cube().mean();
    } else {
      const double wsum = w->sum();
      mean = w->dot(t) / wsum;
      const Eigen::ArrayXd c = t.array() - mean;
      m2 = (w->array() * c.square()).sum() / wsum;
      m3 = (w->array() * c.cube()).sum() / wsum;
    }
    if (m2 < 1e-30) return 0.0;
    return m3 / std::pow(m2, 1.5);
  }
};

// Least-squares quadratic p(t) = a t^2 + b t + c.
Eigen::Vector3d fit_quadratic(const Eigen::VectorXd& t, const Eigen::VectorXd& y) {
  Eigen::MatrixXd design(t.size(), 3);
  design.col(0) = t.array().square();
  design.col(1) = t;
  design.col(2).setOnes();
  return design.colPivHouseholderQr().solve(y);
}

struct PcaFrame {
  Eigen::Matrix3d axes;       // columns, descending eigenvalue
  Eigen::Vector3d center;
  Eigen::Vector3d eigenvalues;
  bool degenerate = false;
};

PcaFrame pca_descending(const Eigen::Matrix3d& cov, const Eigen::Vector3d& center) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  PcaFrame frame;
  frame.center = center;
  // Eigen returns ascending order; flip to descending variance.
  for (int j = 0; j < 3; ++j) {
    frame.axes.col(j) = es.eigenvectors().col(2 - j);
    frame.eigenvalues[j] = es.eigenvalues()[2 - j];
  }
  const double scale = std::max(frame.eigenvalues[0], 1e-300);
  if ((frame.eigenvalues[0] - frame.eigenvalues[1]) / scale < 1e-9 ||
      (frame.eigenvalues[1] - frame.eigenvalues[2]) / scale < 1e-9)
    frame.degenerate = true;
  return frame;
}

FrameResult frame_to_cylindrical(const Points& vertices, PcaFrame frame) {
  FrameResult res;
  res.degenerate_pca = frame.degenerate;
  if (frame.axes.determinant() < 0.0) frame.axes.col(2) = -frame.axes.col(2);
  res.axes = frame.axes;
  res.center = frame.center;

  Eigen::MatrixXd y = (vertices.rowwise() - frame.center.transpose()) * frame.axes;
  y.col(1).array() -= y.col(1).minCoeff();  // posterior baseline at zero
  res.cartesian = y;
  res.cylindrical.resize(y.rows(), 3);
  for (int i = 0; i < y.rows(); ++i) {
    res.cylindrical(i, 0) = std::hypot(y(i, 0), y(i, 1));
    res.cylindrical(i, 1) = std::atan2(y(i, 1), y(i, 0));
    res.cylindrical(i, 2) = y(i, 2);
  }
  return res;
}

}  // namespace

FrameResult dental_frame_cylindrical(const Mesh& mesh) {
  if (mesh.n_vertices() < 4) throw ShapeMismatch("dental frame: need >= 4 vertices");
  const Eigen::Vector3d center = mesh.vertices.colwise().mean();
  const Points centered = mesh.vertices.rowwise() - center.transpose();
  const Eigen::Matrix3d cov = centered.transpose() * centered;
  PcaFrame frame = pca_descending(cov, center);

  // Anterior-posterior sign from the arch shape: fit the AP projection as a
  // quadratic in the lateral projection. The fit opening toward positive AP
  // means the arch apex points the wrong way, so flip. The leading
  // coefficient is even in the lateral axis, so this is well-defined before
  // any lateral sign is chosen.
  const Eigen::VectorXd lateral = centered * frame.axes.col(0);
  const Eigen::VectorXd ap = centered * frame.axes.col(1);
  if (fit_quadratic(lateral, ap)[0] > 0.0) frame.axes.col(1) = -frame.axes.col(1);

  // Vertical sign by skewness; lateral axis completes a right-handed frame,
  // which is where reflections show up (as a theta flip).
  WeightedStats stats;
  const Eigen::VectorXd vertical = centered * frame.axes.col(2);
  if (stats.skewness(vertical, nullptr) < 0.0) frame.axes.col(2) = -frame.axes.col(2);
  frame.axes.col(0) = frame.axes.col(1).cross(frame.axes.col(2));

  return frame_to_cylindrical(mesh.vertices, frame);
}

FrameResult liver_frame_cylindrical(const Mesh& mesh, const FaceGeometry& geometry,
                                    const AdjacencyIndex& adjacency) {
  if (mesh.n_vertices() < 4) throw ShapeMismatch("liver frame: need >= 4 vertices");
  (void)adjacency;
  const Eigen::VectorXd weights = barycentric_vertex_area(mesh, geometry);
  const double wsum = weights.sum();
  const Eigen::Vector3d mu = (mesh.vertices.transpose() * weights) / wsum;
  const Points centered = mesh.vertices.rowwise() - mu.transpose();
  const Eigen::Matrix3d cov =
      (centered.transpose() * weights.asDiagonal() * centered) / wsum;
  PcaFrame frame = pca_descending(cov, mu);

  WeightedStats stats;
  for (int j = 0; j < 2; ++j) {
    const Eigen::VectorXd t = centered * frame.axes.col(j);
    if (stats.skewness(t, &weights) < 0.0) frame.axes.col(j) = -frame.axes.col(j);
  }
  return frame_to_cylindrical(mesh.vertices, frame);
}

Eigen::MatrixXd fps_anchor_distances(const Mesh& mesh) {
  const int nv = mesh.n_vertices();
  if (nv < 4) throw ShapeMismatch("fps anchors: need >= 4 vertices");
  const Eigen::Vector3d centroid = mesh.vertices.colwise().mean();

  Eigen::MatrixXd out(nv, 4);
  out.col(0) = (mesh.vertices.rowwise() - centroid.transpose()).rowwise().norm();

  auto argmax = [](const Eigen::VectorXd& v) {
    int arg = 0;
    v.maxCoeff(&arg);  // first maximum wins: ties break to the smallest index
    return arg;
  };

  const int a1 = argmax(out.col(0));
  out.col(1) = (mesh.vertices.rowwise() - mesh.vertices.row(a1)).rowwise().norm();
  Eigen::VectorXd min_dist = out.col(1);
  const int a2 = argmax(min_dist);
  out.col(2) = (mesh.vertices.rowwise() - mesh.vertices.row(a2)).rowwise().norm();
  min_dist = min_dist.cwiseMin(out.col(2));
  const int a3 = argmax(min_dist);
  out.col(3) = (mesh.vertices.rowwise() - mesh.vertices.row(a3)).rowwise().norm();
  return out;
}

FeatureSet assemble_features(const Mesh& mesh, const FaceGeometry& geometry,
                             const AdjacencyIndex& adjacency, const SpectralBasis* basis,
                             const FeatureConfig& config,
                             const Eigen::VectorXd* copy_weights) {
  const int nv = mesh.n_vertices();
  FeatureSet fs;
  fs.node_scalars.resize(nv, config.node_dim());

  int col = 0;
  for (const auto& name : config.node_features) {
    const int w = feature_width(name);
    if (name == "area") {
      fs.node_scalars.col(col) = pointwise_area(geometry, adjacency);
    } else if (name == "hks") {
      if (basis == nullptr) throw MissingCache("assemble_features: HKS requested without a spectral basis");
      fs.node_scalars.middleCols(col, w) = hks(*basis, w, /*normalize=*/true);
    } else if (name == "dental_cyl") {
      fs.node_scalars.middleCols(col, w) = dental_frame_cylindrical(mesh).cylindrical;
    } else if (name == "canonical_cyl") {
      fs.node_scalars.middleCols(col, w) =
          liver_frame_cylindrical(mesh, geometry, adjacency).cylindrical;
    } else if (name == "canonical_cart") {
      fs.node_scalars.middleCols(col, w) =
          liver_frame_cylindrical(mesh, geometry, adjacency).cartesian;
    } else if (name == "fps") {
      fs.node_scalars.middleCols(col, w) = fps_anchor_distances(mesh);
    }
    col += w;
  }

  const int expected = expected_node_dim(config.dataset_tag);
  if (expected > 0 && expected != fs.node_scalars.cols())
    throw DimensionMismatch("assemble_features: node dim " +
                            std::to_string(fs.node_scalars.cols()) + " != expected " +
                            std::to_string(expected) + " for " + to_string(config.dataset_tag));

  fs.edge_scalars = edge_scalar_features(geometry, adjacency, copy_weights);

  fs.coord_state.clear();
  fs.coord_state.push_back(mesh.vertices);
  if (config.coord_channels >= 2) fs.coord_state.push_back(geometry.vertex_normals);

  if (!fs.node_scalars.allFinite() || !fs.edge_scalars.allFinite())
    throw DimensionMismatch("assemble_features: non-finite feature values");
  return fs;
}

}  // namespace eams
