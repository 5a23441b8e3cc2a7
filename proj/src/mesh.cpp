#include "eams/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace eams {

namespace {

// Bounding box over finite vertices only: a single NaN row must not poison
// the degeneracy threshold.
double bbox_diag_sq(const Points& v) {
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (int i = 0; i < v.rows(); ++i) {
    if (!v.row(i).allFinite()) continue;
    lo = lo.cwiseMin(v.row(i).transpose());
    hi = hi.cwiseMax(v.row(i).transpose());
  }
  if (!(hi - lo).allFinite()) return 0.0;
  return (hi - lo).squaredNorm();
}

double triangle_area(const Points& v, int i, int j, int k) {
  Eigen::Vector3d a = v.row(j) - v.row(i);
  Eigen::Vector3d b = v.row(k) - v.row(i);
  return 0.5 * a.cross(b).norm();
}

}  // namespace

Mesh clean_mesh(const Mesh& raw, double area_eps) {
  const int nv = raw.n_vertices();
  const int nf = raw.n_faces();
  if (nf == 0) throw EmptyMesh("clean_mesh: input has no faces");

  std::vector<char> vertex_ok(nv, 1);
  for (int i = 0; i < nv; ++i) {
    if (!raw.vertices.row(i).allFinite()) vertex_ok[i] = 0;
  }

  const double area_floor = area_eps * bbox_diag_sq(raw.vertices);

  std::vector<int> kept_faces;
  kept_faces.reserve(nf);
  for (int f = 0; f < nf; ++f) {
    const int i = raw.faces(f, 0), j = raw.faces(f, 1), k = raw.faces(f, 2);
    if (i < 0 || j < 0 || k < 0 || i >= nv || j >= nv || k >= nv) continue;
    if (i == j || j == k || i == k) continue;
    if (!vertex_ok[i] || !vertex_ok[j] || !vertex_ok[k]) continue;
    if (triangle_area(raw.vertices, i, j, k) < area_floor) continue;
    kept_faces.push_back(f);
  }
  if (kept_faces.empty()) throw EmptyMesh("clean_mesh: no faces survive cleanup");

  std::vector<char> referenced(nv, 0);
  for (int f : kept_faces)
    for (int c = 0; c < 3; ++c) referenced[raw.faces(f, c)] = 1;

  std::vector<int> remap(nv, -1);
  int n_out = 0;
  for (int i = 0; i < nv; ++i)
    if (referenced[i]) remap[i] = n_out++;

  Mesh out;
  out.provenance = raw.provenance;
  out.vertices.resize(n_out, 3);
  if (!raw.vertex_labels.empty()) out.vertex_labels.resize(n_out);
  for (int i = 0; i < nv; ++i) {
    if (remap[i] < 0) continue;
    out.vertices.row(remap[i]) = raw.vertices.row(i);
    if (!raw.vertex_labels.empty()) out.vertex_labels[remap[i]] = raw.vertex_labels[i];
  }

  out.faces.resize(static_cast<int>(kept_faces.size()), 3);
  if (!raw.face_labels.empty()) out.face_labels.reserve(kept_faces.size());
  int fo = 0;
  for (int f : kept_faces) {
    for (int c = 0; c < 3; ++c) out.faces(fo, c) = remap[raw.faces(f, c)];
    if (!raw.face_labels.empty()) out.face_labels.push_back(raw.face_labels[f]);
    ++fo;
  }
  // Edge labels reference the original connectivity; they only stay valid when
  // nothing was removed.
  if (!raw.edge_labels.empty() && fo == nf && n_out == nv) out.edge_labels = raw.edge_labels;
  return out;
}

NormalizeResult normalize_coords(const Mesh& mesh) {
  if (mesh.n_vertices() == 0) throw EmptyMesh("normalize_coords: no vertices");
  NormalizeResult res;
  res.centroid = mesh.vertices.colwise().mean();
  res.scale = (mesh.vertices.rowwise() - res.centroid.transpose()).rowwise().norm().maxCoeff();
  res.mesh = mesh;
  res.mesh.vertices = (mesh.vertices.rowwise() - res.centroid.transpose()) / (res.scale + 1e-12);
  return res;
}

FaceGeometry face_geometry(const Mesh& mesh) {
  const int nf = mesh.n_faces();
  const int nv = mesh.n_vertices();
  FaceGeometry geo;
  geo.face_normals.resize(nf, 3);
  geo.face_areas.resize(nf);
  Points accum = Points::Zero(nv, 3);
  for (int f = 0; f < nf; ++f) {
    const int i = mesh.faces(f, 0), j = mesh.faces(f, 1), k = mesh.faces(f, 2);
    Eigen::Vector3d n = (mesh.vertices.row(j) - mesh.vertices.row(i))
                            .cross(mesh.vertices.row(k) - mesh.vertices.row(i));
    geo.face_normals.row(f) = n;
    // Norm taken from the stored row so a = |n|/2 holds bit-exactly for users
    // recomputing it from the struct.
    const double a = 0.5 * geo.face_normals.row(f).norm();
    if (a == 0.0)
      throw ZeroNormal("face_geometry: zero cross product on face " + std::to_string(f));
    geo.face_areas[f] = a;
    for (int c = 0; c < 3; ++c) accum.row(mesh.faces(f, c)) += a * n;
  }
  geo.vertex_normals.resize(nv, 3);
  for (int i = 0; i < nv; ++i) {
    const double len = accum.row(i).norm();
    geo.vertex_normals.row(i) = len > 0.0 ? (accum.row(i) / len).eval() : accum.row(i);
  }
  return geo;
}

AdjacencyIndex build_adjacency(const Mesh& mesh) {
  const int nv = mesh.n_vertices();
  const int nf = mesh.n_faces();
  AdjacencyIndex adj;

  std::map<std::pair<int, int>, std::vector<int>> edge_faces;  // (min,max) -> faces
  for (int f = 0; f < nf; ++f) {
    for (int c = 0; c < 3; ++c) {
      int a = mesh.faces(f, c), b = mesh.faces(f, (c + 1) % 3);
      edge_faces[{std::min(a, b), std::max(a, b)}].push_back(f);
    }
  }

  const int ne = static_cast<int>(edge_faces.size());
  adj.undirected_edges.resize(ne, 2);
  adj.edge_face_pairs.resize(ne, {-1, -1});
  adj.one_ring.assign(nv, {});
  adj.incident_faces.assign(nv, {});
  adj.vertex_degree.assign(nv, 0);

  int e = 0;
  for (const auto& [key, faces] : edge_faces) {
    adj.undirected_edges(e, 0) = key.first;
    adj.undirected_edges(e, 1) = key.second;
    adj.edge_face_pairs[e][0] = faces[0];
    if (faces.size() >= 2) adj.edge_face_pairs[e][1] = faces[1];
    if (faces.size() == 1) ++adj.n_boundary_edges;
    if (faces.size() > 2) ++adj.n_nonmanifold_edges;
    adj.one_ring[key.first].push_back(key.second);
    adj.one_ring[key.second].push_back(key.first);
    ++e;
  }

  for (int i = 0; i < nv; ++i) {
    std::sort(adj.one_ring[i].begin(), adj.one_ring[i].end());
    adj.vertex_degree[i] = static_cast<int>(adj.one_ring[i].size());
  }
  for (int f = 0; f < nf; ++f)
    for (int c = 0; c < 3; ++c) adj.incident_faces[mesh.faces(f, c)].push_back(f);
  for (auto& lst : adj.incident_faces) std::sort(lst.begin(), lst.end());

  // Symmetric directed edge list in lexicographic order, with a map back to
  // the undirected edge that carries the face pair.
  adj.directed_edges.resize(2 * ne, 2);
  adj.directed_to_undirected.assign(2 * ne, -1);
  std::vector<std::pair<std::pair<int, int>, int>> dir;
  dir.reserve(2 * ne);
  for (int u = 0; u < ne; ++u) {
    dir.push_back({{adj.undirected_edges(u, 0), adj.undirected_edges(u, 1)}, u});
    dir.push_back({{adj.undirected_edges(u, 1), adj.undirected_edges(u, 0)}, u});
  }
  std::sort(dir.begin(), dir.end());
  for (int d = 0; d < 2 * ne; ++d) {
    adj.directed_edges(d, 0) = dir[d].first.first;
    adj.directed_edges(d, 1) = dir[d].first.second;
    adj.directed_to_undirected[d] = dir[d].second;
  }
  return adj;
}

std::vector<int> convert_labels(const Mesh& mesh, LabelConversion mode,
                                const Points* annotated_points,
                                const std::vector<int>* annotated_labels) {
  const int nv = mesh.n_vertices();
  std::vector<int> out(nv, 0);

  if (mode == LabelConversion::face_majority_to_vertex) {
    if (mesh.face_labels.empty())
      throw MissingAnnotation("convert_labels: face labels required for majority vote");
    std::vector<std::map<int, int>> votes(nv);
    for (int f = 0; f < mesh.n_faces(); ++f)
      for (int c = 0; c < 3; ++c) ++votes[mesh.faces(f, c)][mesh.face_labels[f]];
    for (int i = 0; i < nv; ++i) {
      int best = 0, best_count = -1;
      for (const auto& [label, count] : votes[i]) {
        if (count > best_count) {  // map iterates ascending: ties keep smallest id
          best = label;
          best_count = count;
        }
      }
      out[i] = best;
    }
    return out;
  }

  if (annotated_points == nullptr || annotated_labels == nullptr ||
      annotated_points->rows() == 0 ||
      annotated_points->rows() != static_cast<Eigen::Index>(annotated_labels->size()))
    throw MissingAnnotation("convert_labels: annotated point set with labels required");
  for (int i = 0; i < nv; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (int p = 0; p < annotated_points->rows(); ++p) {
      const double d = (mesh.vertices.row(i) - annotated_points->row(p)).squaredNorm();
      if (d < best) {
        best = d;
        arg = p;
      }
    }
    out[i] = (*annotated_labels)[arg];
  }
  return out;
}

Mesh rigid_transform(const Mesh& mesh, const Eigen::Matrix3d& rotation,
                     const Eigen::Vector3d& translation, bool rewind_on_reflection) {
  if ((rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9)
    throw NotOrthogonal("rigid_transform: rotation is not orthogonal");
  Mesh out = mesh;
  out.vertices = (mesh.vertices * rotation.transpose()).rowwise() + translation.transpose();
  if (rotation.determinant() < 0.0 && rewind_on_reflection) {
    for (int f = 0; f < out.n_faces(); ++f) std::swap(out.faces(f, 1), out.faces(f, 2));
  }
  return out;
}

RigidSample sample_rigid_augmentation(std::mt19937_64& rng) {
  const double amp = 0.15 * M_PI;
  const double ax = uniform_in(rng, -amp, amp);
  const double ay = uniform_in(rng, -amp, amp);
  const double az = uniform_in(rng, -amp, amp);
  RigidSample s;
  s.rotation = rotation_about_axis(Eigen::Vector3d::UnitZ(), az) *
               rotation_about_axis(Eigen::Vector3d::UnitY(), ay) *
               rotation_about_axis(Eigen::Vector3d::UnitX(), ax);
  s.translation = Eigen::Vector3d(uniform_in(rng, -6.0, 6.0), uniform_in(rng, -8.0, 8.0),
                                  uniform_in(rng, -5.0, 5.0));
  return s;
}

Eigen::Matrix3d rotation_about_axis(const Eigen::Vector3d& axis, double radians) {
  return Eigen::AngleAxisd(radians, axis.normalized()).toRotationMatrix();
}

Eigen::Matrix3d rotation_z(double radians) {
  return rotation_about_axis(Eigen::Vector3d::UnitZ(), radians);
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  // Shoemake quaternion sampling: uniform over SO(3).
  const double u1 = uniform_unit(rng), u2 = uniform_unit(rng), u3 = uniform_unit(rng);
  const double two_pi = 6.283185307179586;
  Eigen::Quaterniond q(std::sqrt(u1) * std::cos(two_pi * u3),
                       std::sqrt(1.0 - u1) * std::sin(two_pi * u2),
                       std::sqrt(1.0 - u1) * std::cos(two_pi * u2),
                       std::sqrt(u1) * std::sin(two_pi * u3));
  return q.normalized().toRotationMatrix();
}

std::uint64_t content_hash(const Mesh& mesh) {
  std::uint64_t h = fnv1a64(mesh.vertices.data(), sizeof(double) * mesh.vertices.size());
  h = fnv1a64(mesh.faces.data(), sizeof(int) * mesh.faces.size(), h);
  auto mix = [&h](const std::vector<int>& v) {
    if (!v.empty()) h = fnv1a64(v.data(), sizeof(int) * v.size(), h);
  };
  mix(mesh.vertex_labels);
  mix(mesh.edge_labels);
  mix(mesh.face_labels);
  return h;
}

}  // namespace eams
