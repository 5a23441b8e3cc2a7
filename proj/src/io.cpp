#include "eams/io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace eams {

namespace {

std::string next_content_line(std::istream& in, int& line_no) {
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const auto pos = line.find_first_not_of(" \t\r\n");
    if (pos == std::string::npos) continue;
    if (line[pos] == '#') continue;
    return line;
  }
  return {};
}

Mesh parse_off(std::istream& in, int* skipped) {
  int line_no = 0;
  std::string header = next_content_line(in, line_no);
  if (header.substr(0, 3) != "OFF") throw ParseError("expected OFF header", line_no);

  std::string counts = header.size() > 4 ? header.substr(3) : next_content_line(in, line_no);
  if (counts.find_first_not_of(" \t\r") == std::string::npos)
    counts = next_content_line(in, line_no);
  std::istringstream cs(counts);
  long nv = 0, nf = 0, ne = 0;
  if (!(cs >> nv >> nf >> ne)) throw ParseError("bad OFF counts", line_no);

  Mesh mesh;
  mesh.vertices.resize(nv, 3);
  for (long i = 0; i < nv; ++i) {
    std::istringstream ls(next_content_line(in, line_no));
    if (!(ls >> mesh.vertices(i, 0) >> mesh.vertices(i, 1) >> mesh.vertices(i, 2)))
      throw ParseError("bad OFF vertex", line_no);
  }
  mesh.faces.resize(nf, 3);
  int out = 0;
  for (long f = 0; f < nf; ++f) {
    std::istringstream ls(next_content_line(in, line_no));
    int n = 0;
    if (!(ls >> n)) throw ParseError("bad OFF face", line_no);
    if (n != 3) throw ParseError("only triangle faces are supported", line_no);
    if (!(ls >> mesh.faces(out, 0) >> mesh.faces(out, 1) >> mesh.faces(out, 2)))
      throw ParseError("bad OFF face indices", line_no);
    ++out;
  }
  (void)skipped;
  return mesh;
}

int parse_obj_index(const std::string& token, long nv, int line_no) {
  // "i", "i/t", "i//n", "i/t/n"; negative indices count from the end.
  std::istringstream ts(token);
  long idx = 0;
  if (!(ts >> idx) || idx == 0) throw ParseError("bad OBJ face index '" + token + "'", line_no);
  if (idx < 0) idx = nv + idx + 1;
  if (idx < 1 || idx > nv) throw ParseError("OBJ face index out of range", line_no);
  return static_cast<int>(idx - 1);
}

Mesh parse_obj(std::istream& in, int* skipped) {
  std::vector<Eigen::Vector3d> verts;
  std::vector<std::array<int, 3>> faces;
  int line_no = 0, skip_count = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Eigen::Vector3d v;
      if (!(ls >> v[0] >> v[1] >> v[2])) throw ParseError("bad OBJ vertex", line_no);
      verts.push_back(v);
    } else if (tag == "f") {
      std::vector<std::string> toks;
      std::string t;
      while (ls >> t) toks.push_back(t);
      if (toks.size() != 3) throw ParseError("only triangle faces are supported", line_no);
      std::array<int, 3> f{};
      for (int c = 0; c < 3; ++c)
        f[c] = parse_obj_index(toks[c], static_cast<long>(verts.size()), line_no);
      faces.push_back(f);
    } else {
      ++skip_count;  // vt, vn, usemtl, o, g, s, ...
    }
  }
  if (skipped) *skipped = skip_count;
  Mesh mesh;
  mesh.vertices.resize(static_cast<int>(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(static_cast<int>(i)) = verts[i];
  mesh.faces.resize(static_cast<int>(faces.size()), 3);
  for (size_t f = 0; f < faces.size(); ++f)
    for (int c = 0; c < 3; ++c) mesh.faces(static_cast<int>(f), c) = faces[f][c];
  return mesh;
}

Mesh parse_ply(std::istream& in, int* skipped) {
  int line_no = 0;
  std::string line = next_content_line(in, line_no);
  if (line.substr(0, 3) != "ply") throw ParseError("expected ply header", line_no);

  long nv = -1, nf = -1;
  int n_vertex_props = 0, xi = -1, yi = -1, zi = -1;
  int skip_count = 0;
  std::string current_element;
  bool ascii = false;
  while (true) {
    line = next_content_line(in, line_no);
    if (line.empty()) throw ParseError("unterminated ply header", line_no);
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = (fmt == "ascii");
      if (!ascii) throw UnsupportedFormat("only ASCII PLY is supported");
    } else if (tag == "element") {
      std::string name;
      long count = 0;
      ls >> name >> count;
      current_element = name;
      if (name == "vertex") nv = count;
      else if (name == "face") nf = count;
      else ++skip_count;
    } else if (tag == "property") {
      if (current_element == "vertex") {
        std::string type, name;
        ls >> type >> name;
        if (type == "list") throw ParseError("list property on vertices unsupported", line_no);
        if (name == "x") xi = n_vertex_props;
        if (name == "y") yi = n_vertex_props;
        if (name == "z") zi = n_vertex_props;
        ++n_vertex_props;
      }
    } else if (tag == "end_header") {
      break;
    } else if (tag == "comment" || tag == "obj_info") {
      continue;
    } else {
      ++skip_count;
    }
  }
  if (nv < 0 || xi < 0 || yi < 0 || zi < 0)
    throw ParseError("ply header missing vertex x/y/z", line_no);

  Mesh mesh;
  mesh.vertices.resize(nv, 3);
  for (long i = 0; i < nv; ++i) {
    std::istringstream ls(next_content_line(in, line_no));
    std::vector<double> vals(n_vertex_props);
    for (int p = 0; p < n_vertex_props; ++p)
      if (!(ls >> vals[p])) throw ParseError("bad ply vertex row", line_no);
    mesh.vertices(i, 0) = vals[xi];
    mesh.vertices(i, 1) = vals[yi];
    mesh.vertices(i, 2) = vals[zi];
  }
  mesh.faces.resize(std::max<long>(nf, 0), 3);
  for (long f = 0; f < nf; ++f) {
    std::istringstream ls(next_content_line(in, line_no));
    int n = 0;
    if (!(ls >> n)) throw ParseError("bad ply face row", line_no);
    if (n != 3) throw ParseError("only triangle faces are supported", line_no);
    if (!(ls >> mesh.faces(f, 0) >> mesh.faces(f, 1) >> mesh.faces(f, 2)))
      throw ParseError("bad ply face indices", line_no);
  }
  if (skipped) *skipped = skip_count;
  return mesh;
}

std::string lowercase_ext(const std::string& path) {
  std::string ext = fs::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

}  // namespace

Mesh load_mesh(const std::string& path, int* skipped_records) {
  std::ifstream in(path);
  if (!in) throw UnsupportedFormat("cannot open mesh file: " + path);
  const std::string ext = lowercase_ext(path);
  Mesh mesh;
  if (ext == ".off") mesh = parse_off(in, skipped_records);
  else if (ext == ".obj") mesh = parse_obj(in, skipped_records);
  else if (ext == ".ply") mesh = parse_ply(in, skipped_records);
  else throw UnsupportedFormat("unsupported mesh format: " + path);
  mesh.provenance = path;
  const int nv = mesh.n_vertices();
  for (int f = 0; f < mesh.n_faces(); ++f)
    for (int c = 0; c < 3; ++c)
      if (mesh.faces(f, c) < 0 || mesh.faces(f, c) >= nv)
        throw ParseError("face index out of range in " + path, 0);
  return mesh;
}

void write_mesh_off(const std::string& path, const Mesh& mesh) {
  std::ofstream out(path);
  if (!out) throw UnsupportedFormat("cannot open for writing: " + path);
  out << "OFF\n" << mesh.n_vertices() << ' ' << mesh.n_faces() << " 0\n";
  out << std::setprecision(17);
  for (int i = 0; i < mesh.n_vertices(); ++i)
    out << mesh.vertices(i, 0) << ' ' << mesh.vertices(i, 1) << ' ' << mesh.vertices(i, 2) << '\n';
  for (int f = 0; f < mesh.n_faces(); ++f)
    out << "3 " << mesh.faces(f, 0) << ' ' << mesh.faces(f, 1) << ' ' << mesh.faces(f, 2) << '\n';
}

std::vector<int> load_labels(const std::string& path, int n_elements) {
  std::ifstream in(path);
  if (!in) throw UnsupportedFormat("cannot open label file: " + path);
  std::vector<int> labels;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto pos = line.find_first_not_of(" \t\r\n");
    if (pos == std::string::npos) continue;
    std::istringstream ls(line);
    int v = 0;
    if (!(ls >> v)) throw ParseError("bad label row in " + path, line_no);
    labels.push_back(v);
  }
  if (static_cast<int>(labels.size()) != n_elements)
    throw LengthMismatch("label count " + std::to_string(labels.size()) + " != expected " +
                         std::to_string(n_elements) + " in " + path);
  return labels;
}

void write_labels(const std::string& path, const std::vector<int>& labels) {
  std::ofstream out(path);
  if (!out) throw UnsupportedFormat("cannot open for writing: " + path);
  for (int v : labels) out << v << '\n';
}

Palette load_palette(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UnsupportedFormat("cannot open palette file: " + path);
  Palette palette;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    int r, g, b, cls;
    if (!(ls >> r >> g >> b >> cls)) throw ParseError("bad palette row in " + path, line_no);
    palette[{r, g, b}] = cls;
  }
  return palette;
}

std::vector<int> load_color_labels(const std::string& path, const Palette& palette,
                                   int n_elements) {
  std::ifstream in(path);
  if (!in) throw UnsupportedFormat("cannot open colour label file: " + path);
  std::vector<int> labels;
  std::string line, misses;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    int r, g, b;
    if (!(ls >> r >> g >> b)) throw ParseError("bad colour row in " + path, line_no);
    auto it = palette.find({r, g, b});
    if (it == palette.end()) {
      misses += " (" + std::to_string(r) + "," + std::to_string(g) + "," + std::to_string(b) + ")";
      labels.push_back(-1);
    } else {
      labels.push_back(it->second);
    }
  }
  if (!misses.empty()) throw UnknownColor("colours missing from palette:" + misses);
  if (static_cast<int>(labels.size()) != n_elements)
    throw LengthMismatch("colour label count mismatch in " + path);
  return labels;
}

std::pair<Points, std::vector<int>> load_annotated_points(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UnsupportedFormat("cannot open annotated point file: " + path);
  std::vector<Eigen::Vector3d> pts;
  std::vector<int> labels;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream ls(line);
    Eigen::Vector3d p;
    int lab;
    if (!(ls >> p[0] >> p[1] >> p[2] >> lab))
      throw ParseError("bad annotated point row in " + path, line_no);
    pts.push_back(p);
    labels.push_back(lab);
  }
  Points m(static_cast<int>(pts.size()), 3);
  for (size_t i = 0; i < pts.size(); ++i) m.row(static_cast<int>(i)) = pts[i];
  return {m, labels};
}

namespace {

// Icosahedron + midpoint subdivision, vertices projected to the unit sphere.
Mesh icosphere(int level) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> v = {
      {-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
      {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
      {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<std::array<int, 3>> f = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find({key.first, key.second});
      if (it != midpoint.end()) return it->second;
      Eigen::Vector3d m = (v[a] + v[b]).normalized();
      v.push_back(m);
      int id = static_cast<int>(v.size()) - 1;
      midpoint[{key.first, key.second}] = id;
      return id;
    };
    std::vector<std::array<int, 3>> nf;
    nf.reserve(f.size() * 4);
    for (const auto& t : f) {
      int a = mid(t[0], t[1]), b = mid(t[1], t[2]), c = mid(t[2], t[0]);
      nf.push_back({t[0], a, c});
      nf.push_back({t[1], b, a});
      nf.push_back({t[2], c, b});
      nf.push_back({a, b, c});
    }
    f = std::move(nf);
  }
  Mesh mesh;
  mesh.vertices.resize(static_cast<int>(v.size()), 3);
  for (size_t i = 0; i < v.size(); ++i) mesh.vertices.row(static_cast<int>(i)) = v[i];
  mesh.faces.resize(static_cast<int>(f.size()), 3);
  for (size_t i = 0; i < f.size(); ++i)
    for (int c = 0; c < 3; ++c) mesh.faces(static_cast<int>(i), c) = f[i][c];
  return mesh;
}

Mesh make_icosphere_cap(const SynthParams& p, std::uint64_t seed) {
  Mesh mesh = icosphere(p.level);
  const double cos_cap = std::cos(p.cap_angle_deg * M_PI / 180.0);
  const int nv = mesh.n_vertices();
  mesh.vertex_labels.assign(nv, 0);
  auto rng = make_rng(seed, "synth/icosphere_cap");
  for (int i = 0; i < nv; ++i) {
    const double z = mesh.vertices(i, 2);
    if (z > cos_cap) mesh.vertex_labels[i] = 1;
    // Bulge the labelled cap outward so intrinsic descriptors can see it.
    double radial = 1.0;
    if (z > cos_cap && cos_cap < 1.0) {
      const double s = (z - cos_cap) / (1.0 - cos_cap);
      radial += p.bump_amplitude * s * s * (3.0 - 2.0 * s);
    }
    radial += p.jitter * uniform_in(rng, -1.0, 1.0);
    mesh.vertices.row(i) *= radial;
  }
  mesh.provenance = "synth:icosphere_cap";
  return mesh;
}

Mesh make_tube_arch(const SynthParams& p, std::uint64_t seed) {
  const int nr = p.rings, ns = p.ring_segments;
  const double a0 = p.sweep_start_deg * M_PI / 180.0;
  const double a1 = p.sweep_end_deg * M_PI / 180.0;
  Mesh mesh;
  mesh.vertices.resize(nr * ns, 3);
  auto rng = make_rng(seed, "synth/tube_arch");
  for (int t = 0; t < nr; ++t) {
    const double s = static_cast<double>(t) / (nr - 1);
    const double ang = a0 + s * (a1 - a0);
    // Taper along the sweep: deliberate asymmetry so PCA sign statistics are
    // bounded away from zero.
    const double tube_r = p.minor_radius * (1.2 - 0.5 * s);
    const Eigen::Vector3d center(p.major_radius * std::cos(ang),
                                 p.major_radius * std::sin(ang), 0.0);
    const Eigen::Vector3d radial(std::cos(ang), std::sin(ang), 0.0);
    const Eigen::Vector3d vertical = Eigen::Vector3d::UnitZ();
    for (int q = 0; q < ns; ++q) {
      const double psi = 2.0 * M_PI * q / ns;
      Eigen::Vector3d pt =
          center + tube_r * (std::cos(psi) * radial + std::sin(psi) * vertical);
      if (p.jitter > 0.0)
        pt += p.jitter * Eigen::Vector3d(uniform_in(rng, -1, 1), uniform_in(rng, -1, 1),
                                         uniform_in(rng, -1, 1));
      mesh.vertices.row(t * ns + q) = pt;
    }
  }
  mesh.faces.resize(2 * (nr - 1) * ns, 3);
  mesh.face_labels.assign(2 * (nr - 1) * ns, 0);
  int f = 0;
  for (int t = 0; t + 1 < nr; ++t) {
    const int sector = std::min(p.n_sectors - 1, t * p.n_sectors / std::max(1, nr - 1));
    for (int q = 0; q < ns; ++q) {
      const int q2 = (q + 1) % ns;
      const int v00 = t * ns + q, v01 = t * ns + q2;
      const int v10 = (t + 1) * ns + q, v11 = (t + 1) * ns + q2;
      mesh.faces.row(f) << v00, v10, v01;
      mesh.face_labels[f++] = sector;
      mesh.faces.row(f) << v01, v10, v11;
      mesh.face_labels[f++] = sector;
    }
  }
  mesh.provenance = "synth:tube_arch";
  return mesh;
}

Mesh make_torus(const SynthParams& p, std::uint64_t seed) {
  const int nu = p.torus_major_segments, nv = p.torus_minor_segments;
  Mesh mesh;
  mesh.vertices.resize(nu * nv, 3);
  auto rng = make_rng(seed, "synth/torus");
  for (int u = 0; u < nu; ++u) {
    const double a = 2.0 * M_PI * u / nu;
    for (int v = 0; v < nv; ++v) {
      const double b = 2.0 * M_PI * v / nv;
      double r = p.minor_radius + p.jitter * uniform_in(rng, -1.0, 1.0);
      mesh.vertices.row(u * nv + v) << (p.major_radius + r * std::cos(b)) * std::cos(a),
          (p.major_radius + r * std::cos(b)) * std::sin(a), r * std::sin(b);
    }
  }
  mesh.faces.resize(2 * nu * nv, 3);
  int f = 0;
  for (int u = 0; u < nu; ++u) {
    const int u2 = (u + 1) % nu;
    for (int v = 0; v < nv; ++v) {
      const int v2 = (v + 1) % nv;
      mesh.faces.row(f++) << u * nv + v, u2 * nv + v, u * nv + v2;
      mesh.faces.row(f++) << u * nv + v2, u2 * nv + v, u2 * nv + v2;
    }
  }
  mesh.provenance = "synth:torus";
  return mesh;
}

Mesh make_tetrahedron() {
  Mesh mesh;
  mesh.vertices.resize(4, 3);
  mesh.vertices << 1, 1, 1, 1, -1, -1, -1, 1, -1, -1, -1, 1;
  mesh.vertices /= std::sqrt(3.0);
  mesh.faces.resize(4, 3);
  // Outward winding.
  mesh.faces << 0, 1, 2, 0, 3, 1, 0, 2, 3, 1, 3, 2;
  mesh.provenance = "synth:tetrahedron";
  return mesh;
}

}  // namespace

Mesh synth_mesh(SynthKind kind, const SynthParams& params, std::uint64_t seed) {
  switch (kind) {
    case SynthKind::icosphere_cap: return make_icosphere_cap(params, seed);
    case SynthKind::tube_arch: return make_tube_arch(params, seed);
    case SynthKind::torus: return make_torus(params, seed);
    case SynthKind::tetrahedron: return make_tetrahedron();
  }
  throw ConfigMismatch("unknown synth kind");
}

SynthKind synth_kind_from_string(const std::string& name) {
  if (name == "icosphere_cap") return SynthKind::icosphere_cap;
  if (name == "tube_arch") return SynthKind::tube_arch;
  if (name == "torus") return SynthKind::torus;
  if (name == "tetrahedron") return SynthKind::tetrahedron;
  throw ConfigMismatch("unknown synth kind: " + name);
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UnsupportedFormat("cannot open manifest: " + path);
  nlohmann::json j;
  in >> j;
  DatasetManifest m;
  m.dataset_tag = j.value("dataset_tag", "custom");
  m.cache_dir = j.value("cache_dir", "cache");
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&base](const std::string& p) -> std::string {
    if (p.empty()) return p;
    fs::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };
  m.cache_dir = resolve(m.cache_dir);
  // Known clinical tags pin the supervision level.
  std::string expected_level;
  if (m.dataset_tag == "intra") expected_level = "vertex";
  else if (m.dataset_tag == "liver") expected_level = "edge";
  else if (m.dataset_tag == "teeth3ds" || m.dataset_tag == "iosseg") expected_level = "face";
  for (const auto& e : j.at("meshes")) {
    ManifestEntry entry;
    entry.id = e.at("id").get<std::string>();
    entry.mesh_path = resolve(e.at("mesh").get<std::string>());
    entry.label_path = resolve(e.value("labels", ""));
    entry.label_level = e.value("level", "vertex");
    entry.points_path = resolve(e.value("points", ""));
    entry.palette_path = resolve(e.value("palette", ""));
    entry.fold = e.value("fold", -1);
    if (!expected_level.empty() && !entry.label_path.empty() &&
        entry.label_level != expected_level)
      throw ConfigMismatch("manifest entry " + entry.id + ": label level '" +
                           entry.label_level + "' inconsistent with dataset tag '" +
                           m.dataset_tag + "'");
    for (const std::string& f : {entry.mesh_path, entry.label_path, entry.points_path, entry.palette_path})
      if (!f.empty() && !fs::exists(f))
        throw UnsupportedFormat("manifest references missing file: " + f);
    m.meshes.push_back(std::move(entry));
  }
  return m;
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
  nlohmann::json j;
  j["dataset_tag"] = manifest.dataset_tag;
  j["cache_dir"] = manifest.cache_dir;
  j["meshes"] = nlohmann::json::array();
  for (const auto& e : manifest.meshes) {
    nlohmann::json je;
    je["id"] = e.id;
    je["mesh"] = e.mesh_path;
    if (!e.label_path.empty()) je["labels"] = e.label_path;
    je["level"] = e.label_level;
    if (!e.points_path.empty()) je["points"] = e.points_path;
    if (!e.palette_path.empty()) je["palette"] = e.palette_path;
    if (e.fold >= 0) je["fold"] = e.fold;
    j["meshes"].push_back(je);
  }
  std::ofstream out(path);
  if (!out) throw UnsupportedFormat("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
}

}  // namespace eams
