#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "eams/mesh.hpp"

namespace eams {

/// Parses OFF, OBJ (v/f records, 1-based) or ASCII PLY. Triangles only;
/// unsupported records are skipped and counted.
Mesh load_mesh(const std::string& path, int* skipped_records = nullptr);

/// Lossless ASCII OFF writer (17 significant digits round-trip doubles).
void write_mesh_off(const std::string& path, const Mesh& mesh);

/// One integer per line; throws LengthMismatch when the row count differs
/// from n_elements (callers may then fall back to nearest-point remapping).
std::vector<int> load_labels(const std::string& path, int n_elements);
void write_labels(const std::string& path, const std::vector<int>& labels);

using Palette = std::map<std::array<int, 3>, int>;  // (r,g,b) -> class id

/// CSV rows "r,g,b,class".
Palette load_palette(const std::string& path);

/// Face-colour mode: lines "r g b"; unknown triplets raise UnknownColor
/// listing the offenders.
std::vector<int> load_color_labels(const std::string& path, const Palette& palette,
                                   int n_elements);

/// Annotated point file: lines "x y z label", used for nearest-point remaps.
std::pair<Points, std::vector<int>> load_annotated_points(const std::string& path);

enum class SynthKind { icosphere_cap, tube_arch, torus, tetrahedron };

struct SynthParams {
  int level = 2;                  // icosphere subdivision
  double cap_angle_deg = 30.0;    // cap label threshold
  double bump_amplitude = 0.25;   // radial bulge of the cap region
  double jitter = 0.0;            // radial noise amplitude
  int n_sectors = 8;              // tube_arch fake tooth classes
  int rings = 48;                 // tube_arch sweep resolution
  int ring_segments = 12;         // tube_arch cross-section resolution
  double sweep_start_deg = -80.0; // asymmetric sweep keeps frame sign stats away from 0
  double sweep_end_deg = 100.0;
  double major_radius = 1.0;
  double minor_radius = 0.25;
  int torus_major_segments = 24;
  int torus_minor_segments = 12;
};

/// Deterministic synthetic fixtures. icosphere_cap labels vertices inside the
/// cap (z > cos(cap_angle) on the unit sphere) and bulges that region radially
/// so the labels are recoverable from intrinsic geometry; tube_arch labels
/// faces by angular sector.
Mesh synth_mesh(SynthKind kind, const SynthParams& params, std::uint64_t seed);

SynthKind synth_kind_from_string(const std::string& name);

struct ManifestEntry {
  std::string id;
  std::string mesh_path;
  std::string label_path;      // may be empty (unlabeled geometry)
  std::string label_level;     // vertex | edge | face
  std::string points_path;     // optional annotated points for remapping
  std::string palette_path;    // optional colour palette for face labels
  int fold = -1;
};

struct DatasetManifest {
  std::string dataset_tag;
  std::string cache_dir;
  std::vector<ManifestEntry> meshes;
};

/// Relative paths in the manifest resolve against the manifest's directory;
/// every referenced file must exist.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const DatasetManifest& manifest);

}  // namespace eams
