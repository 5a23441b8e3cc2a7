#include "eams/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

namespace fs = std::filesystem;

namespace eams {

namespace {

// One process owns the cache directory at a time.
class CacheLock {
 public:
  explicit CacheLock(const std::string& cache_root) {
    if (cache_root.empty()) return;
    fs::create_directories(cache_root);
    path_ = fs::path(cache_root) / ".lock";
    std::FILE* f = std::fopen(path_.string().c_str(), "wx");
    if (f == nullptr)
      throw std::runtime_error("cache directory is locked: " + path_.string() +
                               " exists (remove it if a previous run crashed)");
    std::fclose(f);
    held_ = true;
  }
  ~CacheLock() {
    if (held_) {
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }
  CacheLock(const CacheLock&) = delete;
  CacheLock& operator=(const CacheLock&) = delete;

 private:
  fs::path path_;
  bool held_ = false;
};

}  // namespace

std::vector<DataItem> load_dataset(const DatasetManifest& manifest, int k_eigenpairs,
                                   double eig_tol, const std::string& cache_root) {
  CacheLock lock(cache_root);
  std::vector<DataItem> items;
  items.reserve(manifest.meshes.size());
  for (const ManifestEntry& entry : manifest.meshes) {
    Mesh raw = load_mesh(entry.mesh_path);
    const OutputLevel level = output_level_from_string(entry.label_level);

    if (!entry.label_path.empty()) {
      // Element count depends on the label level; edge counts need adjacency.
      int n_elements = 0;
      AdjacencyIndex raw_adj;
      switch (level) {
        case OutputLevel::vertex: n_elements = raw.n_vertices(); break;
        case OutputLevel::face: n_elements = raw.n_faces(); break;
        case OutputLevel::edge:
          raw_adj = build_adjacency(raw);
          n_elements = raw_adj.n_undirected_edges();
          break;
      }
      std::vector<int> labels;
      if (!entry.palette_path.empty()) {
        labels = load_color_labels(entry.label_path, load_palette(entry.palette_path), n_elements);
      } else {
        try {
          labels = load_labels(entry.label_path, n_elements);
        } catch (const LengthMismatch&) {
          if (entry.points_path.empty() || level != OutputLevel::vertex) throw;
          auto [points, point_labels] = load_annotated_points(entry.points_path);
          labels = convert_labels(raw, LabelConversion::nearest_point_remap, &points,
                                  &point_labels);
        }
      }
      switch (level) {
        case OutputLevel::vertex: raw.vertex_labels = labels; break;
        case OutputLevel::face: raw.face_labels = labels; break;
        case OutputLevel::edge: raw.edge_labels = labels; break;
      }
    }

    DataItem item;
    item.id = entry.id;
    item.mesh = clean_mesh(raw);
    if (level == OutputLevel::edge && !raw.edge_labels.empty() && item.mesh.edge_labels.empty())
      throw LengthMismatch("edge labels for " + entry.id +
                           " reference connectivity removed by cleanup");
    item.adjacency = build_adjacency(item.mesh);
    const std::uint64_t hash = content_hash(item.mesh);
    bool have_basis = false;
    if (!cache_root.empty() && has_spectral_cache(cache_root, entry.id)) {
      try {
        item.basis = read_spectral_cache(cache_root, entry.id, hash);
        have_basis = true;
      } catch (const HashMismatch&) {
        have_basis = false;  // stale cache: recompute below
      }
    }
    if (!have_basis) {
      const Mesh normalized = normalize_coords(item.mesh).mesh;
      const LaplaceBeltrami lb = assemble_lb(normalized, face_geometry(normalized));
      const int k = std::min(k_eigenpairs, item.mesh.n_vertices());
      item.basis = eig_smallest(lb, k, eig_tol);
      if (!cache_root.empty()) write_spectral_cache(cache_root, entry.id, hash, item.basis);
    }
    item.level = level;
    switch (level) {
      case OutputLevel::vertex: item.targets = item.mesh.vertex_labels; break;
      case OutputLevel::face: item.targets = item.mesh.face_labels; break;
      case OutputLevel::edge: item.targets = item.mesh.edge_labels; break;
    }
    items.push_back(std::move(item));
  }
  return items;
}

InvarianceReport invariance_harness(const ModelState& state, const std::vector<DataItem>& items,
                                    const FeatureConfig& fc) {
  InvarianceReport report;
  for (const DataItem& item : items) {
    auto logits_for = [&state, &item, &fc](const RigidSample* rigid) {
      MeshSample sample = featurize_item(item, fc, rigid);
      std::vector<const MeshSample*> ptrs = {&sample};
      GraphBatch batch = make_batch(ptrs);
      ad::Tape tape;
      ParamVars params(tape, state.params, false);
      auto rng = make_rng(0, "invariance");
      ForwardResult fwd =
          model_forward(tape, params, batch, state.config, /*training=*/false, rng);
      return tape.value(fwd.logits);
    };
    const ad::Matrix reference = logits_for(nullptr);
    for (const auto& [name, rigid] : perturbation_conditions()) {
      if (name == "baseline") continue;
      const ad::Matrix perturbed = logits_for(&rigid);
      const double dev = (perturbed - reference).cwiseAbs().maxCoeff();
      auto& worst = report.per_condition[name];
      worst = std::max(worst, dev);
      report.max_logit_deviation = std::max(report.max_logit_deviation, dev);
      for (int i = 0; i < reference.rows(); ++i) {
        int a = 0, b = 0;
        reference.row(i).maxCoeff(&a);
        perturbed.row(i).maxCoeff(&b);
        if (a != b) report.argmax_identical = false;
      }
    }
  }
  return report;
}

EncoderConfig desk_config(EncoderVariant variant, int width, int n_layers, int n_classes) {
  EncoderConfig cfg;
  cfg.hidden_dims.assign(n_layers, width);
  cfg.variant = variant;
  cfg.sra_regions = 4;
  cfg.sra_heads = std::max(1, width / 4);
  cfg.virtual_nodes = 2;
  cfg.node_feature_dim = 9;
  cfg.n_classes = n_classes;
  cfg.output = OutputLevel::vertex;
  return cfg;
}

double full_model_gradcheck(const EncoderConfig& config, std::uint64_t seed) {
  // Small bumpy sphere, <= 30 vertices (level-0 icosphere plus jitter).
  SynthParams params;
  params.level = 0;
  params.cap_angle_deg = 55.0;
  params.bump_amplitude = 0.3;
  params.jitter = 0.02;
  Mesh mesh = synth_mesh(SynthKind::icosphere_cap, params, seed);
  DataItem item = preprocess_mesh("gradcheck", mesh, 8, 1e-10);

  FeatureConfig fc = FeatureConfig::preset(DatasetTag::intra);
  MeshSample sample = featurize_item(item, fc);
  std::vector<const MeshSample*> ptrs = {&sample};
  GraphBatch batch = make_batch(ptrs);

  ModelState state = init_model(config, seed);
  LossWeights weights;
  weights.vn_subsample = 8;

  ad::GradcheckProblem problem;
  problem.inputs = state.params.values;
  const ParamStore& store = state.params;
  const EncoderConfig cfg = state.config;
  problem.build = [&store, &batch, cfg, weights, seed](ad::Tape& t,
                                                       const std::vector<ad::Var>& vars) {
    ParamVars params(t, store, vars);
    auto dropout_rng = make_rng(seed, "gc_dropout");
    auto subsample_rng = make_rng(seed, "gc_subsample");
    ForwardResult fwd = model_forward(t, params, batch, cfg, /*training=*/false, dropout_rng);
    return batch_loss(t, fwd, batch, cfg, weights, subsample_rng);
  };
  return ad::gradcheck(problem, 1e-6);
}

}  // namespace eams
