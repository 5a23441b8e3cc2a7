#pragma once

#include <limits>
#include <unordered_map>

#include "eams/autodiff.hpp"
#include "eams/features.hpp"

namespace eams {

enum class EncoderVariant { base, sra, vn };
EncoderVariant variant_from_string(const std::string& name);
std::string to_string(EncoderVariant v);

enum class OutputLevel { vertex, edge, face };
OutputLevel output_level_from_string(const std::string& name);
std::string to_string(OutputLevel level);

struct EncoderConfig {
  std::vector<int> hidden_dims = {128, 128, 128};  // one message-passing block per entry
  int coord_channels = 2;
  EncoderVariant variant = EncoderVariant::base;
  int sra_regions = 32;
  int sra_heads = 4;
  bool sra_use_geometry = true;   // append distance-to-CoM to the assignment input
  int virtual_nodes = 16;
  double dropout = 0.1;
  int node_feature_dim = 9;
  int edge_feature_dim = 3;
  int n_classes = 2;
  OutputLevel output = OutputLevel::vertex;

  int n_layers() const { return static_cast<int>(hidden_dims.size()); }
  int width() const { return hidden_dims.empty() ? 0 : hidden_dims[0]; }
  void validate() const;

  /// Shipped per-dataset defaults (feature dims, classes, token counts).
  static EncoderConfig preset(DatasetTag tag, EncoderVariant variant);
};

/// Flat named parameter store with AdamW moment slots, ordered by creation.
struct ParamStore {
  std::vector<std::string> names;
  std::vector<ad::Matrix> values;
  std::vector<ad::Matrix> adam_m;
  std::vector<ad::Matrix> adam_v;
  std::unordered_map<std::string, int> index;

  int add(const std::string& name, int rows, int cols);
  bool has(const std::string& name) const { return index.count(name) > 0; }
  ad::Matrix& at(const std::string& name);
  const ad::Matrix& at(const std::string& name) const;
  int size() const { return static_cast<int>(values.size()); }
  std::int64_t parameter_count() const;
};

struct ModelState {
  EncoderConfig config;
  ParamStore params;
  std::uint64_t seed = 0;
  std::int64_t opt_step = 0;
  int epoch = 0;
  // Scheduler state, persisted so resumed runs continue bit-identically.
  double lr = -1.0;  // negative: not yet initialised from TrainConfig
  double plateau_best = std::numeric_limits<double>::infinity();
  int plateau_stale = 0;
};

/// Declares and initialises every parameter the configured variant touches.
ModelState init_model(const EncoderConfig& config, std::uint64_t seed);

/// Registers stored parameters as tape leaves on first use.
class ParamVars {
 public:
  ParamVars(ad::Tape& tape, const ParamStore& store, bool trainable = true)
      : tape_(tape), store_(store), trainable_(trainable) {}
  /// Bind to already-registered tape variables (one per store slot), e.g. for
  /// finite-difference harnesses.
  ParamVars(ad::Tape& tape, const ParamStore& store, const std::vector<ad::Var>& bound)
      : tape_(tape), store_(store), trainable_(true), bound_(bound) {}

  ad::Var operator[](const std::string& name);
  bool has(const std::string& name) const { return store_.has(name); }
  /// Store-aligned gradients (zero matrices for untouched parameters).
  std::vector<ad::Matrix> collect_grads();

 private:
  ad::Tape& tape_;
  const ParamStore& store_;
  bool trainable_;
  std::vector<ad::Var> bound_;
  std::unordered_map<std::string, ad::Var> cache_;
  std::vector<std::pair<int, ad::Var>> used_;
};

/// Batched graphs: node/edge/face arrays concatenated with per-graph ids.
struct GraphBatch {
  Eigen::MatrixXd node_scalars;  // N x D
  Eigen::MatrixXd edge_scalars;  // E_directed x 3
  std::vector<Points> coord_channels;

  Eigen::Matrix<int, Eigen::Dynamic, 2> directed_edges;  // (source, target)
  Eigen::Matrix<int, Eigen::Dynamic, 2> undirected_edges;
  std::vector<int> directed_to_undirected;
  Faces faces;

  std::vector<int> node_graph;   // graph id per node
  std::vector<int> graph_node_offsets;  // G+1 prefix
  int n_graphs = 0;

  std::vector<int> targets;  // per element of `level` (edge level: undirected)
  OutputLevel level = OutputLevel::vertex;

  int n_nodes() const { return static_cast<int>(node_scalars.rows()); }
  int n_directed_edges() const { return static_cast<int>(directed_edges.rows()); }
  int n_undirected_edges() const { return static_cast<int>(undirected_edges.rows()); }
  int n_faces() const { return static_cast<int>(faces.rows()); }
};

struct MeshSample {
  FeatureSet features;
  AdjacencyIndex adjacency;
  Faces faces;
  std::vector<int> targets;
  OutputLevel level = OutputLevel::vertex;
};

GraphBatch make_batch(const std::vector<const MeshSample*>& samples);

// --- layer ops (exposed for the property/equivariance suites) ---

struct EmnnLayerOut {
  ad::Var h;
  std::vector<ad::Var> coords;
  ad::Var edge_message_sum;  // N x H
  ad::Var face_message_sum;  // N x H
};

EmnnLayerOut emnn_layer(ad::Tape& t, ParamVars& params, const std::string& prefix, ad::Var h,
                        const std::vector<ad::Var>& coords, ad::Var edge_scalars,
                        const GraphBatch& batch, const EncoderConfig& config);

ad::Var global_node_update(ad::Tape& t, ParamVars& params, const std::string& prefix,
                           ad::Var h, const GraphBatch& batch);

struct SraOut {
  ad::Var h;
  ad::Var assignment;  // N x K, rows sum to 1
};

SraOut sra_update(ad::Tape& t, ParamVars& params, ad::Var h,
                  const std::vector<ad::Var>& coords, const GraphBatch& batch,
                  const EncoderConfig& config);

struct VnLayerOut {
  ad::Var h;
  std::vector<ad::Var> coords;
  ad::Var virtual_feats;   // (G*V) x H
  ad::Var virtual_coords;  // (G*V) x 3
};

VnLayerOut vn_layer(ad::Tape& t, ParamVars& params, const std::string& prefix, ad::Var h,
                    const std::vector<ad::Var>& coords, ad::Var edge_scalars,
                    ad::Var virtual_feats, ad::Var virtual_coords, const GraphBatch& batch,
                    const EncoderConfig& config);

ad::Var decode_nodes(ad::Tape& t, ParamVars& params, ad::Var h, const EncoderConfig& config,
                     bool training, std::mt19937_64& rng);

/// Directed edge logits from z_ji = [h_src || h_dst || e || psi(|x_src - x_dst|)].
ad::Var decode_edges_directed(ad::Tape& t, ParamVars& params, ad::Var h, ad::Var edge_scalars,
                              ad::Var positions, const GraphBatch& batch,
                              const EncoderConfig& config, bool training, std::mt19937_64& rng);

/// Mean of the two directed logits per undirected edge.
ad::Var undirect_edge_logits(ad::Tape& t, ad::Var directed_logits, const GraphBatch& batch);

/// Node-axis normalisation with learned affine, per graph.
ad::Var graph_norm(ad::Tape& t, ad::Var x, ad::Var gamma, ad::Var beta,
                   const std::vector<int>& node_graph, int n_graphs);

/// MLP whose parameters live under `prefix` (layers W0/b0, W1/b1, ...).
ad::Var mlp(ad::Tape& t, ParamVars& params, const std::string& prefix, ad::Var x,
            bool activate_final, double dropout_p = 0.0, bool training = false,
            std::mt19937_64* rng = nullptr);

struct ForwardResult {
  ad::Var logits;          // per vertex / undirected edge / face
  ad::Var node_embeddings; // final h
  ad::Var assignment;      // SRA only
  ad::Var virtual_feats;   // VN only
  ad::Var virtual_coords;  // VN only
  std::vector<ad::Var> coords;  // final coordinate channels
};

ForwardResult model_forward(ad::Tape& t, ParamVars& params, const GraphBatch& batch,
                            const EncoderConfig& config, bool training,
                            std::mt19937_64& dropout_rng);

}  // namespace eams
