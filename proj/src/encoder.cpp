#include "eams/encoder.hpp"

#include <cmath>

namespace eams {

using ad::Tape;
using ad::Var;

EncoderVariant variant_from_string(const std::string& name) {
  if (name == "base") return EncoderVariant::base;
  if (name == "sra") return EncoderVariant::sra;
  if (name == "vn") return EncoderVariant::vn;
  throw ConfigMismatch("unknown encoder variant: " + name);
}

std::string to_string(EncoderVariant v) {
  switch (v) {
    case EncoderVariant::base: return "base";
    case EncoderVariant::sra: return "sra";
    case EncoderVariant::vn: return "vn";
  }
  return "base";
}

OutputLevel output_level_from_string(const std::string& name) {
  if (name == "vertex") return OutputLevel::vertex;
  if (name == "edge") return OutputLevel::edge;
  if (name == "face") return OutputLevel::face;
  throw ConfigMismatch("unknown output level: " + name);
}

std::string to_string(OutputLevel level) {
  switch (level) {
    case OutputLevel::vertex: return "vertex";
    case OutputLevel::edge: return "edge";
    case OutputLevel::face: return "face";
  }
  return "vertex";
}

void EncoderConfig::validate() const {
  if (hidden_dims.empty()) throw ConfigMismatch("encoder: empty hidden_dims");
  for (int d : hidden_dims)
    if (d != hidden_dims[0] || d <= 0)
      throw ConfigMismatch("encoder: hidden dims must be equal and positive");
  if (variant == EncoderVariant::sra && width() % sra_heads != 0)
    throw ConfigMismatch("encoder: attention heads must divide the hidden width");
  if (coord_channels < 1) throw ConfigMismatch("encoder: need at least one coordinate channel");
  if (n_classes < 2) throw ConfigMismatch("encoder: need at least two classes");
}

EncoderConfig EncoderConfig::preset(DatasetTag tag, EncoderVariant variant) {
  EncoderConfig cfg;
  cfg.variant = variant;
  switch (tag) {
    case DatasetTag::intra:
    case DatasetTag::custom:
      cfg.node_feature_dim = 9;
      cfg.n_classes = 2;
      cfg.output = OutputLevel::vertex;
      cfg.virtual_nodes = 16;
      break;
    case DatasetTag::liver:
      cfg.node_feature_dim = 19;
      cfg.n_classes = 3;
      cfg.output = OutputLevel::edge;
      cfg.virtual_nodes = 8;
      break;
    case DatasetTag::teeth3ds:
    case DatasetTag::iosseg:
      cfg.node_feature_dim = 12;
      cfg.n_classes = 17;  // gingiva + 16 squashed FDI classes
      cfg.output = OutputLevel::face;
      cfg.virtual_nodes = 16;
      break;
  }
  return cfg;
}

int ParamStore::add(const std::string& name, int rows, int cols) {
  if (index.count(name)) throw ConfigMismatch("parameter declared twice: " + name);
  index[name] = static_cast<int>(values.size());
  names.push_back(name);
  values.push_back(ad::Matrix::Zero(rows, cols));
  adam_m.push_back(ad::Matrix::Zero(rows, cols));
  adam_v.push_back(ad::Matrix::Zero(rows, cols));
  return static_cast<int>(values.size()) - 1;
}

ad::Matrix& ParamStore::at(const std::string& name) {
  auto it = index.find(name);
  if (it == index.end()) throw ConfigMismatch("unknown parameter: " + name);
  return values[it->second];
}

const ad::Matrix& ParamStore::at(const std::string& name) const {
  auto it = index.find(name);
  if (it == index.end()) throw ConfigMismatch("unknown parameter: " + name);
  return values[it->second];
}

std::int64_t ParamStore::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& v : values) n += v.size();
  return n;
}

Var ParamVars::operator[](const std::string& name) {
  auto it = cache_.find(name);
  if (it != cache_.end()) return it->second;
  auto idx = store_.index.find(name);
  if (idx == store_.index.end()) throw ConfigMismatch("forward uses undeclared parameter: " + name);
  Var v = bound_.empty() ? tape_.input(store_.values[idx->second], trainable_)
                         : bound_[idx->second];
  cache_[name] = v;
  used_.push_back({idx->second, v});
  return v;
}

std::vector<ad::Matrix> ParamVars::collect_grads() {
  std::vector<ad::Matrix> grads(store_.size());
  for (int i = 0; i < store_.size(); ++i)
    grads[i] = ad::Matrix::Zero(store_.values[i].rows(), store_.values[i].cols());
  for (const auto& [idx, var] : used_) grads[idx] = tape_.grad(var);
  return grads;
}

namespace {

void declare_linear(ParamStore& store, const std::string& prefix, int in, int out) {
  store.add(prefix + "/W", in, out);
  store.add(prefix + "/b", 1, out);
}

// Layers named <prefix>/W0,b0,W1,b1,...
void declare_mlp(ParamStore& store, const std::string& prefix, const std::vector<int>& dims) {
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    store.add(prefix + "/W" + std::to_string(l), dims[l], dims[l + 1]);
    store.add(prefix + "/b" + std::to_string(l), 1, dims[l + 1]);
  }
}

void declare_all(ParamStore& store, const EncoderConfig& cfg) {
  const int h = cfg.width();
  const int c = cfg.coord_channels;
  declare_mlp(store, "embed", {cfg.node_feature_dim, h});
  for (int l = 0; l < cfg.n_layers(); ++l) {
    const std::string p = "layer" + std::to_string(l);
    declare_mlp(store, p + "/phi_e", {2 * h + cfg.edge_feature_dim + c, h, h});
    declare_mlp(store, p + "/phi_f", {2 * h + c, h, h});
    const int h_in = cfg.variant == EncoderVariant::vn ? 4 * h : 3 * h;
    declare_mlp(store, p + "/phi_h", {h_in, h, h});
    declare_mlp(store, p + "/phi_x", {h, h, c});
    declare_mlp(store, p + "/phi_n", {h, h, c});
    store.add(p + "/norm/gamma", 1, h);
    store.add(p + "/norm/beta", 1, h);
    declare_mlp(store, p + "/global/phi_g", {h, h, h});
    declare_mlp(store, p + "/global/phi_u", {2 * h, h, h});
    if (cfg.variant == EncoderVariant::vn) {
      declare_mlp(store, p + "/vn/phi_rv", {2 * h + 2, h, h});
      declare_mlp(store, p + "/vn/virt2node", {h, h, 1});
      declare_mlp(store, p + "/vn/node2virt", {h, h, 1});
      declare_mlp(store, p + "/vn/phi_v", {2 * h, h, h});
    }
  }
  if (cfg.variant == EncoderVariant::vn) store.add("vn/seed", 1, h);
  if (cfg.variant == EncoderVariant::sra) {
    declare_mlp(store, "sra/phi_a", {h + (cfg.sra_use_geometry ? 1 : 0), h, cfg.sra_regions});
    store.add("sra/alpha", 1, 1);
    declare_linear(store, "sra/phi_proj", h, h);
    store.add("sra/mixer/ln1/gamma", 1, h);
    store.add("sra/mixer/ln1/beta", 1, h);
    declare_linear(store, "sra/mixer/Wq", h, h);
    declare_linear(store, "sra/mixer/Wk", h, h);
    declare_linear(store, "sra/mixer/Wv", h, h);
    declare_linear(store, "sra/mixer/Wo", h, h);
    store.add("sra/mixer/ln2/gamma", 1, h);
    store.add("sra/mixer/ln2/beta", 1, h);
    declare_mlp(store, "sra/mixer/ffn", {h, h, h});
  }
  if (cfg.output == OutputLevel::edge) {
    declare_mlp(store, "dec/psi", {1, h, 16});
    declare_mlp(store, "dec/f_edge", {2 * h + cfg.edge_feature_dim + 16, h, h, h, cfg.n_classes});
  } else {
    declare_mlp(store, "dec/f_dec", {h, h, h, h, cfg.n_classes});
  }
}

bool is_coordinate_gate(const std::string& name) {
  return name.find("/phi_x/") != std::string::npos || name.find("/phi_n/") != std::string::npos ||
         name.find("/virt2node/") != std::string::npos ||
         name.find("/node2virt/") != std::string::npos;
}

void init_values(ParamStore& store, std::uint64_t seed) {
  for (int i = 0; i < store.size(); ++i) {
    const std::string& name = store.names[i];
    ad::Matrix& m = store.values[i];
    const std::string leaf = name.substr(name.rfind('/') + 1);
    if (leaf == "gamma") {
      m.setOnes();
      continue;
    }
    if (leaf == "beta" || leaf[0] == 'b') {
      m.setZero();
      continue;
    }
    if (name == "sra/alpha") {
      m.setConstant(0.1);
      continue;
    }
    auto rng = make_rng(seed, name);
    if (name == "vn/seed") {
      for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = uniform_in(rng, -0.1, 0.1);
      continue;
    }
    // Glorot-uniform weights; coordinate-gate output layers start small so
    // early coordinate updates stay bounded.
    const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    const double factor = (is_coordinate_gate(name) && leaf == "W1") ? 0.1 : 1.0;
    for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = factor * uniform_in(rng, -a, a);
  }
}

}  // namespace

ModelState init_model(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  ModelState state;
  state.config = config;
  state.seed = seed;
  declare_all(state.params, config);
  init_values(state.params, derive_seed(seed, "init"));
  return state;
}

Var mlp(Tape& t, ParamVars& params, const std::string& prefix, Var x, bool activate_final,
        double dropout_p, bool training, std::mt19937_64* rng) {
  Var cur = x;
  for (int l = 0;; ++l) {
    const std::string w = prefix + "/W" + std::to_string(l);
    if (!params.has(w)) {
      if (l == 0) throw ConfigMismatch("mlp: no layers under " + prefix);
      break;
    }
    cur = ad::add(t, ad::matmul(t, cur, params[w]), params[prefix + "/b" + std::to_string(l)]);
    const bool last = !params.has(prefix + "/W" + std::to_string(l + 1));
    if (!last || activate_final) {
      cur = ad::silu(t, cur);
      if (dropout_p > 0.0 && rng != nullptr) cur = ad::dropout(t, cur, dropout_p, training, *rng);
    }
  }
  return cur;
}

Var graph_norm(Tape& t, Var x, Var gamma, Var beta, const std::vector<int>& node_graph,
               int n_graphs) {
  Var mu = ad::segment_mean(t, x, node_graph, n_graphs);
  Var centered = ad::sub(t, x, ad::gather_rows(t, mu, node_graph));
  Var var = ad::segment_mean(t, ad::mul(t, centered, centered), node_graph, n_graphs);
  Var sd = ad::sqrt_elem(t, ad::add_scalar(t, var, 1e-5));
  Var y = ad::div(t, centered, ad::gather_rows(t, sd, node_graph));
  return ad::add(t, ad::mul(t, y, gamma), beta);
}

namespace {

struct Topology {
  std::vector<int> edge_src, edge_dst;
  std::vector<int> face_recv, face_a, face_b;  // one entry per face corner
};

Topology build_topology(const GraphBatch& batch) {
  Topology topo;
  const int ne = batch.n_directed_edges();
  topo.edge_src.resize(ne);
  topo.edge_dst.resize(ne);
  for (int e = 0; e < ne; ++e) {
    topo.edge_src[e] = batch.directed_edges(e, 0);
    topo.edge_dst[e] = batch.directed_edges(e, 1);
  }
  const int nf = batch.n_faces();
  topo.face_recv.reserve(3 * nf);
  topo.face_a.reserve(3 * nf);
  topo.face_b.reserve(3 * nf);
  for (int f = 0; f < nf; ++f) {
    // Cyclic rotations keep the winding, so all three corners see the same
    // oriented normal.
    for (int c = 0; c < 3; ++c) {
      topo.face_recv.push_back(batch.faces(f, c));
      topo.face_a.push_back(batch.faces(f, (c + 1) % 3));
      topo.face_b.push_back(batch.faces(f, (c + 2) % 3));
    }
  }
  return topo;
}

struct BranchOut {
  Var edge_messages;  // E x H
  Var face_messages;  // 3F x H
  Var edge_sum;       // N x H
  Var face_sum;       // N x H
  std::vector<Var> coord_delta;
};

BranchOut message_branches(Tape& t, ParamVars& params, const std::string& prefix, Var h,
                           const std::vector<Var>& coords, Var edge_scalars,
                           const Topology& topo, int n_nodes) {
  BranchOut out;
  const int c_channels = static_cast<int>(coords.size());

  // Edge branch: m_ij = phi_e(h_i, h_j, e_ij, per-channel |X_i - X_j|^2).
  std::vector<Var> edge_in;
  edge_in.push_back(ad::gather_rows(t, h, topo.edge_dst));
  edge_in.push_back(ad::gather_rows(t, h, topo.edge_src));
  edge_in.push_back(edge_scalars);
  std::vector<Var> edge_disp(c_channels);  // x_i - x_j per channel
  for (int c = 0; c < c_channels; ++c) {
    edge_disp[c] = ad::sub(t, ad::gather_rows(t, coords[c], topo.edge_dst),
                           ad::gather_rows(t, coords[c], topo.edge_src));
    edge_in.push_back(ad::rowwise_sqnorm(t, edge_disp[c]));
  }
  out.edge_messages = mlp(t, params, prefix + "/phi_e", ad::concat_cols(t, edge_in), true);
  out.edge_sum = ad::segment_sum(t, out.edge_messages, topo.edge_dst, n_nodes);

  // Face branch: m_ijk = phi_f(h_i, h_j + h_k, per-channel |(x_j-x_i)x(x_k-x_i)|).
  std::vector<Var> face_in;
  face_in.push_back(ad::gather_rows(t, h, topo.face_recv));
  face_in.push_back(ad::add(t, ad::gather_rows(t, h, topo.face_a),
                            ad::gather_rows(t, h, topo.face_b)));
  std::vector<Var> face_cross(c_channels);
  for (int c = 0; c < c_channels; ++c) {
    Var xr = ad::gather_rows(t, coords[c], topo.face_recv);
    Var ea = ad::sub(t, ad::gather_rows(t, coords[c], topo.face_a), xr);
    Var eb = ad::sub(t, ad::gather_rows(t, coords[c], topo.face_b), xr);
    face_cross[c] = ad::cross_rows(t, ea, eb);
    face_in.push_back(ad::sqrt_elem(t, ad::rowwise_sqnorm(t, face_cross[c])));
  }
  out.face_messages = mlp(t, params, prefix + "/phi_f", ad::concat_cols(t, face_in), true);
  out.face_sum = ad::segment_sum(t, out.face_messages, topo.face_recv, n_nodes);

  // Coordinate deltas: sum_j (x_i - x_j) phi_x(m_ij) + sum_f n_f phi_n(m_ijk),
  // applied channel-wise with per-channel scalar gates.
  Var gate_x = mlp(t, params, prefix + "/phi_x", out.edge_messages, false);
  Var gate_n = mlp(t, params, prefix + "/phi_n", out.face_messages, false);
  out.coord_delta.resize(c_channels);
  for (int c = 0; c < c_channels; ++c) {
    Var dx_edge = ad::segment_sum(t, ad::mul(t, edge_disp[c], ad::slice_cols(t, gate_x, c, 1)),
                                  topo.edge_dst, n_nodes);
    Var dx_face = ad::segment_sum(t, ad::mul(t, face_cross[c], ad::slice_cols(t, gate_n, c, 1)),
                                  topo.face_recv, n_nodes);
    out.coord_delta[c] = ad::add(t, dx_edge, dx_face);
  }
  return out;
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta) {
  Var mu = ad::rowwise_mean(t, x);
  Var centered = ad::sub(t, x, mu);
  Var var = ad::rowwise_mean(t, ad::mul(t, centered, centered));
  Var sd = ad::sqrt_elem(t, ad::add_scalar(t, var, 1e-5));
  Var y = ad::div(t, centered, sd);
  return ad::add(t, ad::mul(t, y, gamma), beta);
}

Var linear(Tape& t, ParamVars& params, const std::string& prefix, Var x) {
  return ad::add(t, ad::matmul(t, x, params[prefix + "/W"]), params[prefix + "/b"]);
}

// One-layer transformer encoder (pre-LN, sra_heads heads, width-sized FFN).
Var sra_mixer(Tape& t, ParamVars& params, Var tokens, const EncoderConfig& cfg) {
  const int h = cfg.width();
  const int dk = h / cfg.sra_heads;
  Var norm1 = layer_norm(t, tokens, params["sra/mixer/ln1/gamma"], params["sra/mixer/ln1/beta"]);
  Var q = linear(t, params, "sra/mixer/Wq", norm1);
  Var k = linear(t, params, "sra/mixer/Wk", norm1);
  Var v = linear(t, params, "sra/mixer/Wv", norm1);
  std::vector<Var> heads;
  for (int hd = 0; hd < cfg.sra_heads; ++hd) {
    Var qh = ad::slice_cols(t, q, hd * dk, dk);
    Var kh = ad::slice_cols(t, k, hd * dk, dk);
    Var vh = ad::slice_cols(t, v, hd * dk, dk);
    Var att = ad::softmax_rows(
        t, ad::scale(t, ad::matmul(t, qh, ad::transpose(t, kh)), 1.0 / std::sqrt(double(dk))));
    heads.push_back(ad::matmul(t, att, vh));
  }
  Var attended = linear(t, params, "sra/mixer/Wo", ad::concat_cols(t, heads));
  Var x1 = ad::add(t, tokens, attended);
  Var norm2 = layer_norm(t, x1, params["sra/mixer/ln2/gamma"], params["sra/mixer/ln2/beta"]);
  Var ffn = mlp(t, params, "sra/mixer/ffn", norm2, false);
  return ad::add(t, x1, ffn);
}

}  // namespace

EmnnLayerOut emnn_layer(Tape& t, ParamVars& params, const std::string& prefix, Var h,
                        const std::vector<Var>& coords, Var edge_scalars,
                        const GraphBatch& batch, const EncoderConfig& config) {
  (void)config;
  const Topology topo = build_topology(batch);
  BranchOut br = message_branches(t, params, prefix, h, coords, edge_scalars, topo,
                                  batch.n_nodes());
  EmnnLayerOut out;
  out.edge_message_sum = br.edge_sum;
  out.face_message_sum = br.face_sum;
  out.h = mlp(t, params, prefix + "/phi_h",
              ad::concat_cols(t, {h, br.edge_sum, br.face_sum}), false);
  out.coords.resize(coords.size());
  for (size_t c = 0; c < coords.size(); ++c)
    out.coords[c] = ad::add(t, coords[c], br.coord_delta[c]);
  return out;
}

Var global_node_update(Tape& t, ParamVars& params, const std::string& prefix, Var h,
                       const GraphBatch& batch) {
  Var pooled = ad::segment_mean(t, h, batch.node_graph, batch.n_graphs);
  Var token = mlp(t, params, prefix + "/phi_g", pooled, false);
  Var per_node = ad::gather_rows(t, token, batch.node_graph);
  Var update = mlp(t, params, prefix + "/phi_u", ad::concat_cols(t, {h, per_node}), false);
  return ad::add(t, h, update);
}

SraOut sra_update(Tape& t, ParamVars& params, Var h, const std::vector<Var>& coords,
                  const GraphBatch& batch, const EncoderConfig& config) {
  Var assign_in = h;
  if (config.sra_use_geometry) {
    Var centroid = ad::segment_mean(t, coords[0], batch.node_graph, batch.n_graphs);
    Var rel = ad::sub(t, coords[0], ad::gather_rows(t, centroid, batch.node_graph));
    Var dist = ad::sqrt_elem(t, ad::add_scalar(t, ad::rowwise_sqnorm(t, rel), 1e-12));
    assign_in = ad::concat_cols(t, {h, dist});
  }
  Var assignment = ad::softmax_rows(t, mlp(t, params, "sra/phi_a", assign_in, false));

  std::vector<Var> updated;
  updated.reserve(batch.n_graphs);
  for (int g = 0; g < batch.n_graphs; ++g) {
    const int begin = batch.graph_node_offsets[g];
    const int len = batch.graph_node_offsets[g + 1] - begin;
    Var a_g = ad::slice_rows(t, assignment, begin, len);
    Var h_g = ad::slice_rows(t, h, begin, len);
    Var tokens = ad::matmul(t, ad::transpose(t, a_g), h_g);  // K x H weighted pooling
    Var mixed = sra_mixer(t, params, tokens, config);
    Var projected = linear(t, params, "sra/phi_proj", mixed);
    updated.push_back(ad::matmul(t, a_g, projected));
  }
  Var update = batch.n_graphs == 1 ? updated[0] : ad::concat_rows(t, updated);
  SraOut out;
  out.assignment = assignment;
  out.h = ad::add(t, h, ad::mul(t, update, params["sra/alpha"]));
  return out;
}

VnLayerOut vn_layer(Tape& t, ParamVars& params, const std::string& prefix, Var h,
                    const std::vector<Var>& coords, Var edge_scalars, Var virtual_feats,
                    Var virtual_coords, const GraphBatch& batch, const EncoderConfig& config) {
  const Topology topo = build_topology(batch);
  const int n = batch.n_nodes();
  BranchOut br = message_branches(t, params, prefix, h, coords, edge_scalars, topo, n);

  const int v_per_graph = config.virtual_nodes;
  const int n_virtual = batch.n_graphs * v_per_graph;
  std::vector<int> virt_graph(n_virtual);
  for (int k = 0; k < n_virtual; ++k) virt_graph[k] = k / v_per_graph;

  // Pairs (node i, virtual k) within each graph; node-major order.
  std::vector<int> pair_node, pair_virt;
  pair_node.reserve(static_cast<size_t>(n) * v_per_graph);
  pair_virt.reserve(static_cast<size_t>(n) * v_per_graph);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < v_per_graph; ++k) {
      pair_node.push_back(i);
      pair_virt.push_back(batch.node_graph[i] * v_per_graph + k);
    }

  Var centroid = ad::segment_mean(t, coords[0], batch.node_graph, batch.n_graphs);
  Var corr = ad::rowwise_sqnorm(
      t, ad::sub(t, virtual_coords, ad::gather_rows(t, centroid, virt_graph)));

  Var pair_diff = ad::sub(t, ad::gather_rows(t, coords[0], pair_node),
                          ad::gather_rows(t, virtual_coords, pair_virt));  // x_i - u_k
  Var pair_in = ad::concat_cols(
      t, {ad::gather_rows(t, h, pair_node), ad::gather_rows(t, virtual_feats, pair_virt),
          ad::rowwise_sqnorm(t, pair_diff), ad::gather_rows(t, corr, pair_virt)});
  Var pair_msg = mlp(t, params, prefix + "/vn/phi_rv", pair_in, true);

  Var msg_to_node = ad::segment_mean(t, pair_msg, pair_node, n);
  Var gate_to_node = mlp(t, params, prefix + "/vn/virt2node", pair_msg, false);
  Var dx_virtual = ad::segment_mean(t, ad::mul(t, pair_diff, gate_to_node), pair_node, n);

  Var msg_to_virt = ad::segment_mean(t, pair_msg, pair_virt, n_virtual);
  Var gate_to_virt = mlp(t, params, prefix + "/vn/node2virt", pair_msg, false);
  Var du = ad::segment_mean(t, ad::mul(t, ad::neg(t, pair_diff), gate_to_virt), pair_virt,
                            n_virtual);  // (u_k - x_i) applied toward the virtual side

  VnLayerOut out;
  out.virtual_feats = ad::add(
      t, virtual_feats,
      mlp(t, params, prefix + "/vn/phi_v", ad::concat_cols(t, {virtual_feats, msg_to_virt}), false));
  out.virtual_coords = ad::add(t, virtual_coords, du);
  out.coords.resize(coords.size());
  for (size_t c = 0; c < coords.size(); ++c) {
    Var updated = ad::add(t, coords[c], br.coord_delta[c]);
    // Virtual exchange moves the position channel only.
    out.coords[c] = (c == 0) ? ad::add(t, updated, dx_virtual) : updated;
  }
  out.h = mlp(t, params, prefix + "/phi_h",
              ad::concat_cols(t, {h, br.edge_sum, br.face_sum, msg_to_node}), false);
  return out;
}

Var decode_nodes(Tape& t, ParamVars& params, Var h, const EncoderConfig& config, bool training,
                 std::mt19937_64& rng) {
  return mlp(t, params, "dec/f_dec", h, false, config.dropout, training, &rng);
}

Var decode_edges_directed(Tape& t, ParamVars& params, Var h, Var edge_scalars, Var positions,
                          const GraphBatch& batch, const EncoderConfig& config, bool training,
                          std::mt19937_64& rng) {
  const int ne = batch.n_directed_edges();
  std::vector<int> src(ne), dst(ne);
  for (int e = 0; e < ne; ++e) {
    src[e] = batch.directed_edges(e, 0);
    dst[e] = batch.directed_edges(e, 1);
  }
  Var disp = ad::sub(t, ad::gather_rows(t, positions, src), ad::gather_rows(t, positions, dst));
  Var dist = ad::sqrt_elem(t, ad::add_scalar(t, ad::rowwise_sqnorm(t, disp), 1e-24));
  Var embedded = mlp(t, params, "dec/psi", dist, false);
  Var z = ad::concat_cols(t, {ad::gather_rows(t, h, src), ad::gather_rows(t, h, dst),
                              edge_scalars, embedded});
  return mlp(t, params, "dec/f_edge", z, false, config.dropout, training, &rng);
}

Var undirect_edge_logits(Tape& t, Var directed_logits, const GraphBatch& batch) {
  const int nu = batch.n_undirected_edges();
  std::vector<int> first(nu, -1), second(nu, -1);
  for (int d = 0; d < batch.n_directed_edges(); ++d) {
    const int u = batch.directed_to_undirected[d];
    (first[u] < 0 ? first[u] : second[u]) = d;
  }
  Var a = ad::gather_rows(t, directed_logits, first);
  Var b = ad::gather_rows(t, directed_logits, second);
  return ad::scale(t, ad::add(t, a, b), 0.5);
}

GraphBatch make_batch(const std::vector<const MeshSample*>& samples) {
  if (samples.empty()) throw ShapeMismatch("make_batch: no samples");
  GraphBatch batch;
  batch.level = samples[0]->level;
  batch.n_graphs = static_cast<int>(samples.size());
  const int channels = static_cast<int>(samples[0]->features.coord_state.size());

  int n_nodes = 0, n_dir = 0, n_und = 0, n_faces = 0;
  for (const auto* s : samples) {
    if (s->level != batch.level) throw ShapeMismatch("make_batch: mixed supervision levels");
    n_nodes += static_cast<int>(s->features.node_scalars.rows());
    n_dir += s->adjacency.n_directed_edges();
    n_und += s->adjacency.n_undirected_edges();
    n_faces += static_cast<int>(s->faces.rows());
  }

  batch.node_scalars.resize(n_nodes, samples[0]->features.node_scalars.cols());
  batch.edge_scalars.resize(n_dir, samples[0]->features.edge_scalars.cols());
  batch.coord_channels.assign(channels, Points(n_nodes, 3));
  batch.directed_edges.resize(n_dir, 2);
  batch.undirected_edges.resize(n_und, 2);
  batch.directed_to_undirected.resize(n_dir);
  batch.faces.resize(n_faces, 3);
  batch.node_graph.resize(n_nodes);
  batch.graph_node_offsets.assign(1, 0);

  int node_at = 0, dir_at = 0, und_at = 0, face_at = 0;
  for (int g = 0; g < batch.n_graphs; ++g) {
    const MeshSample& s = *samples[g];
    const int nv = static_cast<int>(s.features.node_scalars.rows());
    batch.node_scalars.middleRows(node_at, nv) = s.features.node_scalars;
    for (int c = 0; c < channels; ++c)
      batch.coord_channels[c].middleRows(node_at, nv) = s.features.coord_state[c];
    for (int i = 0; i < nv; ++i) batch.node_graph[node_at + i] = g;

    const int nd = s.adjacency.n_directed_edges();
    batch.edge_scalars.middleRows(dir_at, nd) = s.features.edge_scalars;
    for (int d = 0; d < nd; ++d) {
      batch.directed_edges(dir_at + d, 0) = s.adjacency.directed_edges(d, 0) + node_at;
      batch.directed_edges(dir_at + d, 1) = s.adjacency.directed_edges(d, 1) + node_at;
      batch.directed_to_undirected[dir_at + d] = s.adjacency.directed_to_undirected[d] + und_at;
    }
    const int nu = s.adjacency.n_undirected_edges();
    for (int u = 0; u < nu; ++u) {
      batch.undirected_edges(und_at + u, 0) = s.adjacency.undirected_edges(u, 0) + node_at;
      batch.undirected_edges(und_at + u, 1) = s.adjacency.undirected_edges(u, 1) + node_at;
    }
    const int nf = static_cast<int>(s.faces.rows());
    for (int f = 0; f < nf; ++f)
      for (int c = 0; c < 3; ++c) batch.faces(face_at + f, c) = s.faces(f, c) + node_at;

    batch.targets.insert(batch.targets.end(), s.targets.begin(), s.targets.end());
    node_at += nv;
    dir_at += nd;
    und_at += nu;
    face_at += nf;
    batch.graph_node_offsets.push_back(node_at);
  }
  return batch;
}

ForwardResult model_forward(Tape& t, ParamVars& params, const GraphBatch& batch,
                            const EncoderConfig& config, bool training,
                            std::mt19937_64& dropout_rng) {
  config.validate();
  if (batch.node_scalars.cols() != config.node_feature_dim)
    throw ConfigMismatch("model_forward: node feature dim " +
                         std::to_string(batch.node_scalars.cols()) + " != config " +
                         std::to_string(config.node_feature_dim));
  if (batch.edge_scalars.cols() != config.edge_feature_dim)
    throw ConfigMismatch("model_forward: edge feature dim mismatch");
  if (static_cast<int>(batch.coord_channels.size()) != config.coord_channels)
    throw ConfigMismatch("model_forward: coordinate channel count mismatch");

  ForwardResult res;
  Var h = ad::add(t, ad::matmul(t, t.input(batch.node_scalars), params["embed/W0"]),
                  params["embed/b0"]);
  Var e_scalars = t.input(batch.edge_scalars);
  std::vector<Var> coords;
  for (const Points& x : batch.coord_channels) coords.push_back(t.input(x));

  Var v_feats, v_coords;
  if (config.variant == EncoderVariant::vn) {
    const int n_virtual = batch.n_graphs * config.virtual_nodes;
    std::vector<int> seed_rows(n_virtual, 0), virt_graph(n_virtual);
    for (int k = 0; k < n_virtual; ++k) virt_graph[k] = k / config.virtual_nodes;
    v_feats = ad::gather_rows(t, params["vn/seed"], seed_rows);
    Var centroid = ad::segment_mean(t, coords[0], batch.node_graph, batch.n_graphs);
    v_coords = ad::gather_rows(t, centroid, virt_graph);
  }

  const int sra_after = (config.n_layers() - 1) / 2;
  for (int l = 0; l < config.n_layers(); ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    if (config.variant == EncoderVariant::vn) {
      VnLayerOut out = vn_layer(t, params, prefix, h, coords, e_scalars, v_feats, v_coords,
                                batch, config);
      h = out.h;
      coords = out.coords;
      v_feats = out.virtual_feats;
      v_coords = out.virtual_coords;
    } else {
      EmnnLayerOut out = emnn_layer(t, params, prefix, h, coords, e_scalars, batch, config);
      h = out.h;
      coords = out.coords;
    }
    h = graph_norm(t, h, params[prefix + "/norm/gamma"], params[prefix + "/norm/beta"],
                   batch.node_graph, batch.n_graphs);
    h = global_node_update(t, params, prefix + "/global", h, batch);
    if (config.variant == EncoderVariant::sra && l == sra_after) {
      SraOut out = sra_update(t, params, h, coords, batch, config);
      h = out.h;
      res.assignment = out.assignment;
    }
  }

  res.node_embeddings = h;
  res.coords = coords;
  res.virtual_feats = v_feats;
  res.virtual_coords = v_coords;

  switch (config.output) {
    case OutputLevel::vertex:
      res.logits = decode_nodes(t, params, h, config, training, dropout_rng);
      break;
    case OutputLevel::face: {
      const int nf = batch.n_faces();
      std::vector<int> f0(nf), f1(nf), f2(nf);
      for (int f = 0; f < nf; ++f) {
        f0[f] = batch.faces(f, 0);
        f1[f] = batch.faces(f, 1);
        f2[f] = batch.faces(f, 2);
      }
      Var face_emb = ad::scale(
          t,
          ad::add(t, ad::add(t, ad::gather_rows(t, h, f0), ad::gather_rows(t, h, f1)),
                  ad::gather_rows(t, h, f2)),
          1.0 / 3.0);
      res.logits = decode_nodes(t, params, face_emb, config, training, dropout_rng);
      break;
    }
    case OutputLevel::edge: {
      Var directed = decode_edges_directed(t, params, h, e_scalars, coords[0], batch, config,
                                           training, dropout_rng);
      res.logits = undirect_edge_logits(t, directed, batch);
      break;
    }
  }
  return res;
}

}  // namespace eams
