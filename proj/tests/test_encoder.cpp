#include <doctest.h>

#include <filesystem>

#include "eams/io.hpp"
#include "eams/pipeline.hpp"

using namespace eams;
using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

struct Fixture {
  DataItem item;
  GraphBatch batch;
  MeshSample sample;
};

Fixture make_fixture(std::uint64_t seed = 0, int level = 1) {
  SynthParams p;
  p.level = level;
  p.jitter = 0.03;
  p.bump_amplitude = 0.3;
  Mesh mesh = synth_mesh(SynthKind::icosphere_cap, p, seed);
  Fixture f;
  f.item = preprocess_mesh("fix", mesh, 8, 1e-9);
  f.sample = featurize_item(f.item, FeatureConfig::preset(DatasetTag::intra));
  std::vector<const MeshSample*> ptrs = {&f.sample};
  f.batch = make_batch(ptrs);
  return f;
}

// Registers batch tensors on a tape and runs one emnn layer.
struct LayerRun {
  Var h_out;
  std::vector<Matrix> coords_out;
  Matrix h_value;
};

LayerRun run_emnn(const ModelState& state, const GraphBatch& batch, const Matrix& h0,
                  const std::vector<Points>& coords_in) {
  Tape t;
  ParamVars params(t, state.params, false);
  Var h = t.input(h0);
  std::vector<Var> coords;
  for (const auto& c : coords_in) coords.push_back(t.input(c));
  Var e = t.input(batch.edge_scalars);
  EmnnLayerOut out = emnn_layer(t, params, "layer0", h, coords, e, batch, state.config);
  LayerRun run;
  run.h_value = t.value(out.h);
  for (Var c : out.coords) run.coords_out.push_back(t.value(c));
  return run;
}

}  // namespace

TEST_CASE("parameter budget: every shipped config stays under 2M") {
  for (DatasetTag tag :
       {DatasetTag::intra, DatasetTag::liver, DatasetTag::teeth3ds, DatasetTag::iosseg}) {
    for (EncoderVariant variant :
         {EncoderVariant::base, EncoderVariant::sra, EncoderVariant::vn}) {
      ModelState state = init_model(EncoderConfig::preset(tag, variant), 0);
      const std::string label = to_string(tag) + "/" + to_string(variant) + ": " +
                                std::to_string(state.params.parameter_count()) + " parameters";
      INFO(label);
      CHECK(state.params.parameter_count() < 2'000'000);
      CHECK(state.params.parameter_count() > 0);
    }
  }
}

TEST_CASE("zero coordinate gates leave coordinates unchanged") {
  Fixture f = make_fixture();
  ModelState state = init_model(desk_config(EncoderVariant::base), 3);
  for (int i = 0; i < state.params.size(); ++i)
    if (state.params.names[i].find("phi_x") != std::string::npos ||
        state.params.names[i].find("phi_n") != std::string::npos)
      state.params.values[i].setZero();
  auto rng = make_rng(1, "h0");
  Matrix h0(f.batch.n_nodes(), state.config.width());
  for (Eigen::Index i = 0; i < h0.size(); ++i) h0.data()[i] = uniform_in(rng, -1, 1);
  LayerRun run = run_emnn(state, f.batch, h0, f.batch.coord_channels);
  for (size_t c = 0; c < run.coords_out.size(); ++c)
    CHECK((run.coords_out[c] - f.batch.coord_channels[c]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("emnn layer is permutation-equivariant") {
  Fixture f = make_fixture(2);
  ModelState state = init_model(desk_config(EncoderVariant::base), 5);
  const int n = f.batch.n_nodes();
  auto rng = make_rng(2, "perm");
  Matrix h0(n, state.config.width());
  for (Eigen::Index i = 0; i < h0.size(); ++i) h0.data()[i] = uniform_in(rng, -1, 1);
  LayerRun base = run_emnn(state, f.batch, h0, f.batch.coord_channels);

  //

  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[uniform_index(rng, i + 1)]);

  GraphBatch permuted = f.batch;
  Matrix h0p(n, h0.cols());
  for (int i = 0; i < n; ++i) {
    h0p.row(perm[i]) = h0.row(i);
    permuted.node_scalars.row(perm[i]) = f.batch.node_scalars.row(i);
    for (size_t c = 0; c < permuted.coord_channels.size(); ++c)
      permuted.coord_channels[c].row(perm[i]) = f.batch.coord_channels[c].row(i);
  }
  for (int e = 0; e < permuted.n_directed_edges(); ++e) {
    permuted.directed_edges(e, 0) = perm[f.batch.directed_edges(e, 0)];
    permuted.directed_edges(e, 1) = perm[f.batch.directed_edges(e, 1)];
  }
  for (int u = 0; u < permuted.n_undirected_edges(); ++u) {
    permuted.undirected_edges(u, 0) = perm[f.batch.undirected_edges(u, 0)];
    permuted.undirected_edges(u, 1) = perm[f.batch.undirected_edges(u, 1)];
  }
  for (int fc = 0; fc < permuted.n_faces(); ++fc)
    for (int c = 0; c < 3; ++c) permuted.faces(fc, c) = perm[f.batch.faces(fc, c)];

  LayerRun got = run_emnn(state, permuted, h0p, permuted.coord_channels);
  for (int i = 0; i < n; ++i) {
    CHECK((got.h_value.row(perm[i]) - base.h_value.row(i)).cwiseAbs().maxCoeff() < 1e-9);
    for (size_t c = 0; c < got.coords_out.size(); ++c)
      CHECK((got.coords_out[c].row(perm[i]) - base.coords_out[c].row(i)).cwiseAbs().maxCoeff() <
            1e-9);
  }
}

TEST_CASE("global node: isolation across graphs and single-vertex graphs") {
  // Two graphs; perturbing one graph's features leaves the other unchanged.
  Fixture f1 = make_fixture(3, 0);
  Fixture f2 = make_fixture(4, 0);
  std::vector<const MeshSample*> both = {&f1.sample, &f2.sample};
  GraphBatch batch = make_batch(both);
  ModelState state = init_model(desk_config(EncoderVariant::base), 7);

  auto forward_h = [&state, &batch](double bump) {
    Tape t;
    ParamVars params(t, state.params, false);
    Matrix scalars = batch.node_scalars;
    const int n1 = batch.graph_node_offsets[1];
    for (int i = 0; i < n1; ++i) scalars(i, 0) += bump;  // perturb graph 0 only
    Var h = ad::add(t, ad::matmul(t, t.input(scalars), params["embed/W0"]),
                    params["embed/b0"]);
    Var out = global_node_update(t, params, "layer0/global", h, batch);
    return Matrix(t.value(out));
  };
  Matrix base = forward_h(0.0);
  Matrix bumped = forward_h(0.5);
  const int n1 = batch.graph_node_offsets[1];
  CHECK((bumped.topRows(n1) - base.topRows(n1)).cwiseAbs().maxCoeff() > 1e-6);
  CHECK(bumped.bottomRows(base.rows() - n1) == base.bottomRows(base.rows() - n1));

  // A single-vertex graph builds its token from that vertex alone.
  GraphBatch single;
  single.node_scalars = Matrix::Ones(1, 9);
  single.edge_scalars.resize(0, 3);
  single.coord_channels = {Points::Zero(1, 3), Points::Zero(1, 3)};
  single.directed_edges.resize(0, 2);
  single.undirected_edges.resize(0, 2);
  single.faces.resize(0, 3);
  single.node_graph = {0};
  single.graph_node_offsets = {0, 1};
  single.n_graphs = 1;
  Tape t;
  ParamVars params(t, state.params, false);
  Var h = ad::add(t, ad::matmul(t, t.input(single.node_scalars), params["embed/W0"]),
                  params["embed/b0"]);
  Var out = global_node_update(t, params, "layer0/global", h, single);
  CHECK(t.value(out).allFinite());
}

TEST_CASE("sra update: K=1 pooling, alpha=0 identity, rows sum to one") {
  Fixture f = make_fixture(5);
  EncoderConfig cfg = desk_config(EncoderVariant::sra);
  cfg.sra_regions = 1;
  ModelState state = init_model(cfg, 9);

  auto rng = make_rng(3, "sra_h");
  Matrix h0(f.batch.n_nodes(), cfg.width());
  for (Eigen::Index i = 0; i < h0.size(); ++i) h0.data()[i] = uniform_in(rng, -1, 1);

  auto run = [&](double alpha) {
    state.params.at("sra/alpha")(0, 0) = alpha;
    Tape t;
    ParamVars params(t, state.params, false);
    std::vector<Var> coords;
    for (const auto& c : f.batch.coord_channels) coords.push_back(t.input(c));
    SraOut out = sra_update(t, params, t.input(h0), coords, f.batch, cfg);
    return std::make_pair(Matrix(t.value(out.h)), Matrix(t.value(out.assignment)));
  };

  auto [h_zero, a1] = run(0.0);
  CHECK(h_zero == h0);  // alpha = 0 leaves features untouched
  // K=1: the assignment is the all-ones column.
  CHECK(a1.cols() == 1);
  CHECK((a1.array() - 1.0).abs().maxCoeff() < 1e-15);

  EncoderConfig cfg8 = desk_config(EncoderVariant::sra);
  cfg8.sra_regions = 8;
  ModelState st8 = init_model(cfg8, 11);
  Tape t;
  ParamVars params(t, st8.params, false);
  std::vector<Var> coords;
  for (const auto& c : f.batch.coord_channels) coords.push_back(t.input(c));
  SraOut out = sra_update(t, params, t.input(h0), coords, f.batch, cfg8);
  const Matrix& a8 = t.value(out.assignment);
  for (int i = 0; i < a8.rows(); ++i) CHECK(std::abs(a8.row(i).sum() - 1.0) < 1e-12);
}

TEST_CASE("vn layer with zero parameters keeps the virtual state at rest") {
  Fixture f = make_fixture(6);
  EncoderConfig cfg = desk_config(EncoderVariant::vn);
  cfg.virtual_nodes = 1;
  ModelState state = init_model(cfg, 13);
  for (auto& value : state.params.values) value.setZero();

  // Centre the position channel so the graph centroid is the origin.
  GraphBatch batch = f.batch;
  Eigen::RowVector3d centroid = batch.coord_channels[0].colwise().mean();
  batch.coord_channels[0].rowwise() -= centroid;

  Tape t;
  ParamVars params(t, state.params, false);
  std::vector<Var> coords;
  for (const auto& c : batch.coord_channels) coords.push_back(t.input(c));
  Var h = t.input(Matrix::Zero(batch.n_nodes(), cfg.width()));
  Var v = t.input(Matrix::Zero(cfg.virtual_nodes, cfg.width()));
  Var u = t.input(batch.coord_channels[0].colwise().mean());  // the centroid, V=1
  VnLayerOut out = vn_layer(t, params, "layer0", h, coords, t.input(batch.edge_scalars), v, u,
                            batch, cfg);
  // With all-zero gates the virtual coordinate stays at the centroid and the
  // correlation feature |u - centroid|^2 is exactly zero.
  CHECK(t.value(out.virtual_coords).cwiseAbs().maxCoeff() < 1e-12);
  for (size_t c = 0; c < out.coords.size(); ++c)
    CHECK((t.value(out.coords[c]) - batch.coord_channels[c]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("decoders: zero final weights give uniform logits; eval is stable") {
  Fixture f = make_fixture(7);
  EncoderConfig cfg = desk_config(EncoderVariant::base);
  ModelState state = init_model(cfg, 15);
  state.params.at("dec/f_dec/W3").setZero();
  state.params.at("dec/f_dec/b3").setZero();
  auto run = [&] {
    Tape t;
    ParamVars params(t, state.params, false);
    auto rng = make_rng(0, "eval");
    ForwardResult fwd = model_forward(t, params, f.batch, cfg, false, rng);
    return Matrix(t.value(fwd.logits));
  };
  Matrix logits = run();
  CHECK(logits.cwiseAbs().maxCoeff() == 0.0);  // uniform
  CHECK(run() == logits);                      // dropout off in eval: identical
}

TEST_CASE("edge decoding: symmetric inputs give direction-symmetric logits") {
  Fixture f = make_fixture(8);
  EncoderConfig cfg = desk_config(EncoderVariant::base);
  cfg.output = OutputLevel::edge;
  cfg.n_classes = 3;
  ModelState state = init_model(cfg, 17);

  GraphBatch batch = f.batch;
  batch.level = OutputLevel::edge;
  Tape t;
  ParamVars params(t, state.params, false);
  auto rng = make_rng(0, "eval");
  // Identical embeddings on every vertex make z_ij = z_ji.
  Matrix h = Matrix::Ones(batch.n_nodes(), cfg.width());
  Var directed = decode_edges_directed(t, params, t.input(h), t.input(batch.edge_scalars),
                                       t.input(batch.coord_channels[0]), batch, cfg, false, rng);
  const Matrix& d = t.value(directed);
  CHECK(d.cols() == 3);
  for (int e = 0; e < batch.n_directed_edges(); ++e) {
    for (int e2 = e + 1; e2 < batch.n_directed_edges(); ++e2) {
      if (batch.directed_edges(e, 0) == batch.directed_edges(e2, 1) &&
          batch.directed_edges(e, 1) == batch.directed_edges(e2, 0) &&
          batch.edge_scalars.row(e) == batch.edge_scalars.row(e2)) {
        CHECK((d.row(e) - d.row(e2)).cwiseAbs().maxCoeff() < 1e-12);
      }
    }
  }
}

TEST_CASE("model_forward output shapes per variant and level") {
  Fixture f = make_fixture(9);
  auto rng = make_rng(0, "eval");

  for (EncoderVariant variant :
       {EncoderVariant::base, EncoderVariant::sra, EncoderVariant::vn}) {
    EncoderConfig cfg = desk_config(variant);
    ModelState state = init_model(cfg, 19);
    Tape t;
    ParamVars params(t, state.params, false);
    ForwardResult fwd = model_forward(t, params, f.batch, cfg, false, rng);
    CHECK(t.value(fwd.logits).rows() == f.batch.n_nodes());
    CHECK(t.value(fwd.logits).cols() == 2);
    if (variant == EncoderVariant::sra) {
      CHECK(t.value(fwd.assignment).rows() == f.batch.n_nodes());
      CHECK(t.value(fwd.assignment).cols() == cfg.sra_regions);
    }
    if (variant == EncoderVariant::vn) {
      CHECK(t.value(fwd.virtual_coords).rows() == cfg.virtual_nodes);
      CHECK(t.value(fwd.virtual_coords).cols() == 3);
    }
  }

  // Edge-level liver-style config: logits per undirected edge, 3 classes.
  EncoderConfig liver = desk_config(EncoderVariant::base);
  liver.output = OutputLevel::edge;
  liver.n_classes = 3;
  ModelState state = init_model(liver, 21);
  GraphBatch batch = f.batch;
  batch.level = OutputLevel::edge;
  Tape t;
  ParamVars params(t, state.params, false);
  ForwardResult fwd = model_forward(t, params, batch, liver, false, rng);
  CHECK(t.value(fwd.logits).rows() == batch.n_undirected_edges());
  CHECK(t.value(fwd.logits).cols() == 3);

  // Face-level config: logits per face.
  EncoderConfig face_cfg = desk_config(EncoderVariant::base);
  face_cfg.output = OutputLevel::face;
  face_cfg.n_classes = 4;
  ModelState fstate = init_model(face_cfg, 23);
  GraphBatch fbatch = f.batch;
  fbatch.level = OutputLevel::face;
  Tape ft;
  ParamVars fparams(ft, fstate.params, false);
  ForwardResult ffwd = model_forward(ft, fparams, fbatch, face_cfg, false, rng);
  CHECK(ft.value(ffwd.logits).rows() == fbatch.n_faces());
  CHECK(ft.value(ffwd.logits).cols() == 4);
}

TEST_CASE("batched forward: per-graph outputs match single-graph runs") {
  Fixture f1 = make_fixture(30, 1);
  Fixture f2 = make_fixture(31, 1);
  std::vector<const MeshSample*> both = {&f1.sample, &f2.sample};
  GraphBatch batch = make_batch(both);
  CHECK(batch.n_graphs == 2);
  CHECK(batch.n_nodes() == f1.batch.n_nodes() + f2.batch.n_nodes());

  for (EncoderVariant variant :
       {EncoderVariant::base, EncoderVariant::sra, EncoderVariant::vn}) {
    EncoderConfig cfg = desk_config(variant);
    ModelState state = init_model(cfg, 33);
    auto forward = [&state, &cfg](const GraphBatch& b) {
      Tape t;
      ParamVars params(t, state.params, false);
      auto rng = make_rng(0, "eval");
      return Matrix(t.value(model_forward(t, params, b, cfg, false, rng).logits));
    };
    Matrix batched = forward(batch);
    Matrix lone1 = forward(f1.batch);
    Matrix lone2 = forward(f2.batch);
    REQUIRE(batched.rows() == lone1.rows() + lone2.rows());
    // Batching must not leak information across graphs.
    CHECK((batched.topRows(lone1.rows()) - lone1).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((batched.bottomRows(lone2.rows()) - lone2).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("config mismatches are rejected") {
  Fixture f = make_fixture(10);
  EncoderConfig cfg = desk_config(EncoderVariant::base);
  cfg.node_feature_dim = 12;  // batch carries 9
  ModelState state = init_model(cfg, 25);
  Tape t;
  ParamVars params(t, state.params, false);
  auto rng = make_rng(0, "eval");
  CHECK_THROWS_AS(model_forward(t, params, f.batch, cfg, false, rng), ConfigMismatch);

  EncoderConfig bad = desk_config(EncoderVariant::base);
  bad.hidden_dims = {16, 8};
  CHECK_THROWS_AS(bad.validate(), ConfigMismatch);
}

TEST_CASE("negative control: coordinate-valued features break invariance detectably") {
  // Feeding raw positions as node scalars must produce rotation-dependent
  // logits; this guards the invariance checks against passing vacuously.
  Fixture f = make_fixture(40, 1);
  EncoderConfig cfg = desk_config(EncoderVariant::base);
  cfg.node_feature_dim = 3;
  ModelState state = init_model(cfg, 41);
  auto rng = make_rng(0, "eval");

  auto logits_for = [&](const Points& positions) {
    GraphBatch batch = f.batch;
    batch.node_scalars = positions;
    batch.coord_channels[0] = positions;
    Tape t;
    ParamVars params(t, state.params, false);
    return Matrix(t.value(model_forward(t, params, batch, cfg, false, rng).logits));
  };
  const Points base_pos = f.batch.coord_channels[0];
  Matrix base = logits_for(base_pos);
  const Eigen::Matrix3d r = rotation_z(40.0 * M_PI / 180.0);
  Matrix rotated = logits_for(base_pos * r.transpose());
  CHECK((rotated - base).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("checkpoints round-trip the full state") {
  ModelState state = init_model(desk_config(EncoderVariant::vn), 27);
  state.opt_step = 42;
  state.epoch = 7;
  state.params.adam_m[3].setConstant(0.25);
  const std::string dir =
      (std::filesystem::temp_directory_path() / "eams_ckpt_test").string();
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, state);
  ModelState back = load_checkpoint(dir);
  CHECK(back.opt_step == 42);
  CHECK(back.epoch == 7);
  CHECK(back.config.variant == EncoderVariant::vn);
  for (int i = 0; i < state.params.size(); ++i) {
    CHECK(back.params.values[i] == state.params.values[i]);
    CHECK(back.params.adam_m[i] == state.params.adam_m[i]);
    CHECK(back.params.adam_v[i] == state.params.adam_v[i]);
  }
}
