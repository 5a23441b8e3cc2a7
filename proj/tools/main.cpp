#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "eams/pipeline.hpp"

namespace fs = std::filesystem;
using namespace eams;

namespace {

std::string cache_root_for(const DatasetManifest& manifest) {
  if (const char* env = std::getenv("EAMS_CACHE_ROOT")) return env;
  return manifest.cache_dir;
}

void echo_config(const std::string& subcommand, std::uint64_t seed,
                 const std::string& extra = "") {
  std::cout << "[eams] " << subcommand << " seed=" << seed;
  if (!extra.empty()) std::cout << ' ' << extra;
  std::cout << '\n';
}

OutputLevel level_for_kind(SynthKind kind) {
  switch (kind) {
    case SynthKind::icosphere_cap: return OutputLevel::vertex;
    case SynthKind::tube_arch: return OutputLevel::face;
    default: return OutputLevel::vertex;
  }
}

int cmd_synth(const std::string& kind_name, SynthParams params, std::uint64_t seed, int count,
              const std::string& out_dir) {
  const SynthKind kind = synth_kind_from_string(kind_name);
  fs::create_directories(out_dir);
  DatasetManifest manifest;
  manifest.dataset_tag = kind == SynthKind::tube_arch ? "teeth3ds" : "intra";
  manifest.cache_dir = "cache";
  for (int i = 0; i < count; ++i) {
    const std::string id = kind_name + "_" + std::to_string(seed + i);
    Mesh mesh = synth_mesh(kind, params, seed + i);
    write_mesh_off((fs::path(out_dir) / (id + ".off")).string(), mesh);
    ManifestEntry entry;
    entry.id = id;
    entry.mesh_path = id + ".off";
    if (!mesh.vertex_labels.empty()) {
      write_labels((fs::path(out_dir) / (id + ".labels")).string(), mesh.vertex_labels);
      entry.label_path = id + ".labels";
      entry.label_level = "vertex";
    } else if (!mesh.face_labels.empty()) {
      write_labels((fs::path(out_dir) / (id + ".labels")).string(), mesh.face_labels);
      entry.label_path = id + ".labels";
      entry.label_level = "face";
    } else {
      entry.label_level = to_string(level_for_kind(kind));
    }
    manifest.meshes.push_back(entry);
  }
  save_manifest((fs::path(out_dir) / "manifest.json").string(), manifest);
  std::cout << "[eams] wrote " << count << " " << kind_name << " fixture(s) to " << out_dir
            << '\n';
  return 0;
}

int cmd_preprocess(const std::string& manifest_path, int k, double tol) {
  DatasetManifest manifest = load_manifest(manifest_path);
  const std::string cache = cache_root_for(manifest);
  fs::create_directories(cache);
  std::vector<DataItem> items = load_dataset(manifest, k, tol, cache);
  for (const DataItem& item : items)
    std::cout << item.id << ": V=" << item.mesh.n_vertices() << " F=" << item.mesh.n_faces()
              << " eigenpairs=" << item.basis.eigenvalues.size() << '\n';
  std::cout << "[eams] preprocessed " << items.size() << " meshes; cache at " << cache << '\n';
  return 0;
}

void write_feature_files(const std::string& out_dir, const DataItem& item,
                         const MeshSample& sample) {
  fs::create_directories(out_dir);
  auto write_block = [&](const std::string& name, const Eigen::MatrixXd& m) {
    std::ofstream out(fs::path(out_dir) / (item.id + "." + name + ".f64"), std::ios::binary);
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * m.size()));
  };
  write_block("node", sample.features.node_scalars);
  write_block("edge", sample.features.edge_scalars);
  for (size_t c = 0; c < sample.features.coord_state.size(); ++c)
    write_block("coord" + std::to_string(c), sample.features.coord_state[c]);
  nlohmann::json j;
  j["id"] = item.id;
  j["node_rows"] = sample.features.node_scalars.rows();
  j["node_cols"] = sample.features.node_scalars.cols();
  j["edge_rows"] = sample.features.edge_scalars.rows();
  j["edge_cols"] = sample.features.edge_scalars.cols();
  j["coord_channels"] = sample.features.coord_state.size();
  j["layout"] = "column-major little-endian f64";
  std::ofstream out(fs::path(out_dir) / (item.id + ".features.json"));
  out << j.dump(2) << '\n';
}

int cmd_featurize(const std::string& manifest_path, const std::string& config_name,
                  const std::string& out_dir, int k, double tol) {
  DatasetManifest manifest = load_manifest(manifest_path);
  FeatureConfig fc = FeatureConfig::preset(dataset_tag_from_string(config_name));
  std::vector<DataItem> items = load_dataset(manifest, k, tol, cache_root_for(manifest));
  for (const DataItem& item : items) write_feature_files(out_dir, item, featurize_item(item, fc));
  std::cout << "[eams] featurized " << items.size() << " meshes to " << out_dir << '\n';
  return 0;
}

struct SplitItems {
  std::vector<DataItem> train, val;
};

SplitItems split_dataset(std::vector<DataItem> items, const DatasetManifest& manifest, int folds,
                         int eval_fold, std::uint64_t seed) {
  SplitItems split;
  std::vector<int> fold_of(items.size(), -1);
  bool have_manifest_folds = true;
  for (size_t i = 0; i < items.size(); ++i) {
    fold_of[i] = manifest.meshes[i].fold;
    if (fold_of[i] < 0) have_manifest_folds = false;
  }
  if (!have_manifest_folds) fold_of = kfold_split(static_cast<int>(items.size()), folds, seed);
  for (size_t i = 0; i < items.size(); ++i) {
    if (fold_of[i] == eval_fold)
      split.val.push_back(std::move(items[i]));
    else
      split.train.push_back(std::move(items[i]));
  }
  return split;
}

int cmd_train(const std::string& manifest_path, const std::string& config_name,
              const std::string& variant_name, const TrainConfig& tc_in, int folds, int eval_fold,
              const std::string& out_dir, const std::string& log_path) {
  DatasetManifest manifest = load_manifest(manifest_path);
  const DatasetTag tag = dataset_tag_from_string(config_name);
  FeatureConfig fc = FeatureConfig::preset(tag);
  LossWeights weights = LossWeights::preset(tag);
  TrainConfig tc = tc_in;

  std::vector<DataItem> items = load_dataset(manifest, 64, 1e-8, cache_root_for(manifest));
  if (items.empty()) throw TooFewMeshes("train: empty dataset");
  SplitItems split = split_dataset(std::move(items), manifest, folds, eval_fold, tc.seed);

  EncoderConfig cfg = EncoderConfig::preset(tag, variant_from_string(variant_name));
  int max_label = 1;
  for (const auto& item : split.train)
    for (int t : item.targets) max_label = std::max(max_label, t);
  for (const auto& item : split.val)
    for (int t : item.targets) max_label = std::max(max_label, t);
  cfg.n_classes = std::max(2, max_label + 1);

  ModelState state = init_model(cfg, tc.seed);
  std::cout << "[eams] train config=" << config_name << " variant=" << variant_name
            << " params=" << state.params.parameter_count() << " train=" << split.train.size()
            << " val=" << split.val.size() << " seed=" << tc.seed << '\n';

  TrainResult result = train_loop(state, split.train, split.val, tc, weights, fc);
  const ModelState& best =
      result.best_state.params.size() > 0 ? result.best_state : state;
  save_checkpoint(out_dir, best);

  if (!log_path.empty()) {
    std::ofstream log(log_path);
    log << "epoch,train_loss,val_loss,lr\n";
    for (const auto& e : result.log) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_loss,
                    e.lr);
      log << buf;
    }
  }
  std::cout << "[eams] best validation loss " << result.best_val_loss << "; checkpoint at "
            << out_dir << '\n';
  return 0;
}

int cmd_eval(const std::string& manifest_path, const std::string& ckpt_dir,
             const std::string& report_path, bool squash, bool perturb_all) {
  DatasetManifest manifest = load_manifest(manifest_path);
  const DatasetTag tag = dataset_tag_from_string(manifest.dataset_tag);
  FeatureConfig fc = FeatureConfig::preset(tag);
  std::vector<DataItem> items = load_dataset(manifest, 64, 1e-8, cache_root_for(manifest));
  ModelState state = load_checkpoint(ckpt_dir);

  std::map<std::string, EvalResult> results;
  if (perturb_all) {
    results = perturbation_suite(state, items, fc, squash);
  } else {
    results["baseline"] = evaluate_model(state, items, fc, nullptr, true, squash);
  }
  const std::string csv = metrics_csv(results);
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    out << csv;
  }
  std::cout << metrics_table(results);
  return 0;
}

int cmd_gradcheck(const std::string& variant_name, std::uint64_t seed) {
  std::vector<EncoderVariant> variants;
  if (variant_name == "all")
    variants = {EncoderVariant::base, EncoderVariant::sra, EncoderVariant::vn};
  else
    variants = {variant_from_string(variant_name)};
  bool ok = true;
  for (EncoderVariant v : variants) {
    const double err = full_model_gradcheck(desk_config(v), seed);
    std::cout << "gradcheck " << to_string(v) << ": max relative error " << err << '\n';
    ok = ok && err < 1e-4;
  }
  std::cout << (ok ? "[eams] gradcheck PASS" : "[eams] gradcheck FAIL") << '\n';
  return ok ? 0 : 2;
}

int cmd_invariance(const std::string& config_name, int n_fixtures, std::uint64_t seed,
                   const std::string& ckpt_dir) {
  const DatasetTag tag = dataset_tag_from_string(config_name);
  FeatureConfig fc = FeatureConfig::preset(tag);

  std::vector<DataItem> items;
  for (int i = 0; i < n_fixtures; ++i) {
    SynthParams params;
    params.level = 2;
    params.jitter = 0.02;
    Mesh mesh = synth_mesh(SynthKind::icosphere_cap, params, seed + i);
    auto rot_rng = make_rng(seed, "invariance_pose", i);
    mesh = rigid_transform(mesh, random_rotation(rot_rng),
                           Eigen::Vector3d(uniform_in(rot_rng, -1, 1),
                                           uniform_in(rot_rng, -1, 1),
                                           uniform_in(rot_rng, -1, 1)));
    items.push_back(preprocess_mesh("inv_" + std::to_string(i), mesh));
  }

  ModelState state = ckpt_dir.empty()
                         ? init_model(EncoderConfig::preset(tag, EncoderVariant::base), seed)
                         : load_checkpoint(ckpt_dir);
  InvarianceReport report = invariance_harness(state, items, fc);
  for (const auto& [name, dev] : report.per_condition)
    std::cout << name << ": max |delta logit| = " << dev << '\n';
  std::cout << "argmax identical: " << (report.argmax_identical ? "yes" : "no") << '\n';
  const bool ok = report.argmax_identical && report.max_logit_deviation < 1e-9;
  std::cout << (ok ? "[eams] invariance PASS" : "[eams] invariance FAIL") << '\n';
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Equivariant anatomical mesh segmentation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global options (--seed, --deterministic) after the subcommand

  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Global RNG seed")->capture_default_str();
  bool deterministic = true;
  app.add_flag("--deterministic,!--no-deterministic", deterministic,
               "Single-threaded bit-reproducible mode (always on; flag kept for scripts)");

  // synth
  auto* synth = app.add_subcommand("synth", "Write synthetic fixture meshes");
  std::string synth_kind = "icosphere_cap", synth_out = "fixtures";
  int synth_count = 1;
  SynthParams sp;
  synth->add_option("kind", synth_kind, "icosphere_cap|tube_arch|torus|tetrahedron")->required();
  synth->add_option("--level", sp.level, "Icosphere subdivision level")->capture_default_str();
  synth->add_option("--cap-angle", sp.cap_angle_deg, "Cap angle in degrees")->capture_default_str();
  synth->add_option("--bump", sp.bump_amplitude, "Cap bulge amplitude")->capture_default_str();
  synth->add_option("--jitter", sp.jitter, "Vertex jitter amplitude")->capture_default_str();
  synth->add_option("--sectors", sp.n_sectors, "tube_arch sector classes")->capture_default_str();
  synth->add_option("--count", synth_count, "Number of fixtures (seeds seed..seed+count-1)")
      ->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->capture_default_str();

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Clean meshes and cache spectra");
  std::string pre_manifest;
  int pre_k = 64;
  double pre_tol = 1e-8;
  pre->add_option("--manifest", pre_manifest, "Dataset manifest JSON")->required();
  pre->add_option("--k", pre_k, "Eigenpairs to cache")->capture_default_str();
  pre->add_option("--tol", pre_tol, "Eigensolver tolerance")->capture_default_str();

  // featurize
  auto* feat = app.add_subcommand("featurize", "Assemble and write feature files");
  std::string feat_manifest, feat_config = "intra", feat_out = "features";
  feat->add_option("--manifest", feat_manifest)->required();
  feat->add_option("--config", feat_config, "intra|liver|teeth3ds|iosseg")->capture_default_str();
  feat->add_option("--out", feat_out)->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train a segmentation model");
  std::string train_manifest, train_config = "intra", train_variant = "base";
  std::string train_out = "checkpoint", train_log;
  TrainConfig tc;
  int train_folds = 5, train_fold = 0;
  train->add_option("--manifest", train_manifest)->required();
  train->add_option("--config", train_config)->capture_default_str();
  train->add_option("--variant", train_variant, "base|sra|vn")->capture_default_str();
  train->add_option("--epochs", tc.epochs)->capture_default_str();
  train->add_option("--batch-size", tc.batch_size)->capture_default_str();
  train->add_option("--lr", tc.lr_init)->capture_default_str();
  train->add_option("--folds", train_folds)->capture_default_str();
  train->add_option("--fold", train_fold, "Held-out fold id")->capture_default_str();
  auto* augment_opt = train->add_flag("--augment,!--no-augment", tc.augment,
                                      "Random rigid augmentation (default on for teeth/liver)");
  train->add_option("--out", train_out, "Checkpoint directory")->capture_default_str();
  train->add_option("--log", train_log, "Training log CSV path");

  // eval / perturb
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string eval_manifest, eval_ckpt = "checkpoint", eval_report;
  bool eval_squash = false;
  eval_cmd->add_option("--manifest", eval_manifest)->required();
  eval_cmd->add_option("--ckpt", eval_ckpt)->capture_default_str();
  eval_cmd->add_option("--report", eval_report, "CSV output path");
  auto* eval_squash_opt = eval_cmd->add_flag("--squash-fdi,!--no-squash-fdi", eval_squash,
                                             "Merge mirrored dental labels (default on for "
                                             "dental tags)");

  auto* perturb = app.add_subcommand("perturb", "Evaluate under rigid perturbations");
  std::string pert_manifest, pert_ckpt = "checkpoint", pert_report;
  bool pert_squash = false;
  perturb->add_option("--manifest", pert_manifest)->required();
  perturb->add_option("--ckpt", pert_ckpt)->capture_default_str();
  perturb->add_option("--report", pert_report, "CSV output path");
  auto* pert_squash_opt =
      perturb->add_flag("--squash-fdi,!--no-squash-fdi", pert_squash);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full model");
  std::string gc_variant = "all";
  gc->add_option("--variant", gc_variant, "base|sra|vn|all")->capture_default_str();

  // invariance
  auto* inv = app.add_subcommand("invariance", "Rigid-transform invariance harness");
  std::string inv_config = "intra", inv_ckpt;
  int inv_n = 20;
  inv->add_option("--config", inv_config)->capture_default_str();
  inv->add_option("--n", inv_n, "Number of fixture meshes")->capture_default_str();
  inv->add_option("--ckpt", inv_ckpt, "Optional checkpoint (default: random init)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      echo_config("synth", seed, synth_kind);
      return cmd_synth(synth_kind, sp, seed, synth_count, synth_out);
    }
    if (pre->parsed()) {
      echo_config("preprocess", seed);
      return cmd_preprocess(pre_manifest, pre_k, pre_tol);
    }
    if (feat->parsed()) {
      echo_config("featurize", seed, feat_config);
      return cmd_featurize(feat_manifest, feat_config, feat_out, 64, 1e-8);
    }
    if (train->parsed()) {
      tc.seed = seed;
      const DatasetTag tag = dataset_tag_from_string(train_config);
      if (augment_opt->count() == 0)
        tc.augment = tag == DatasetTag::teeth3ds || tag == DatasetTag::iosseg ||
                     tag == DatasetTag::liver;
      if (train->count("--batch-size") == 0 && tag == DatasetTag::liver) tc.batch_size = 8;
      echo_config("train", seed, train_config + "/" + train_variant);
      return cmd_train(train_manifest, train_config, train_variant, tc, train_folds, train_fold,
                       train_out, train_log);
    }
    auto dental_default = [](const std::string& manifest_path) {
      const std::string tag = load_manifest(manifest_path).dataset_tag;
      return tag == "teeth3ds" || tag == "iosseg";
    };
    if (eval_cmd->parsed()) {
      echo_config("eval", seed);
      if (eval_squash_opt->count() == 0) eval_squash = dental_default(eval_manifest);
      return cmd_eval(eval_manifest, eval_ckpt, eval_report, eval_squash, false);
    }
    if (perturb->parsed()) {
      echo_config("perturb", seed);
      if (pert_squash_opt->count() == 0) pert_squash = dental_default(pert_manifest);
      return cmd_eval(pert_manifest, pert_ckpt, pert_report, pert_squash, true);
    }
    if (gc->parsed()) {
      echo_config("gradcheck", seed, gc_variant);
      return cmd_gradcheck(gc_variant, seed);
    }
    if (inv->parsed()) {
      echo_config("invariance", seed, inv_config);
      return cmd_invariance(inv_config, inv_n, seed, inv_ckpt);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
