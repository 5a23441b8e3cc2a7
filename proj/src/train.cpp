#include "eams/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace eams {

double clip_global_norm(std::vector<ad::Matrix>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  if (!std::isfinite(sq)) throw NonFiniteGradient("clip_global_norm: non-finite gradients");
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& g : grads) g *= s;
  }
  return norm;
}

void adamw_step(ModelState& state, const std::vector<ad::Matrix>& grads, double lr,
                const TrainConfig& config) {
  if (static_cast<int>(grads.size()) != state.params.size())
    throw ShapeMismatch("adamw_step: gradient count != parameter count");
  state.opt_step += 1;
  const double t = static_cast<double>(state.opt_step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (int i = 0; i < state.params.size(); ++i) {
    ad::Matrix& p = state.params.values[i];
    ad::Matrix& m = state.params.adam_m[i];
    ad::Matrix& v = state.params.adam_v[i];
    const ad::Matrix& g = grads[i];
    if (!g.allFinite()) throw NonFiniteGradient("adamw_step: non-finite gradient");
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
    const ad::Matrix m_hat = m / bc1;
    const ad::Matrix v_hat = v / bc2;
    p -= lr * (m_hat.array() / (v_hat.array().sqrt() + config.adam_eps)).matrix();
    p -= lr * config.weight_decay * p;  // decoupled decay
  }
}

double PlateauSchedule::observe(double validation_loss) {
  if (validation_loss < best_) {
    best_ = validation_loss;
    stale_ = 0;
  } else {
    ++stale_;
    if (stale_ >= patience_) {
      lr_ = std::max(lr_min_, lr_ * factor_);
      stale_ = 0;
    }
  }
  return lr_;
}

std::vector<int> kfold_split(int n_meshes, int k, std::uint64_t seed) {
  if (n_meshes < k) throw TooFewMeshes("kfold_split: fewer meshes than folds");
  std::vector<int> order(n_meshes);
  for (int i = 0; i < n_meshes; ++i) order[i] = i;
  auto rng = make_rng(seed, "kfold");
  for (int i = n_meshes - 1; i > 0; --i)
    std::swap(order[i], order[uniform_index(rng, i + 1)]);
  std::vector<int> fold(n_meshes, 0);
  for (int pos = 0; pos < n_meshes; ++pos) fold[order[pos]] = pos % k;
  return fold;
}

int squash_fdi_label(int label) {
  if (label < 11 || label > 48) return label;
  const int quadrant = label / 10;
  const int tooth = label % 10;
  if (quadrant < 1 || quadrant > 4 || tooth < 1 || tooth > 8) return label;
  return (quadrant > 2 ? quadrant - 2 : quadrant) * 10 + tooth;
}

SegMetrics segmentation_metrics(const std::vector<int>& pred, const std::vector<int>& truth,
                                bool squash_fdi) {
  if (pred.size() != truth.size())
    throw ShapeMismatch("segmentation_metrics: label length mismatch");
  std::map<int, long> n_pred, n_true, n_inter;
  std::set<int> classes;
  for (size_t i = 0; i < pred.size(); ++i) {
    const int p = squash_fdi ? squash_fdi_label(pred[i]) : pred[i];
    const int g = squash_fdi ? squash_fdi_label(truth[i]) : truth[i];
    ++n_pred[p];
    ++n_true[g];
    if (p == g) ++n_inter[p];
    classes.insert(p);
    classes.insert(g);
  }
  SegMetrics out;
  double iou_sum = 0.0;
  int iou_count = 0;
  for (int c : classes) {
    const long np = n_pred.count(c) ? n_pred[c] : 0;
    const long ng = n_true.count(c) ? n_true[c] : 0;
    const long ni = n_inter.count(c) ? n_inter[c] : 0;
    if (np + ng == 0) continue;  // absent from both: excluded
    const double dice = 2.0 * ni / static_cast<double>(np + ng);
    const double uni = static_cast<double>(np + ng - ni);
    const double iou = uni > 0.0 ? ni / uni : 1.0;
    out.dice[c] = dice;
    out.iou[c] = iou;
    if (ng > 0) {  // per-mesh average over ground-truth-present classes
      iou_sum += iou;
      ++iou_count;
    }
  }
  out.mesh_average_iou = iou_count > 0 ? iou_sum / iou_count : 0.0;
  return out;
}

DistanceMetrics distance_metrics(const Points& pred_points, const Points& true_points,
                                 bool squared_chamfer) {
  DistanceMetrics out;
  if (pred_points.rows() == 0 || true_points.rows() == 0) return out;  // Undefined
  out.defined = true;
  auto directed = [squared_chamfer](const Points& a, const Points& b, double& mean_min,
                                    double& max_min) {
    mean_min = 0.0;
    max_min = 0.0;
    for (int i = 0; i < a.rows(); ++i) {
      const double d = (b.rowwise() - a.row(i)).rowwise().norm().minCoeff();
      mean_min += squared_chamfer ? d * d : d;
      max_min = std::max(max_min, d);
    }
    mean_min /= static_cast<double>(a.rows());
  };
  double mean_ab, max_ab, mean_ba, max_ba;
  directed(pred_points, true_points, mean_ab, max_ab);
  directed(true_points, pred_points, mean_ba, max_ba);
  out.chamfer_x100 = 100.0 * 0.5 * (mean_ab + mean_ba);
  out.hausdorff = std::max(max_ab, max_ba);
  return out;
}

DataItem preprocess_mesh(const std::string& id, const Mesh& raw, int k_eigenpairs,
                         double eig_tol) {
  DataItem item;
  item.id = id;
  item.mesh = clean_mesh(raw);
  item.adjacency = build_adjacency(item.mesh);
  const Mesh normalized = normalize_coords(item.mesh).mesh;
  const FaceGeometry geo = face_geometry(normalized);
  const LaplaceBeltrami lb = assemble_lb(normalized, geo);
  const int k = std::min(k_eigenpairs, item.mesh.n_vertices());
  item.basis = eig_smallest(lb, k, eig_tol);
  if (!item.mesh.vertex_labels.empty()) {
    item.targets = item.mesh.vertex_labels;
    item.level = OutputLevel::vertex;
  } else if (!item.mesh.face_labels.empty()) {
    item.targets = item.mesh.face_labels;
    item.level = OutputLevel::face;
  } else if (!item.mesh.edge_labels.empty()) {
    item.targets = item.mesh.edge_labels;
    item.level = OutputLevel::edge;
  }
  return item;
}

MeshSample featurize_item(const DataItem& item, const FeatureConfig& config,
                          const RigidSample* perturb, bool rewind_on_reflection) {
  Mesh mesh = perturb != nullptr
                  ? rigid_transform(item.mesh, perturb->rotation, perturb->translation,
                                    rewind_on_reflection)
                  : item.mesh;
  const Mesh normalized = normalize_coords(mesh).mesh;
  const FaceGeometry geo = face_geometry(normalized);
  Eigen::VectorXd copy_weights;
  const Eigen::VectorXd* copy_ptr = nullptr;
  if (config.inverse_distance_copy_weights) {
    // Inverse-distance scheme over edge lengths, normalised to unit mean.
    const int ne = item.adjacency.n_undirected_edges();
    copy_weights.resize(ne);
    for (int e = 0; e < ne; ++e) {
      const double d = (normalized.vertices.row(item.adjacency.undirected_edges(e, 0)) -
                        normalized.vertices.row(item.adjacency.undirected_edges(e, 1)))
                           .norm();
      copy_weights[e] = 1.0 / (d + 1e-6);
    }
    copy_weights /= copy_weights.mean();
    copy_ptr = &copy_weights;
  }
  MeshSample sample;
  sample.features =
      assemble_features(normalized, geo, item.adjacency, &item.basis, config, copy_ptr);
  sample.adjacency = item.adjacency;
  sample.faces = normalized.faces;
  sample.targets = item.targets;
  sample.level = item.level;
  return sample;
}

namespace {

struct StepResult {
  double loss = 0.0;
};

StepResult run_batch(ModelState& state, const std::vector<const DataItem*>& items,
                     const TrainConfig& tc, const LossWeights& weights, const FeatureConfig& fc,
                     bool training, double lr, std::uint64_t epoch, std::uint64_t step,
                     std::mt19937_64* augment_rng) {
  std::vector<MeshSample> samples;
  samples.reserve(items.size());
  for (const DataItem* item : items) {
    if (training && tc.augment && augment_rng != nullptr) {
      RigidSample rigid = sample_rigid_augmentation(*augment_rng);
      samples.push_back(featurize_item(*item, fc, &rigid));
    } else {
      samples.push_back(featurize_item(*item, fc));
    }
  }
  std::vector<const MeshSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  GraphBatch batch = make_batch(ptrs);

  ad::Tape tape;
  ParamVars params(tape, state.params, training);
  auto dropout_rng = make_rng(tc.seed, "dropout", epoch * 1000003ull + step);
  auto subsample_rng = make_rng(tc.seed, "vn_subsample", epoch * 1000003ull + step);
  ForwardResult fwd = model_forward(tape, params, batch, state.config, training, dropout_rng);
  ad::Var loss = batch_loss(tape, fwd, batch, state.config, weights, subsample_rng);

  StepResult res;
  res.loss = tape.value(loss)(0, 0);
  if (training) {
    tape.backward(loss);
    std::vector<ad::Matrix> grads = params.collect_grads();
    clip_global_norm(grads, tc.grad_clip);
    adamw_step(state, grads, lr, tc);
  }
  return res;
}

double dataset_loss(ModelState& state, const std::vector<DataItem>& items, const TrainConfig& tc,
                    const LossWeights& weights, const FeatureConfig& fc) {
  if (items.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (size_t i = 0; i < items.size(); ++i) {
    std::vector<const DataItem*> one = {&items[i]};
    total += run_batch(state, one, tc, weights, fc, /*training=*/false, 0.0, 0, i, nullptr).loss;
  }
  return total / static_cast<double>(items.size());
}

}  // namespace

TrainResult train_loop(ModelState& state, const std::vector<DataItem>& train_items,
                       const std::vector<DataItem>& val_items, const TrainConfig& tc,
                       const LossWeights& weights, const FeatureConfig& fc) {
  TrainResult result;
  if (state.lr < 0.0) state.lr = tc.lr_init;  // fresh model; resumed runs keep theirs
  PlateauSchedule schedule(state.lr, tc.plateau_factor, tc.lr_min, tc.plateau_patience,
                           state.plateau_best, state.plateau_stale);
  double lr = state.lr;

  for (int epoch = state.epoch + 1; epoch <= tc.epochs; ++epoch) {
    std::vector<int> order(train_items.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    auto order_rng = make_rng(tc.seed, "order", epoch);
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[uniform_index(order_rng, i + 1)]);
    auto augment_rng = make_rng(tc.seed, "augment", epoch);

    double epoch_loss = 0.0;
    int n_batches = 0;
    for (size_t at = 0; at < order.size(); at += tc.batch_size) {
      std::vector<const DataItem*> batch_items;
      for (size_t j = at; j < std::min(order.size(), at + tc.batch_size); ++j)
        batch_items.push_back(&train_items[order[j]]);
      StepResult sr = run_batch(state, batch_items, tc, weights, fc, /*training=*/true, lr,
                                epoch, n_batches, &augment_rng);
      epoch_loss += sr.loss;
      ++n_batches;
    }
    state.epoch = epoch;

    TrainLogEntry entry;
    entry.epoch = epoch;
    entry.train_loss = n_batches > 0 ? epoch_loss / n_batches : 0.0;
    entry.lr = lr;
    if (epoch % tc.validate_every == 0 && !val_items.empty()) {
      entry.val_loss = dataset_loss(state, val_items, tc, weights, fc);
      lr = schedule.observe(entry.val_loss);
      state.plateau_best = schedule.best();
      state.plateau_stale = schedule.stale();
      if (entry.val_loss < result.best_val_loss) {
        result.best_val_loss = entry.val_loss;
        result.best_state = state;
      }
    }
    state.lr = lr;
    result.log.push_back(entry);
  }
  if (!std::isfinite(result.best_val_loss)) result.best_state = state;
  return result;
}

EvalResult evaluate_model(const ModelState& state, const std::vector<DataItem>& items,
                          const FeatureConfig& fc, const RigidSample* perturb,
                          bool rewind_on_reflection, bool squash_fdi) {
  EvalResult out;
  out.n_meshes = static_cast<int>(items.size());
  std::map<int, double> iou_sum, dice_sum, cd_sum, hd_sum;
  std::map<int, int> class_count, cd_count;
  double avg_iou_sum = 0.0, dice_mesh_sum = 0.0;

  for (const DataItem& item : items) {
    MeshSample sample = featurize_item(item, fc, perturb, rewind_on_reflection);
    std::vector<const MeshSample*> ptrs = {&sample};
    GraphBatch batch = make_batch(ptrs);
    ad::Tape tape;
    // const_cast-free read-only view: parameters registered without gradients
    ParamVars params(tape, state.params, /*trainable=*/false);
    auto rng = make_rng(0, "eval");
    ForwardResult fwd = model_forward(tape, params, batch, state.config, /*training=*/false, rng);

    const ad::Matrix& logits = tape.value(fwd.logits);
    std::vector<int> pred(logits.rows());
    for (int i = 0; i < logits.rows(); ++i) {
      int arg = 0;
      logits.row(i).maxCoeff(&arg);
      pred[i] = arg;
    }
    out.predictions.push_back(pred);

    SegMetrics seg = segmentation_metrics(pred, item.targets, squash_fdi);
    avg_iou_sum += seg.mesh_average_iou;
    double mesh_dice = 0.0;
    for (const auto& [cls, dice] : seg.dice) {
      dice_sum[cls] += dice;
      iou_sum[cls] += seg.iou.at(cls);
      ++class_count[cls];
      mesh_dice += dice;
    }
    dice_mesh_sum += seg.dice.empty() ? 0.0 : mesh_dice / seg.dice.size();

    // Distance metrics on element representative points per class.
    const Mesh normalized =
        normalize_coords(perturb != nullptr
                             ? rigid_transform(item.mesh, perturb->rotation,
                                               perturb->translation, rewind_on_reflection)
                             : item.mesh)
            .mesh;
    auto representative = [&](int element) -> Eigen::RowVector3d {
      switch (item.level) {
        case OutputLevel::vertex: return normalized.vertices.row(element);
        case OutputLevel::edge:
          return 0.5 * (normalized.vertices.row(item.adjacency.undirected_edges(element, 0)) +
                        normalized.vertices.row(item.adjacency.undirected_edges(element, 1)));
        case OutputLevel::face:
          return (normalized.vertices.row(normalized.faces(element, 0)) +
                  normalized.vertices.row(normalized.faces(element, 1)) +
                  normalized.vertices.row(normalized.faces(element, 2))) /
                 3.0;
      }
      return normalized.vertices.row(element);
    };
    std::set<int> classes;
    for (int c : item.targets) classes.insert(squash_fdi ? squash_fdi_label(c) : c);
    for (int cls : classes) {
      std::vector<int> pe, te;
      for (size_t i = 0; i < pred.size(); ++i) {
        const int p = squash_fdi ? squash_fdi_label(pred[i]) : pred[i];
        const int g = squash_fdi ? squash_fdi_label(item.targets[i]) : item.targets[i];
        if (p == cls) pe.push_back(static_cast<int>(i));
        if (g == cls) te.push_back(static_cast<int>(i));
      }
      Points pp(static_cast<int>(pe.size()), 3), tp(static_cast<int>(te.size()), 3);
      for (size_t i = 0; i < pe.size(); ++i) pp.row(static_cast<int>(i)) = representative(pe[i]);
      for (size_t i = 0; i < te.size(); ++i) tp.row(static_cast<int>(i)) = representative(te[i]);
      DistanceMetrics dm = distance_metrics(pp, tp);
      if (dm.defined) {
        cd_sum[cls] += dm.chamfer_x100;
        hd_sum[cls] += dm.hausdorff;
        ++cd_count[cls];
      } else {
        ++out.distance_undefined[cls];
      }
    }
  }

  if (out.n_meshes > 0) {
    out.mean_average_iou = avg_iou_sum / out.n_meshes;
    out.mean_dice = dice_mesh_sum / out.n_meshes;
  }
  for (const auto& [cls, count] : class_count) {
    out.class_iou[cls] = iou_sum[cls] / count;
    out.class_dice[cls] = dice_sum[cls] / count;
  }
  for (const auto& [cls, count] : cd_count) {
    out.class_chamfer_x100[cls] = cd_sum[cls] / count;
    out.class_hausdorff[cls] = hd_sum[cls] / count;
  }
  return out;
}

std::vector<std::pair<std::string, RigidSample>> perturbation_conditions() {
  std::vector<std::pair<std::string, RigidSample>> conds;
  RigidSample identity{Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero()};
  conds.push_back({"baseline", identity});
  conds.push_back({"rot_z_15", {rotation_z(15.0 * M_PI / 180.0), Eigen::Vector3d::Zero()}});
  conds.push_back({"rot_z_40", {rotation_z(40.0 * M_PI / 180.0), Eigen::Vector3d::Zero()}});
  RigidSample refl{Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero()};
  refl.rotation(0, 0) = -1.0;
  conds.push_back({"refl_x", refl});
  return conds;
}

std::map<std::string, EvalResult> perturbation_suite(const ModelState& state,
                                                     const std::vector<DataItem>& items,
                                                     const FeatureConfig& fc, bool squash_fdi) {
  std::map<std::string, EvalResult> out;
  for (const auto& [name, rigid] : perturbation_conditions()) {
    const bool is_identity = name == "baseline";
    out[name] = evaluate_model(state, items, fc, is_identity ? nullptr : &rigid,
                               /*rewind_on_reflection=*/true, squash_fdi);
  }
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string metrics_csv(const std::map<std::string, EvalResult>& by_condition) {
  std::set<int> classes;
  for (const auto& [name, res] : by_condition)
    for (const auto& [cls, v] : res.class_iou) classes.insert(cls);
  std::ostringstream os;
  os << "condition,n_meshes,average_iou,mean_dice";
  for (int c : classes) os << ",iou_" << c << ",dice_" << c << ",cd100_" << c << ",hd_" << c;
  os << "\n";
  for (const auto& [name, res] : by_condition) {
    os << name << ',' << res.n_meshes << ',' << fmt(res.mean_average_iou) << ','
       << fmt(res.mean_dice);
    for (int c : classes) {
      auto get = [&c](const std::map<int, double>& m) {
        auto it = m.find(c);
        return it == m.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
      };
      os << ',' << fmt(get(res.class_iou)) << ',' << fmt(get(res.class_dice)) << ','
         << fmt(get(res.class_chamfer_x100)) << ',' << fmt(get(res.class_hausdorff));
    }
    os << "\n";
  }
  return os.str();
}

std::string metrics_table(const std::map<std::string, EvalResult>& by_condition) {
  std::ostringstream os;
  os << "condition      avg IoU    mean Dice\n";
  for (const auto& [name, res] : by_condition) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%-14s %8.4f %10.4f\n", name.c_str(), res.mean_average_iou,
                  res.mean_dice);
    os << buf;
  }
  return os.str();
}

namespace {

nlohmann::json config_to_json(const EncoderConfig& cfg) {
  nlohmann::json j;
  j["hidden_dims"] = cfg.hidden_dims;
  j["coord_channels"] = cfg.coord_channels;
  j["variant"] = to_string(cfg.variant);
  j["sra_regions"] = cfg.sra_regions;
  j["sra_heads"] = cfg.sra_heads;
  j["sra_use_geometry"] = cfg.sra_use_geometry;
  j["virtual_nodes"] = cfg.virtual_nodes;
  j["dropout"] = cfg.dropout;
  j["node_feature_dim"] = cfg.node_feature_dim;
  j["edge_feature_dim"] = cfg.edge_feature_dim;
  j["n_classes"] = cfg.n_classes;
  j["output"] = to_string(cfg.output);
  return j;
}

EncoderConfig config_from_json(const nlohmann::json& j) {
  EncoderConfig cfg;
  cfg.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
  cfg.coord_channels = j.at("coord_channels").get<int>();
  cfg.variant = variant_from_string(j.at("variant").get<std::string>());
  cfg.sra_regions = j.at("sra_regions").get<int>();
  cfg.sra_heads = j.at("sra_heads").get<int>();
  cfg.sra_use_geometry = j.at("sra_use_geometry").get<bool>();
  cfg.virtual_nodes = j.at("virtual_nodes").get<int>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.node_feature_dim = j.at("node_feature_dim").get<int>();
  cfg.edge_feature_dim = j.at("edge_feature_dim").get<int>();
  cfg.n_classes = j.at("n_classes").get<int>();
  cfg.output = output_level_from_string(j.at("output").get<std::string>());
  return cfg;
}

void write_matrices(const fs::path& path, const std::vector<ad::Matrix>& mats) {
  std::ofstream out(path, std::ios::binary);
  for (const auto& m : mats)
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * m.size()));
}

void read_matrices(const fs::path& path, std::vector<ad::Matrix>& mats) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CacheVersionMismatch("missing checkpoint array: " + path.string());
  for (auto& m : mats) {
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(double) * m.size()))
      throw CacheVersionMismatch("truncated checkpoint array: " + path.string());
  }
}

}  // namespace

void save_checkpoint(const std::string& dir, const ModelState& state) {
  const fs::path tmp = fs::path(dir + ".tmp");
  fs::create_directories(tmp);
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["config"] = config_to_json(state.config);
  manifest["seed"] = state.seed;
  manifest["opt_step"] = state.opt_step;
  manifest["epoch"] = state.epoch;
  manifest["lr"] = state.lr;
  manifest["plateau_best"] =
      std::isfinite(state.plateau_best) ? state.plateau_best : -1.0;
  manifest["plateau_stale"] = state.plateau_stale;
  manifest["params"] = nlohmann::json::array();
  for (int i = 0; i < state.params.size(); ++i) {
    nlohmann::json p;
    p["name"] = state.params.names[i];
    p["rows"] = static_cast<int>(state.params.values[i].rows());
    p["cols"] = static_cast<int>(state.params.values[i].cols());
    manifest["params"].push_back(p);
  }
  {
    std::ofstream out(tmp / "manifest.json");
    out << manifest.dump(2) << '\n';
  }
  write_matrices(tmp / "params.f64", state.params.values);
  write_matrices(tmp / "adam_m.f64", state.params.adam_m);
  write_matrices(tmp / "adam_v.f64", state.params.adam_v);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

ModelState load_checkpoint(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw MissingCache("no checkpoint at " + dir);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception&) {
    throw CacheVersionMismatch("unreadable checkpoint manifest at " + dir);
  }
  if (manifest.value("version", -1) != 1)
    throw CacheVersionMismatch("checkpoint version mismatch at " + dir);

  ModelState state = init_model(config_from_json(manifest.at("config")),
                                manifest.at("seed").get<std::uint64_t>());
  state.opt_step = manifest.at("opt_step").get<std::int64_t>();
  state.epoch = manifest.at("epoch").get<int>();
  state.lr = manifest.value("lr", -1.0);
  const double best = manifest.value("plateau_best", -1.0);
  state.plateau_best = best < 0.0 ? std::numeric_limits<double>::infinity() : best;
  state.plateau_stale = manifest.value("plateau_stale", 0);
  const auto& plist = manifest.at("params");
  if (static_cast<int>(plist.size()) != state.params.size())
    throw CacheVersionMismatch("checkpoint parameter list mismatch at " + dir);
  for (int i = 0; i < state.params.size(); ++i) {
    if (plist[i].at("name").get<std::string>() != state.params.names[i] ||
        plist[i].at("rows").get<int>() != state.params.values[i].rows() ||
        plist[i].at("cols").get<int>() != state.params.values[i].cols())
      throw CacheVersionMismatch("checkpoint parameter shape mismatch at " + dir);
  }
  read_matrices(fs::path(dir) / "params.f64", state.params.values);
  read_matrices(fs::path(dir) / "adam_m.f64", state.params.adam_m);
  read_matrices(fs::path(dir) / "adam_v.f64", state.params.adam_v);
  return state;
}

}  // namespace eams
