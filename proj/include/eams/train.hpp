#pragma once

#include <map>
#include <optional>

#include "eams/encoder.hpp"
#include "eams/objectives.hpp"

namespace eams {

struct TrainConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double adam_eps = 1e-8;
  double lr_init = 1e-3;
  double plateau_factor = 0.6;
  double lr_min = 1e-5;
  int plateau_patience = 3;
  double grad_clip = 1.0;
  int epochs = 100;
  int validate_every = 5;
  int batch_size = 1;
  std::uint64_t seed = 0;
  bool augment = false;
};

/// Scales gradients so the global l2 norm is at most max_norm; returns the
/// pre-clip norm. Throws NonFiniteGradient on NaN/Inf.
double clip_global_norm(std::vector<ad::Matrix>& grads, double max_norm);

/// Decoupled-weight-decay Adam with bias correction; gradients must already
/// be clipped by the caller (train_loop clips first).
void adamw_step(ModelState& state, const std::vector<ad::Matrix>& grads, double lr,
                const TrainConfig& config);

class PlateauSchedule {
 public:
  PlateauSchedule(double lr_init, double factor, double lr_min, int patience,
                  double best = std::numeric_limits<double>::infinity(), int stale = 0)
      : lr_(lr_init), factor_(factor), lr_min_(lr_min), patience_(patience), stale_(stale),
        best_(best) {}
  /// Feed one validation loss; returns the (possibly reduced) learning rate.
  double observe(double validation_loss);
  double lr() const { return lr_; }
  double best() const { return best_; }
  int stale() const { return stale_; }

 private:
  double lr_, factor_, lr_min_;
  int patience_;
  int stale_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

/// Deterministic shuffled partition into k folds differing in size by <= 1.
std::vector<int> kfold_split(int n_meshes, int k, std::uint64_t seed);

/// Dental FDI squashing: mirrored quadrants 3/4 fold onto 1/2; labels outside
/// [11, 48] pass through.
int squash_fdi_label(int label);

struct SegMetrics {
  std::map<int, double> dice;  // classes present in prediction or truth
  std::map<int, double> iou;
  double mesh_average_iou = 0.0;  // mean IoU over ground-truth-present classes
};

SegMetrics segmentation_metrics(const std::vector<int>& pred, const std::vector<int>& truth,
                                bool squash_fdi = false);

struct DistanceMetrics {
  bool defined = false;
  double chamfer_x100 = 0.0;  // symmetric mean nearest distance, x100
  double hausdorff = 0.0;
};

/// Chamfer uses absolute nearest distances by default; squared_chamfer
/// switches the averaged quantity to squared distances (Hausdorff is always
/// absolute).
DistanceMetrics distance_metrics(const Points& pred_points, const Points& true_points,
                                 bool squared_chamfer = false);

/// One preprocessed mesh ready for featurization: cleaned geometry plus the
/// cached spectral basis computed on its normalised coordinates.
struct DataItem {
  std::string id;
  Mesh mesh;  // cleaned, unnormalised
  AdjacencyIndex adjacency;
  SpectralBasis basis;
  std::vector<int> targets;
  OutputLevel level = OutputLevel::vertex;
};

/// Clean + normalise + spectral-solve a raw mesh into a DataItem.
DataItem preprocess_mesh(const std::string& id, const Mesh& raw, int k_eigenpairs = 64,
                         double eig_tol = 1e-8);

/// Featurize (optionally rigidly perturbed before normalisation). The cached
/// spectral basis is reused: HKS is intrinsic, so rigid motions leave it
/// unchanged by definition, while all coordinate-derived features are
/// recomputed from the transformed geometry.
MeshSample featurize_item(const DataItem& item, const FeatureConfig& config,
                          const RigidSample* perturb = nullptr,
                          bool rewind_on_reflection = true);

struct TrainLogEntry {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double lr = 0.0;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  ModelState best_state;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

TrainResult train_loop(ModelState& state, const std::vector<DataItem>& train_items,
                       const std::vector<DataItem>& val_items, const TrainConfig& tc,
                       const LossWeights& weights, const FeatureConfig& fc);

struct EvalResult {
  double mean_average_iou = 0.0;
  double mean_dice = 0.0;  // class-mean dice averaged over meshes
  std::map<int, double> class_iou;
  std::map<int, double> class_dice;
  std::map<int, double> class_chamfer_x100;
  std::map<int, double> class_hausdorff;
  std::map<int, int> distance_undefined;  // excluded mesh counts per class
  int n_meshes = 0;
  std::vector<std::vector<int>> predictions;
};

EvalResult evaluate_model(const ModelState& state, const std::vector<DataItem>& items,
                          const FeatureConfig& fc, const RigidSample* perturb = nullptr,
                          bool rewind_on_reflection = true, bool squash_fdi = false);

/// Baseline, z-rotations of 15 and 40 degrees, and rewound x-reflection.
std::vector<std::pair<std::string, RigidSample>> perturbation_conditions();

std::map<std::string, EvalResult> perturbation_suite(const ModelState& state,
                                                     const std::vector<DataItem>& items,
                                                     const FeatureConfig& fc,
                                                     bool squash_fdi = false);

std::string metrics_csv(const std::map<std::string, EvalResult>& by_condition);
std::string metrics_table(const std::map<std::string, EvalResult>& by_condition);

void save_checkpoint(const std::string& dir, const ModelState& state);
ModelState load_checkpoint(const std::string& dir);

}  // namespace eams
