#pragma once

#include "eams/io.hpp"
#include "eams/train.hpp"

namespace eams {

/// Manifest -> DataItems: loads meshes and labels (falling back to
/// nearest-point remapping on row-count mismatch when an annotated point file
/// is supplied), cleans, and solves or reads the cached spectral basis.
/// cache_root overrides the manifest cache dir (the CLI wires it to
/// EAMS_CACHE_ROOT); empty string disables caching entirely.
std::vector<DataItem> load_dataset(const DatasetManifest& manifest, int k_eigenpairs,
                                   double eig_tol, const std::string& cache_root);

/// Invariance harness: baseline vs z-rotations and rewound x-reflection.
struct InvarianceReport {
  double max_logit_deviation = 0.0;
  bool argmax_identical = true;
  std::map<std::string, double> per_condition;
};

InvarianceReport invariance_harness(const ModelState& state, const std::vector<DataItem>& items,
                                    const FeatureConfig& fc);

/// Finite-difference check of the complete training objective against the
/// analytic gradients, over every parameter of a small model on a small mesh.
double full_model_gradcheck(const EncoderConfig& config, std::uint64_t seed);

/// Small shipped-size test config used by gradcheck harnesses.
EncoderConfig desk_config(EncoderVariant variant, int width = 12, int n_layers = 2,
                          int n_classes = 2);

}  // namespace eams
