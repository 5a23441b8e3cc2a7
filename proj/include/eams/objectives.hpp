#pragma once

#include "eams/autodiff.hpp"
#include "eams/encoder.hpp"

namespace eams {

struct LossWeights {
  double lambda_pred = 1.0;
  double lambda_cbl = 10.0;   // 1.0 on liver
  double lambda_div = 1.0;
  double lambda_eq = 1.0;
  double w_vv = 1.0;
  double w_rv = 1.0;
  double lambda_cont = 0.0;   // 1.0 on liver
  double sigma = 0.0;         // 0 -> 0.2 * per-graph bounding radius
  int vn_subsample = 256;
  double cbl_boundary_margin = 0.3;
  double cbl_same_margin = 0.5;

  static LossWeights preset(DatasetTag tag);
};

/// Mean cross-entropy plus (1 - mean soft-Dice over classes). Stand-in for
/// the externally defined boundary-overlap objective; see prediction docs.
ad::Var prediction_loss(ad::Tape& t, ad::Var logits, const std::vector<int>& targets,
                        const Eigen::VectorXd* class_weights = nullptr);

/// Hinge contrast on cosine similarity over adjacent element pairs:
/// different-label pairs push below boundary_margin, same-label pairs pull
/// above same_margin. Returns 0 when no boundary pairs exist.
ad::Var boundary_contrast_loss(ad::Tape& t, ad::Var embeddings, const std::vector<int>& labels,
                               const std::vector<std::pair<int, int>>& adjacent_pairs,
                               double boundary_margin = 0.3, double same_margin = 0.5);

/// lambda_div * |A~^T A~ - I|_F^2 + lambda_eq * Var(1^T A) / (mean_mass^2 + eps)
/// for one graph's row-stochastic assignment.
ad::Var sra_reg_loss(ad::Tape& t, ad::Var assignment, double lambda_div, double lambda_eq);

/// w_vv * mean off-diagonal Gaussian kernel among virtual coordinates minus
/// w_rv * mean kernel between a surface subsample and the virtual nodes.
ad::Var vn_reg_loss(ad::Tape& t, ad::Var virtual_coords, ad::Var surface_points, double sigma,
                    double w_vv, double w_rv);

/// Mean squared difference of probability vectors over adjacent edge pairs.
ad::Var continuity_loss(ad::Tape& t, ad::Var edge_probs,
                        const std::vector<std::pair<int, int>>& adjacent_edge_pairs);

struct LossParts {
  ad::Var pred;
  ad::Var cbl;
  ad::Var sra;   // required for the sra variant
  ad::Var vn;    // required for the vn variant
  ad::Var cont;  // required when lambda_cont > 0
};

/// Composite objective: pred + lambda_cbl*cbl (+ lambda_cont*cont) plus the
/// variant's regulariser. Throws MissingPart when a required part is absent.
ad::Var total_loss(ad::Tape& t, EncoderVariant variant, const LossParts& parts,
                   const LossWeights& weights);

// Adjacency pair builders for the boundary/continuity terms.
std::vector<std::pair<int, int>> vertex_adjacent_pairs(const GraphBatch& batch);
std::vector<std::pair<int, int>> edge_adjacent_pairs(const GraphBatch& batch);
std::vector<std::pair<int, int>> face_adjacent_pairs(const GraphBatch& batch);

/// Embeddings at the batch's supervision level: nodes as-is, undirected edges
/// as endpoint means, faces as corner means.
ad::Var supervision_embeddings(ad::Tape& t, ad::Var h, const GraphBatch& batch);

/// Full training objective for one batch: prediction + boundary contrast
/// (+ continuity on edge level) + the variant regulariser.
ad::Var batch_loss(ad::Tape& t, const ForwardResult& fwd, const GraphBatch& batch,
                   const EncoderConfig& config, const LossWeights& weights,
                   std::mt19937_64& subsample_rng);

}  // namespace eams
