#include "eams/objectives.hpp"

#include <cmath>
#include <map>

namespace eams {

using ad::Tape;
using ad::Var;

LossWeights LossWeights::preset(DatasetTag tag) {
  LossWeights w;
  if (tag == DatasetTag::liver) {
    w.lambda_cbl = 1.0;
    w.lambda_cont = 1.0;
  }
  return w;
}

Var prediction_loss(Tape& t, Var logits, const std::vector<int>& targets,
                    const Eigen::VectorXd* class_weights) {
  Var ce = ad::cross_entropy(t, logits, targets, class_weights);

  const int n = static_cast<int>(t.value(logits).rows());
  const int c = static_cast<int>(t.value(logits).cols());
  ad::Matrix onehot = ad::Matrix::Zero(n, c);
  for (int i = 0; i < n; ++i) onehot(i, targets[i]) = 1.0;
  Var target_mass = t.input(onehot);

  const double eps = 1e-7;
  Var probs = ad::softmax_rows(t, logits);
  Var intersection = ad::colwise_sum(t, ad::mul(t, probs, target_mass));
  Var numer = ad::add_scalar(t, ad::scale(t, intersection, 2.0), eps);
  Var denom = ad::add_scalar(
      t, ad::add(t, ad::colwise_sum(t, probs), ad::colwise_sum(t, target_mass)), eps);
  Var mean_dice = ad::mean_all(t, ad::div(t, numer, denom));
  Var dice_term = ad::sub(t, t.scalar(1.0), mean_dice);
  return ad::add(t, ce, dice_term);
}

Var boundary_contrast_loss(Tape& t, Var embeddings, const std::vector<int>& labels,
                           const std::vector<std::pair<int, int>>& adjacent_pairs,
                           double boundary_margin, double same_margin) {
  std::vector<int> boundary_a, boundary_b, same_a, same_b;
  for (const auto& [i, j] : adjacent_pairs) {
    if (labels[i] != labels[j]) {
      boundary_a.push_back(i);
      boundary_b.push_back(j);
    } else {
      same_a.push_back(i);
      same_b.push_back(j);
    }
  }
  if (boundary_a.empty()) return t.scalar(0.0);

  auto cosine = [&t, embeddings](const std::vector<int>& ia, const std::vector<int>& ib) {
    Var a = ad::gather_rows(t, embeddings, ia);
    Var b = ad::gather_rows(t, embeddings, ib);
    Var dots = ad::rowwise_sum(t, ad::mul(t, a, b));
    Var na = ad::sqrt_elem(t, ad::add_scalar(t, ad::rowwise_sqnorm(t, a), 1e-24));
    Var nb = ad::sqrt_elem(t, ad::add_scalar(t, ad::rowwise_sqnorm(t, b), 1e-24));
    return ad::div(t, dots, ad::add_scalar(t, ad::mul(t, na, nb), 1e-12));
  };

  const double n_pairs = static_cast<double>(adjacent_pairs.size());
  Var boundary_hinge =
      ad::sum_all(t, ad::relu(t, ad::add_scalar(t, cosine(boundary_a, boundary_b),
                                                -boundary_margin)));
  Var loss = boundary_hinge;
  if (!same_a.empty()) {
    Var same_hinge = ad::sum_all(
        t, ad::relu(t, ad::add_scalar(t, ad::neg(t, cosine(same_a, same_b)), same_margin)));
    loss = ad::add(t, loss, same_hinge);
  }
  return ad::scale(t, loss, 1.0 / n_pairs);
}

Var sra_reg_loss(Tape& t, Var assignment, double lambda_div, double lambda_eq) {
  const int k = static_cast<int>(t.value(assignment).cols());

  // Diversity: off-diagonal energy of the Gram matrix of l2-normalised columns.
  Var col_sq = ad::colwise_sum(t, ad::mul(t, assignment, assignment));
  Var col_norm = ad::sqrt_elem(t, ad::add_scalar(t, col_sq, 1e-16));
  Var normalized = ad::div(t, assignment, col_norm);  // row-broadcast divide
  Var gram = ad::matmul(t, ad::transpose(t, normalized), normalized);
  Var centered = ad::sub(t, gram, t.input(ad::Matrix::Identity(k, k)));
  Var l_div = ad::sum_all(t, ad::mul(t, centered, centered));

  // Equipartition: relative variance of the column masses.
  Var masses = ad::colwise_sum(t, assignment);
  Var mean_mass = ad::mean_all(t, masses);
  Var deviation = ad::sub(t, masses, mean_mass);
  Var variance = ad::mean_all(t, ad::mul(t, deviation, deviation));
  Var l_eq = ad::div(t, variance, ad::add_scalar(t, ad::mul(t, mean_mass, mean_mass), 1e-8));

  return ad::add(t, ad::scale(t, l_div, lambda_div), ad::scale(t, l_eq, lambda_eq));
}

namespace {

// Pairwise squared distances via |p|^2 + |q|^2 - 2 p q^T.
Var pairwise_sq_dists(Tape& t, Var a, Var b) {
  Var an = ad::rowwise_sqnorm(t, a);            // A x 1
  Var bn = ad::rowwise_sqnorm(t, b);            // B x 1
  Var cross = ad::matmul(t, a, ad::transpose(t, b));
  Var d = ad::add(t, ad::scale(t, cross, -2.0), an);    // column broadcast
  return ad::add(t, d, ad::transpose(t, bn));           // row broadcast
}

}  // namespace

Var vn_reg_loss(Tape& t, Var virtual_coords, Var surface_points, double sigma, double w_vv,
                double w_rv) {
  const int v = static_cast<int>(t.value(virtual_coords).rows());
  const double inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);

  Var repulsion = t.scalar(0.0);
  if (v >= 2) {
    Var kernel = ad::exp_elem(
        t, ad::scale(t, pairwise_sq_dists(t, virtual_coords, virtual_coords), -inv_two_sigma_sq));
    ad::Matrix mask = ad::Matrix::Ones(v, v) - ad::Matrix::Identity(v, v);
    Var off_diag = ad::sum_all(t, ad::mul(t, kernel, t.input(mask)));
    repulsion = ad::scale(t, off_diag, 1.0 / (static_cast<double>(v) * (v - 1)));
  }

  Var attraction = ad::mean_all(
      t, ad::exp_elem(t, ad::scale(t, pairwise_sq_dists(t, surface_points, virtual_coords),
                                   -inv_two_sigma_sq)));
  return ad::sub(t, ad::scale(t, repulsion, w_vv), ad::scale(t, attraction, w_rv));
}

Var continuity_loss(Tape& t, Var edge_probs,
                    const std::vector<std::pair<int, int>>& adjacent_edge_pairs) {
  if (adjacent_edge_pairs.empty()) return t.scalar(0.0);
  std::vector<int> first, second;
  first.reserve(adjacent_edge_pairs.size());
  second.reserve(adjacent_edge_pairs.size());
  for (const auto& [i, j] : adjacent_edge_pairs) {
    first.push_back(i);
    second.push_back(j);
  }
  Var diff = ad::sub(t, ad::gather_rows(t, edge_probs, first),
                     ad::gather_rows(t, edge_probs, second));
  return ad::mean_all(t, ad::rowwise_sqnorm(t, diff));
}

Var total_loss(Tape& t, EncoderVariant variant, const LossParts& parts,
               const LossWeights& weights) {
  if (!parts.pred.valid() || !parts.cbl.valid())
    throw MissingPart("total_loss: prediction and boundary terms are required");
  Var loss = ad::add(t, ad::scale(t, parts.pred, weights.lambda_pred),
                     ad::scale(t, parts.cbl, weights.lambda_cbl));
  if (weights.lambda_cont > 0.0) {
    if (!parts.cont.valid()) throw MissingPart("total_loss: continuity term required");
    loss = ad::add(t, loss, ad::scale(t, parts.cont, weights.lambda_cont));
  }
  if (variant == EncoderVariant::sra) {
    if (!parts.sra.valid()) throw MissingPart("total_loss: SRA regulariser required");
    loss = ad::add(t, loss, parts.sra);
  }
  if (variant == EncoderVariant::vn) {
    if (!parts.vn.valid()) throw MissingPart("total_loss: VN regulariser required");
    loss = ad::add(t, loss, parts.vn);
  }
  return loss;
}

std::vector<std::pair<int, int>> vertex_adjacent_pairs(const GraphBatch& batch) {
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(batch.n_undirected_edges());
  for (int e = 0; e < batch.n_undirected_edges(); ++e)
    pairs.push_back({batch.undirected_edges(e, 0), batch.undirected_edges(e, 1)});
  return pairs;
}

std::vector<std::pair<int, int>> edge_adjacent_pairs(const GraphBatch& batch) {
  std::map<int, std::vector<int>> edges_at_vertex;
  for (int e = 0; e < batch.n_undirected_edges(); ++e) {
    edges_at_vertex[batch.undirected_edges(e, 0)].push_back(e);
    edges_at_vertex[batch.undirected_edges(e, 1)].push_back(e);
  }
  std::vector<std::pair<int, int>> pairs;
  for (const auto& [vertex, edges] : edges_at_vertex)
    for (size_t a = 0; a < edges.size(); ++a)
      for (size_t b = a + 1; b < edges.size(); ++b) pairs.push_back({edges[a], edges[b]});
  return pairs;
}

std::vector<std::pair<int, int>> face_adjacent_pairs(const GraphBatch& batch) {
  std::map<std::pair<int, int>, std::vector<int>> faces_at_edge;
  for (int f = 0; f < batch.n_faces(); ++f) {
    for (int c = 0; c < 3; ++c) {
      const int a = batch.faces(f, c), b = batch.faces(f, (c + 1) % 3);
      faces_at_edge[{std::min(a, b), std::max(a, b)}].push_back(f);
    }
  }
  std::vector<std::pair<int, int>> pairs;
  for (const auto& [edge, faces] : faces_at_edge)
    for (size_t a = 0; a < faces.size(); ++a)
      for (size_t b = a + 1; b < faces.size(); ++b) pairs.push_back({faces[a], faces[b]});
  return pairs;
}

Var supervision_embeddings(Tape& t, Var h, const GraphBatch& batch) {
  switch (batch.level) {
    case OutputLevel::vertex: return h;
    case OutputLevel::edge: {
      const int nu = batch.n_undirected_edges();
      std::vector<int> a(nu), b(nu);
      for (int e = 0; e < nu; ++e) {
        a[e] = batch.undirected_edges(e, 0);
        b[e] = batch.undirected_edges(e, 1);
      }
      return ad::scale(t, ad::add(t, ad::gather_rows(t, h, a), ad::gather_rows(t, h, b)), 0.5);
    }
    case OutputLevel::face: {
      const int nf = batch.n_faces();
      std::vector<int> f0(nf), f1(nf), f2(nf);
      for (int f = 0; f < nf; ++f) {
        f0[f] = batch.faces(f, 0);
        f1[f] = batch.faces(f, 1);
        f2[f] = batch.faces(f, 2);
      }
      return ad::scale(t,
                       ad::add(t, ad::add(t, ad::gather_rows(t, h, f0), ad::gather_rows(t, h, f1)),
                               ad::gather_rows(t, h, f2)),
                       1.0 / 3.0);
    }
  }
  return h;
}

Var batch_loss(Tape& t, const ForwardResult& fwd, const GraphBatch& batch,
               const EncoderConfig& config, const LossWeights& weights,
               std::mt19937_64& subsample_rng) {
  LossParts parts;
  parts.pred = prediction_loss(t, fwd.logits, batch.targets);

  std::vector<std::pair<int, int>> pairs;
  switch (batch.level) {
    case OutputLevel::vertex: pairs = vertex_adjacent_pairs(batch); break;
    case OutputLevel::edge: pairs = edge_adjacent_pairs(batch); break;
    case OutputLevel::face: pairs = face_adjacent_pairs(batch); break;
  }
  Var embeddings = supervision_embeddings(t, fwd.node_embeddings, batch);
  parts.cbl = boundary_contrast_loss(t, embeddings, batch.targets, pairs,
                                     weights.cbl_boundary_margin, weights.cbl_same_margin);

  if (weights.lambda_cont > 0.0 && batch.level == OutputLevel::edge)
    parts.cont = continuity_loss(t, ad::softmax_rows(t, fwd.logits), pairs);

  if (config.variant == EncoderVariant::sra) {
    Var acc = t.scalar(0.0);
    for (int g = 0; g < batch.n_graphs; ++g) {
      const int begin = batch.graph_node_offsets[g];
      const int len = batch.graph_node_offsets[g + 1] - begin;
      Var a_g = ad::slice_rows(t, fwd.assignment, begin, len);
      acc = ad::add(t, acc, sra_reg_loss(t, a_g, weights.lambda_div, weights.lambda_eq));
    }
    parts.sra = ad::scale(t, acc, 1.0 / batch.n_graphs);
  }

  if (config.variant == EncoderVariant::vn) {
    Var acc = t.scalar(0.0);
    for (int g = 0; g < batch.n_graphs; ++g) {
      const int begin = batch.graph_node_offsets[g];
      const int len = batch.graph_node_offsets[g + 1] - begin;
      // Subsample of the input surface; the gradient drives only the virtual
      // coordinates toward it.
      const int n_sub = std::min(weights.vn_subsample, len);
      std::vector<int> chosen(n_sub);
      for (int s = 0; s < n_sub; ++s) chosen[s] = begin + uniform_index(subsample_rng, len);
      ad::Matrix sub_pts(n_sub, 3);
      for (int s = 0; s < n_sub; ++s) sub_pts.row(s) = batch.coord_channels[0].row(chosen[s]);
      Eigen::RowVector3d centroid = batch.coord_channels[0]
                                        .middleRows(begin, len)
                                        .colwise()
                                        .mean();
      const double radius = (batch.coord_channels[0].middleRows(begin, len).rowwise() - centroid)
                                .rowwise()
                                .norm()
                                .maxCoeff();
      const double sigma = weights.sigma > 0.0 ? weights.sigma : 0.2 * std::max(radius, 1e-12);
      Var u_g = ad::slice_rows(t, fwd.virtual_coords, g * config.virtual_nodes,
                               config.virtual_nodes);
      acc = ad::add(t, acc,
                    vn_reg_loss(t, u_g, t.input(sub_pts), sigma, weights.w_vv, weights.w_rv));
    }
    parts.vn = ad::scale(t, acc, 1.0 / batch.n_graphs);
  }

  return total_loss(t, config.variant, parts, weights);
}

}  // namespace eams
