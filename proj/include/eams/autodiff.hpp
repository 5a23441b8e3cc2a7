#pragma once

#include <Eigen/Dense>
#include <functional>
#include <random>
#include <vector>

#include "eams/common.hpp"

namespace eams::ad {

using Matrix = Eigen::MatrixXd;

/// Handle into a Tape. All tensors are dense 2-D matrices; scalars are 1x1
/// and 3-vectors live as rows of Nx3 blocks.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over Eigen matrices. Nodes are appended in topological
/// order by construction; backward() visits them exactly once in reverse.
/// Everything is sequential and allocation-deterministic, so identical inputs
/// give bit-identical forward and backward results.
class Tape {
 public:
  Var input(Matrix value, bool requires_grad = false);
  Var scalar(double value);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  /// Materialises a zero gradient for untouched nodes.
  const Matrix& grad(Var v);
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// loss must be 1x1. Clears previous gradients.
  void backward(Var loss);

  int size() const { return static_cast<int>(nodes_.size()); }
  void set_check_finite(bool on) { check_finite_ = on; }

  // Node construction, public so tests can register deliberately wrong rules.
  Var emplace(Matrix value, const std::vector<Var>& parents,
              std::function<void(Tape&, Var)> backward_fn);
  void accumulate(Var v, const Matrix& g);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::function<void(Tape&, Var)> backward_fn;
  };
  std::vector<Node> nodes_;
  bool check_finite_ = false;
};

// Elementwise arithmetic. The second operand may broadcast: 1x1 scalar,
// 1xC row against NxC, or Nx1 column against NxC.
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var div(Tape& t, Var a, Var b);

Var neg(Tape& t, Var a);
Var scale(Tape& t, Var a, double c);
Var add_scalar(Tape& t, Var a, double c);

Var matmul(Tape& t, Var a, Var b);
Var transpose(Tape& t, Var a);

Var concat_rows(Tape& t, const std::vector<Var>& parts);
Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var slice_rows(Tape& t, Var a, int begin, int count);
Var slice_cols(Tape& t, Var a, int begin, int count);

Var sum_all(Tape& t, Var a);
Var mean_all(Tape& t, Var a);
Var rowwise_sum(Tape& t, Var a);   // NxD -> Nx1
Var colwise_sum(Tape& t, Var a);   // NxD -> 1xD
Var rowwise_mean(Tape& t, Var a);
Var colwise_mean(Tape& t, Var a);

/// Rowwise squared norm: NxD -> Nx1.
Var rowwise_sqnorm(Tape& t, Var a);
/// Rowwise cross product of two Nx3 blocks.
Var cross_rows(Tape& t, Var a, Var b);

Var exp_elem(Tape& t, Var a);
Var log_elem(Tape& t, Var a);
Var sqrt_elem(Tape& t, Var a);
Var relu(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var silu(Tape& t, Var a);
Var softmax_rows(Tape& t, Var a);

/// Identity in eval mode; inverted-scaling mask in train mode, drawn from rng
/// at construction so a reseeded rng reproduces the run exactly.
Var dropout(Tape& t, Var a, double p, bool training, std::mt19937_64& rng);

/// Mean (optionally class-weighted) cross-entropy with integer targets.
Var cross_entropy(Tape& t, Var logits, const std::vector<int>& targets,
                  const Eigen::VectorXd* class_weights = nullptr);

/// Scatter-add rows of a into n_segments bins; accumulation order is source
/// index within each segment. Empty segments are zero (also for the mean).
Var segment_sum(Tape& t, Var a, const std::vector<int>& segment_ids, int n_segments);
Var segment_mean(Tape& t, Var a, const std::vector<int>& segment_ids, int n_segments);
Var gather_rows(Tape& t, Var a, const std::vector<int>& row_ids);

/// Central-difference gradient verification of a scalar-valued build.
/// Returns max over input coordinates of |analytic - numeric| / max(1, |numeric|).
struct GradcheckProblem {
  std::function<Var(Tape&, const std::vector<Var>&)> build;
  std::vector<Matrix> inputs;
};
double gradcheck(const GradcheckProblem& problem, double eps = 1e-6);

}  // namespace eams::ad
