#include "eams/autodiff.hpp"

#include <cmath>

namespace eams::ad {

Var Tape::input(Matrix value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::scalar(double value) { return input(Matrix::Constant(1, 1, value)); }

const Matrix& Tape::grad(Var v) {
  Node& node = nodes_[v.id];
  if (node.grad.size() == 0)
    node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

Var Tape::emplace(Matrix value, const std::vector<Var>& parents,
                  std::function<void(Tape&, Var)> backward_fn) {
  if (check_finite_ && !value.allFinite())
    throw NonFiniteValue("tape: non-finite forward value at node " +
                         std::to_string(nodes_.size()));
  Node node;
  node.value = std::move(value);
  for (Var p : parents)
    if (nodes_[p.id].requires_grad) node.requires_grad = true;
  if (node.requires_grad) node.backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& node = nodes_[v.id];
  if (!node.requires_grad) return;
  if (node.grad.size() == 0)
    node.grad = g;
  else
    node.grad += g;
}

void Tape::backward(Var loss) {
  if (value(loss).rows() != 1 || value(loss).cols() != 1)
    throw ShapeMismatch("backward: loss must be a 1x1 scalar");
  for (auto& node : nodes_) node.grad.resize(0, 0);
  nodes_[loss.id].grad = Matrix::Ones(1, 1);
  for (int id = loss.id; id >= 0; --id) {
    Node& node = nodes_[id];
    if (node.grad.size() == 0 || !node.backward_fn) continue;
    node.backward_fn(*this, Var{id});
  }
}

namespace {

enum class Broadcast { same, scalar, row, col };

Broadcast broadcast_kind(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::same;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::col;
  throw ShapeMismatch(std::string(op) + ": incompatible shapes " + std::to_string(a.rows()) +
                      "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()));
}

Matrix expand(const Matrix& b, Broadcast kind, Eigen::Index rows, Eigen::Index cols) {
  switch (kind) {
    case Broadcast::same: return b;
    case Broadcast::scalar: return Matrix::Constant(rows, cols, b(0, 0));
    case Broadcast::row: return b.replicate(rows, 1);
    case Broadcast::col: return b.replicate(1, cols);
  }
  return b;
}

Matrix reduce(const Matrix& g, Broadcast kind) {
  switch (kind) {
    case Broadcast::same: return g;
    case Broadcast::scalar: return Matrix::Constant(1, 1, g.sum());
    case Broadcast::row: return g.colwise().sum();
    case Broadcast::col: return g.rowwise().sum();
  }
  return g;
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  const Matrix& va = t.value(a);
  const Matrix& vb = t.value(b);
  const Broadcast kind = broadcast_kind(va, vb, "add");
  return t.emplace(va + expand(vb, kind, va.rows(), va.cols()), {a, b},
                   [a, b, kind](Tape& tt, Var out) {
                     tt.accumulate(a, tt.grad(out));
                     tt.accumulate(b, reduce(tt.grad(out), kind));
                   });
}

Var sub(Tape& t, Var a, Var b) {
  const Matrix& va = t.value(a);
  const Matrix& vb = t.value(b);
  const Broadcast kind = broadcast_kind(va, vb, "sub");
  return t.emplace(va - expand(vb, kind, va.rows(), va.cols()), {a, b},
                   [a, b, kind](Tape& tt, Var out) {
                     tt.accumulate(a, tt.grad(out));
                     tt.accumulate(b, -reduce(tt.grad(out), kind));
                   });
}

Var mul(Tape& t, Var a, Var b) {
  const Matrix& va = t.value(a);
  const Matrix& vb = t.value(b);
  const Broadcast kind = broadcast_kind(va, vb, "mul");
  const Matrix vbx = expand(vb, kind, va.rows(), va.cols());
  return t.emplace(va.cwiseProduct(vbx), {a, b}, [a, b, kind, vbx](Tape& tt, Var out) {
    tt.accumulate(a, tt.grad(out).cwiseProduct(vbx));
    tt.accumulate(b, reduce(tt.grad(out).cwiseProduct(tt.value(a)), kind));
  });
}

Var div(Tape& t, Var a, Var b) {
  const Matrix& va = t.value(a);
  const Matrix& vb = t.value(b);
  const Broadcast kind = broadcast_kind(va, vb, "div");
  const Matrix vbx = expand(vb, kind, va.rows(), va.cols());
  return t.emplace(va.cwiseQuotient(vbx), {a, b}, [a, b, kind, vbx](Tape& tt, Var out) {
    tt.accumulate(a, tt.grad(out).cwiseQuotient(vbx));
    tt.accumulate(b, reduce((-tt.grad(out).array() * tt.value(out).array() / vbx.array()).matrix(),
                            kind));
  });
}

Var neg(Tape& t, Var a) {
  return t.emplace(-t.value(a), {a},
                   [a](Tape& tt, Var out) { tt.accumulate(a, -tt.grad(out)); });
}

Var scale(Tape& t, Var a, double c) {
  return t.emplace(c * t.value(a), {a},
                   [a, c](Tape& tt, Var out) { tt.accumulate(a, c * tt.grad(out)); });
}

Var add_scalar(Tape& t, Var a, double c) {
  return t.emplace(t.value(a).array() + c, {a},
                   [a](Tape& tt, Var out) { tt.accumulate(a, tt.grad(out)); });
}

Var matmul(Tape& t, Var a, Var b) {
  const Matrix& va = t.value(a);
  const Matrix& vb = t.value(b);
  if (va.cols() != vb.rows()) throw ShapeMismatch("matmul: inner dimensions differ");
  return t.emplace(va * vb, {a, b}, [a, b](Tape& tt, Var out) {
    tt.accumulate(a, tt.grad(out) * tt.value(b).transpose());
    tt.accumulate(b, tt.value(a).transpose() * tt.grad(out));
  });
}

Var transpose(Tape& t, Var a) {
  return t.emplace(t.value(a).transpose(), {a},
                   [a](Tape& tt, Var out) { tt.accumulate(a, tt.grad(out).transpose()); });
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no parts");
  Eigen::Index rows = 0;
  const Eigen::Index cols = t.value(parts[0]).cols();
  for (Var p : parts) {
    if (t.value(p).cols() != cols) throw ShapeMismatch("concat_rows: column mismatch");
    rows += t.value(p).rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, t.value(p).rows()) = t.value(p);
    at += t.value(p).rows();
  }
  return t.emplace(std::move(out), parts, [parts](Tape& tt, Var out_v) {
    Eigen::Index at = 0;
    for (Var p : parts) {
      const Eigen::Index r = tt.value(p).rows();
      tt.accumulate(p, tt.grad(out_v).middleRows(at, r));
      at += r;
    }
  });
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no parts");
  Eigen::Index cols = 0;
  const Eigen::Index rows = t.value(parts[0]).rows();
  for (Var p : parts) {
    if (t.value(p).rows() != rows) throw ShapeMismatch("concat_cols: row mismatch");
    cols += t.value(p).cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, t.value(p).cols()) = t.value(p);
    at += t.value(p).cols();
  }
  return t.emplace(std::move(out), parts, [parts](Tape& tt, Var out_v) {
    Eigen::Index at = 0;
    for (Var p : parts) {
      const Eigen::Index c = tt.value(p).cols();
      tt.accumulate(p, tt.grad(out_v).middleCols(at, c));
      at += c;
    }
  });
}

Var slice_rows(Tape& t, Var a, int begin, int count) {
  const Matrix& va = t.value(a);
  if (begin < 0 || count < 0 || begin + count > va.rows())
    throw IndexOutOfRange("slice_rows: range outside matrix");
  return t.emplace(va.middleRows(begin, count), {a}, [a, begin, count](Tape& tt, Var out) {
    Matrix g = Matrix::Zero(tt.value(a).rows(), tt.value(a).cols());
    g.middleRows(begin, count) = tt.grad(out);
    tt.accumulate(a, g);
  });
}

Var slice_cols(Tape& t, Var a, int begin, int count) {
  const Matrix& va = t.value(a);
  if (begin < 0 || count < 0 || begin + count > va.cols())
    throw IndexOutOfRange("slice_cols: range outside matrix");
  return t.emplace(va.middleCols(begin, count), {a}, [a, begin, count](Tape& tt, Var out) {
    Matrix g = Matrix::Zero(tt.value(a).rows(), tt.value(a).cols());
    g.middleCols(begin, count) = tt.grad(out);
    tt.accumulate(a, g);
  });
}

Var sum_all(Tape& t, Var a) {
  return t.emplace(Matrix::Constant(1, 1, t.value(a).sum()), {a}, [a](Tape& tt, Var out) {
    tt.accumulate(a, Matrix::Constant(tt.value(a).rows(), tt.value(a).cols(),
                                      tt.grad(out)(0, 0)));
  });
}

Var mean_all(Tape& t, Var a) {
  const double inv = 1.0 / static_cast<double>(t.value(a).size());
  return scale(t, sum_all(t, a), inv);
}

Var rowwise_sum(Tape& t, Var a) {
  return t.emplace(t.value(a).rowwise().sum(), {a}, [a](Tape& tt, Var out) {
    tt.accumulate(a, tt.grad(out).replicate(1, tt.value(a).cols()));
  });
}

Var colwise_sum(Tape& t, Var a) {
  return t.emplace(t.value(a).colwise().sum(), {a}, [a](Tape& tt, Var out) {
    tt.accumulate(a, tt.grad(out).replicate(tt.value(a).rows(), 1));
  });
}

Var rowwise_mean(Tape& t, Var a) {
  return scale(t, rowwise_sum(t, a), 1.0 / static_cast<double>(t.value(a).cols()));
}

Var colwise_mean(Tape& t, Var a) {
  return scale(t, colwise_sum(t, a), 1.0 / static_cast<double>(t.value(a).rows()));
}

Var rowwise_sqnorm(Tape& t, Var a) {
  return t.emplace(t.value(a).rowwise().squaredNorm(), {a}, [a](Tape& tt, Var out) {
    tt.accumulate(a, 2.0 * tt.value(a).cwiseProduct(
                            tt.grad(out).replicate(1, tt.value(a).cols())));
  });
}

Var cross_rows(Tape& t, Var a, Var b) {
  const Matrix& va = t.value(a);
  const Matrix& vb = t.value(b);
  if (va.cols() != 3 || vb.cols() != 3 || va.rows() != vb.rows())
    throw ShapeMismatch("cross_rows: operands must be Nx3 with equal N");
  auto cross = [](const Matrix& x, const Matrix& y) {
    Matrix out(x.rows(), 3);
    out.col(0) = x.col(1).cwiseProduct(y.col(2)) - x.col(2).cwiseProduct(y.col(1));
    out.col(1) = x.col(2).cwiseProduct(y.col(0)) - x.col(0).cwiseProduct(y.col(2));
    out.col(2) = x.col(0).cwiseProduct(y.col(1)) - x.col(1).cwiseProduct(y.col(0));
    return out;
  };
  return t.emplace(cross(va, vb), {a, b}, [a, b, cross](Tape& tt, Var out) {
    // d<g, a x b> = <b x g, da> + <g x a, db>
    tt.accumulate(a, cross(tt.value(b), tt.grad(out)));
    tt.accumulate(b, cross(tt.grad(out), tt.value(a)));
  });
}

Var exp_elem(Tape& t, Var a) {
  return t.emplace(t.value(a).array().exp(), {a}, [a](Tape& tt, Var out) {
    tt.accumulate(a, tt.grad(out).cwiseProduct(tt.value(out)));
  });
}

Var log_elem(Tape& t, Var a) {
  return t.emplace(t.value(a).array().log(), {a}, [a](Tape& tt, Var out) {
    tt.accumulate(a, tt.grad(out).cwiseQuotient(tt.value(a)));
  });
}

Var sqrt_elem(Tape& t, Var a) {
  return t.emplace(t.value(a).array().sqrt(), {a}, [a](Tape& tt, Var out) {
    tt.accumulate(a, (0.5 * tt.grad(out).array() / tt.value(out).array()).matrix());
  });
}

Var relu(Tape& t, Var a) {
  return t.emplace(t.value(a).cwiseMax(0.0), {a}, [a](Tape& tt, Var out) {
    tt.accumulate(a, (tt.value(a).array() > 0.0).cast<double>().matrix().cwiseProduct(
                         tt.grad(out)));
  });
}

Var sigmoid(Tape& t, Var a) {
  Matrix s = (1.0 / (1.0 + (-t.value(a).array()).exp())).matrix();
  return t.emplace(std::move(s), {a}, [a](Tape& tt, Var out) {
    const auto& y = tt.value(out).array();
    tt.accumulate(a, (tt.grad(out).array() * y * (1.0 - y)).matrix());
  });
}

Var silu(Tape& t, Var a) {
  const auto& x = t.value(a).array();
  Eigen::ArrayXXd s = 1.0 / (1.0 + (-x).exp());
  return t.emplace((x * s).matrix(), {a}, [a, s](Tape& tt, Var out) {
    const auto& x2 = tt.value(a).array();
    tt.accumulate(a, (tt.grad(out).array() * (s + x2 * s * (1.0 - s))).matrix());
  });
}

Var softmax_rows(Tape& t, Var a) {
  const Matrix& va = t.value(a);
  Matrix y(va.rows(), va.cols());
  for (Eigen::Index i = 0; i < va.rows(); ++i) {
    const double m = va.row(i).maxCoeff();
    Eigen::ArrayXd e = (va.row(i).array() - m).exp();
    y.row(i) = (e / e.sum()).matrix();
  }
  return t.emplace(std::move(y), {a}, [a](Tape& tt, Var out) {
    const Matrix& yv = tt.value(out);
    const Matrix& g = tt.grad(out);
    Matrix dx(yv.rows(), yv.cols());
    for (Eigen::Index i = 0; i < yv.rows(); ++i) {
      const double dot = g.row(i).dot(yv.row(i));
      dx.row(i) = yv.row(i).cwiseProduct(g.row(i) - Eigen::RowVectorXd::Constant(yv.cols(), dot));
    }
    tt.accumulate(a, dx);
  });
}

Var dropout(Tape& t, Var a, double p, bool training, std::mt19937_64& rng) {
  if (!training || p <= 0.0) return a;
  const Matrix& va = t.value(a);
  Matrix mask(va.rows(), va.cols());
  const double keep = 1.0 - p;
  for (Eigen::Index j = 0; j < va.cols(); ++j)
    for (Eigen::Index i = 0; i < va.rows(); ++i)
      mask(i, j) = uniform_unit(rng) < keep ? 1.0 / keep : 0.0;
  return t.emplace(va.cwiseProduct(mask), {a}, [a, mask](Tape& tt, Var out) {
    tt.accumulate(a, tt.grad(out).cwiseProduct(mask));
  });
}

Var cross_entropy(Tape& t, Var logits, const std::vector<int>& targets,
                  const Eigen::VectorXd* class_weights) {
  const Matrix& x = t.value(logits);
  const int n = static_cast<int>(x.rows());
  const int c = static_cast<int>(x.cols());
  if (n == 0 || targets.empty()) throw EmptyTargets("cross_entropy: no targets");
  if (static_cast<int>(targets.size()) != n)
    throw ShapeMismatch("cross_entropy: target count != logit rows");
  for (int i = 0; i < n; ++i)
    if (targets[i] < 0 || targets[i] >= c)
      throw IndexOutOfRange("cross_entropy: target class out of range");

  Matrix probs(n, c);
  double loss = 0.0, weight_sum = 0.0;
  Eigen::VectorXd wi(n);
  for (int i = 0; i < n; ++i) {
    const double m = x.row(i).maxCoeff();
    Eigen::ArrayXd e = (x.row(i).array() - m).exp();
    const double z = e.sum();
    probs.row(i) = (e / z).matrix();
    const double w = class_weights != nullptr ? (*class_weights)[targets[i]] : 1.0;
    wi[i] = w;
    weight_sum += w;
    loss += w * (std::log(z) + m - x(i, targets[i]));
  }
  loss /= weight_sum;

  return t.emplace(Matrix::Constant(1, 1, loss), {logits},
                   [logits, targets, probs, wi, weight_sum](Tape& tt, Var out) {
                     const double g = tt.grad(out)(0, 0);
                     Matrix dx = probs;
                     for (int i = 0; i < dx.rows(); ++i) {
                       dx(i, targets[i]) -= 1.0;
                       dx.row(i) *= g * wi[i] / weight_sum;
                     }
                     tt.accumulate(logits, dx);
                   });
}

Var segment_sum(Tape& t, Var a, const std::vector<int>& segment_ids, int n_segments) {
  const Matrix& va = t.value(a);
  if (static_cast<Eigen::Index>(segment_ids.size()) != va.rows())
    throw ShapeMismatch("segment_sum: id count != rows");
  for (int id : segment_ids)
    if (id < 0 || id >= n_segments) throw IndexOutOfRange("segment_sum: segment id out of range");
  Matrix out = Matrix::Zero(n_segments, va.cols());
  for (Eigen::Index i = 0; i < va.rows(); ++i) out.row(segment_ids[i]) += va.row(i);
  return t.emplace(std::move(out), {a}, [a, segment_ids](Tape& tt, Var out_v) {
    Matrix g(tt.value(a).rows(), tt.value(a).cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) g.row(i) = tt.grad(out_v).row(segment_ids[i]);
    tt.accumulate(a, g);
  });
}

Var segment_mean(Tape& t, Var a, const std::vector<int>& segment_ids, int n_segments) {
  std::vector<double> inv_count(n_segments, 0.0);
  for (int id : segment_ids) {
    if (id < 0 || id >= n_segments) throw IndexOutOfRange("segment_mean: segment id out of range");
    inv_count[id] += 1.0;
  }
  for (double& c : inv_count) c = c > 0.0 ? 1.0 / c : 0.0;
  const Matrix& va = t.value(a);
  if (static_cast<Eigen::Index>(segment_ids.size()) != va.rows())
    throw ShapeMismatch("segment_mean: id count != rows");
  Matrix out = Matrix::Zero(n_segments, va.cols());
  for (Eigen::Index i = 0; i < va.rows(); ++i)
    out.row(segment_ids[i]) += inv_count[segment_ids[i]] * va.row(i);
  return t.emplace(std::move(out), {a}, [a, segment_ids, inv_count](Tape& tt, Var out_v) {
    Matrix g(tt.value(a).rows(), tt.value(a).cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      g.row(i) = inv_count[segment_ids[i]] * tt.grad(out_v).row(segment_ids[i]);
    tt.accumulate(a, g);
  });
}

Var gather_rows(Tape& t, Var a, const std::vector<int>& row_ids) {
  const Matrix& va = t.value(a);
  for (int id : row_ids)
    if (id < 0 || id >= va.rows()) throw IndexOutOfRange("gather_rows: row id out of range");
  Matrix out(static_cast<Eigen::Index>(row_ids.size()), va.cols());
  for (size_t i = 0; i < row_ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = va.row(row_ids[i]);
  return t.emplace(std::move(out), {a}, [a, row_ids](Tape& tt, Var out_v) {
    Matrix g = Matrix::Zero(tt.value(a).rows(), tt.value(a).cols());
    for (size_t i = 0; i < row_ids.size(); ++i)
      g.row(row_ids[i]) += tt.grad(out_v).row(static_cast<Eigen::Index>(i));
    tt.accumulate(a, g);
  });
}

double gradcheck(const GradcheckProblem& problem, double eps) {
  // Analytic gradients in one reverse pass.
  std::vector<Matrix> analytic;
  {
    Tape t;
    std::vector<Var> vars;
    vars.reserve(problem.inputs.size());
    for (const Matrix& m : problem.inputs) vars.push_back(t.input(m, true));
    Var loss = problem.build(t, vars);
    t.backward(loss);
    for (Var v : vars) analytic.push_back(t.grad(v));
  }

  std::vector<Matrix> inputs = problem.inputs;
  auto eval = [&problem, &inputs]() {
    Tape t;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Matrix& m : inputs) vars.push_back(t.input(m, false));
    return t.value(problem.build(t, vars))(0, 0);
  };

  double max_rel = 0.0;
  for (size_t k = 0; k < inputs.size(); ++k) {
    for (Eigen::Index idx = 0; idx < inputs[k].size(); ++idx) {
      const double saved = inputs[k].data()[idx];
      inputs[k].data()[idx] = saved + eps;
      const double f_plus = eval();
      inputs[k].data()[idx] = saved - eps;
      const double f_minus = eval();
      inputs[k].data()[idx] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double rel = std::abs(analytic[k](idx) - numeric) / std::max(1.0, std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace eams::ad
