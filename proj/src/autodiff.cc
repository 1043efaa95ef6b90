#include "finevl/autodiff.h"

#include <cmath>

#include "finevl/error.h"

namespace finevl {
namespace {

std::string Shape(const Eigen::MatrixXd& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void RequireSameShape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(Errc::kShapeMismatch, std::string(op) + ": " + Shape(a) + " vs " + Shape(b));
  }
}

}  // namespace

double GeluValue(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double GeluDerivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

Tape::Var Tape::Push(Matrix value, std::vector<int> inputs, std::function<void(Tape&, int)> backward) {
  Node n;
  n.value = std::move(value);
  for (int i : inputs) n.needs_grad = n.needs_grad || node(i).needs_grad;
  n.inputs = std::move(inputs);
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::AddGrad(int id, const Matrix& g) {
  Node& n = node(id);
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Tape::Var Tape::Leaf(const Matrix& value, Matrix* sink) {
  if (sink) RequireSameShape(value, *sink, "leaf gradient sink");
  Node n;
  n.value = value;
  n.needs_grad = sink != nullptr;
  n.sink = sink;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tape::Var Tape::Constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tape::Var Tape::MatMul(Var a, Var b) {
  if (value(a).cols() != value(b).rows()) {
    throw Error(Errc::kShapeMismatch, "matmul " + Shape(value(a)) + " by " + Shape(value(b)));
  }
  return Push(value(a) * value(b), {a.id, b.id}, [a, b](Tape& t, int self) {
    const Matrix& g = t.node(self).grad;
    t.AddGrad(a.id, g * t.value(b).transpose());
    t.AddGrad(b.id, t.value(a).transpose() * g);
  });
}

Tape::Var Tape::MatMulT(Var a, Var b) {
  if (value(a).cols() != value(b).cols()) {
    throw Error(Errc::kShapeMismatch, "matmul-transpose " + Shape(value(a)) + " by " + Shape(value(b)));
  }
  return Push(value(a) * value(b).transpose(), {a.id, b.id}, [a, b](Tape& t, int self) {
    const Matrix& g = t.node(self).grad;
    t.AddGrad(a.id, g * t.value(b));
    t.AddGrad(b.id, g.transpose() * t.value(a));
  });
}

Tape::Var Tape::Add(Var a, Var b) {
  RequireSameShape(value(a), value(b), "add");
  return Push(value(a) + value(b), {a.id, b.id}, [a, b](Tape& t, int self) {
    const Matrix& g = t.node(self).grad;
    t.AddGrad(a.id, g);
    t.AddGrad(b.id, g);
  });
}

Tape::Var Tape::AddRow(Var a, Var row) {
  if (value(row).rows() != 1 || value(row).cols() != value(a).cols()) {
    throw Error(Errc::kShapeMismatch, "add-row " + Shape(value(a)) + " with " + Shape(value(row)));
  }
  Matrix out = value(a).rowwise() + value(row).row(0);
  return Push(std::move(out), {a.id, row.id}, [a, row](Tape& t, int self) {
    const Matrix& g = t.node(self).grad;
    t.AddGrad(a.id, g);
    t.AddGrad(row.id, g.colwise().sum());
  });
}

Tape::Var Tape::Scale(Var a, double s) {
  return Push(value(a) * s, {a.id}, [a, s](Tape& t, int self) { t.AddGrad(a.id, t.node(self).grad * s); });
}

Tape::Var Tape::Gather(Var table, const std::vector<int>& rows) {
  const Matrix& tv = value(table);
  Matrix out(static_cast<Eigen::Index>(rows.size()), tv.cols());
  for (size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= tv.rows()) {
      throw Error(Errc::kShapeMismatch, "gather row " + std::to_string(rows[k]) + " of " + Shape(tv));
    }
    out.row(static_cast<Eigen::Index>(k)) = tv.row(rows[k]);
  }
  return Push(std::move(out), {table.id}, [table, rows](Tape& t, int self) {
    const Matrix& g = t.node(self).grad;
    Matrix d = Matrix::Zero(t.value(table).rows(), t.value(table).cols());
    for (size_t k = 0; k < rows.size(); ++k) d.row(rows[k]) += g.row(static_cast<Eigen::Index>(k));
    t.AddGrad(table.id, d);
  });
}

Tape::Var Tape::RowSlice(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > value(a).rows()) {
    throw Error(Errc::kShapeMismatch, "row slice [" + std::to_string(start) + ", " +
                                          std::to_string(start + count) + ") of " + Shape(value(a)));
  }
  return Push(value(a).middleRows(start, count), {a.id}, [a, start, count](Tape& t, int self) {
    Matrix d = Matrix::Zero(t.value(a).rows(), t.value(a).cols());
    d.middleRows(start, count) = t.node(self).grad;
    t.AddGrad(a.id, d);
  });
}

Tape::Var Tape::MeanRows(Var a) {
  const Eigen::Index n = value(a).rows();
  if (n == 0) throw Error(Errc::kShapeMismatch, "mean over zero rows");
  return Push(value(a).colwise().mean(), {a.id}, [a, n](Tape& t, int self) {
    t.AddGrad(a.id, Matrix::Ones(n, 1) * t.node(self).grad / static_cast<double>(n));
  });
}

Tape::Var Tape::ConcatRows(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(Errc::kShapeMismatch, "concat of nothing");
  Eigen::Index rows = 0;
  const Eigen::Index cols = value(parts[0]).cols();
  std::vector<int> ids;
  for (Var p : parts) {
    if (value(p).cols() != cols) {
      throw Error(Errc::kShapeMismatch, "concat " + Shape(value(p)) + " with width " + std::to_string(cols));
    }
    rows += value(p).rows();
    ids.push_back(p.id);
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  for (Var p : parts) {
    out.middleRows(offset, value(p).rows()) = value(p);
    offset += value(p).rows();
  }
  return Push(std::move(out), ids, [parts](Tape& t, int self) {
    Eigen::Index off = 0;
    for (Var p : parts) {
      const Eigen::Index r = t.value(p).rows();
      t.AddGrad(p.id, t.node(self).grad.middleRows(off, r));
      off += r;
    }
  });
}

Tape::Var Tape::SoftmaxRows(Var a) {
  Matrix p = value(a);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    p.row(i) = (p.row(i).array() - p.row(i).maxCoeff()).exp();
    p.row(i) /= p.row(i).sum();
  }
  return Push(std::move(p), {a.id}, [a](Tape& t, int self) {
    const Matrix& g = t.node(self).grad;
    const Matrix& y = t.value(Var{self});
    Eigen::VectorXd dots = (g.array() * y.array()).rowwise().sum();
    Matrix d = y.array() * (g.colwise() - dots).array();
    t.AddGrad(a.id, d);
  });
}

Tape::Var Tape::Gelu(Var a) {
  return Push(value(a).unaryExpr(&GeluValue), {a.id}, [a](Tape& t, int self) {
    Matrix d = t.node(self).grad.array() * t.value(a).unaryExpr(&GeluDerivative).array();
    t.AddGrad(a.id, d);
  });
}

Tape::Var Tape::NormalizeRows(Var a) {
  Eigen::VectorXd norms = value(a).rowwise().norm();
  // Rows below the floor are scaled linearly instead, so all-zero rows map
  // to zero rather than failing.
  Eigen::VectorXd scale = norms.cwiseMax(kNormFloor);
  Matrix y = value(a).array().colwise() / scale.array();
  return Push(std::move(y), {a.id}, [a, norms, scale](Tape& t, int self) {
    const Matrix& g = t.node(self).grad;
    const Matrix& y = t.value(Var{self});
    Eigen::VectorXd dots = (g.array() * y.array()).rowwise().sum();
    for (Eigen::Index i = 0; i < dots.size(); ++i) {
      if (norms(i) < kNormFloor) dots(i) = 0.0;
    }
    Matrix d = g - (y.array().colwise() * dots.array()).matrix();
    d = d.array().colwise() / scale.array();
    t.AddGrad(a.id, d);
  });
}

Tape::Var Tape::Sum(const std::vector<Var>& scalars) {
  double total = 0.0;
  std::vector<int> ids;
  for (Var s : scalars) {
    if (value(s).size() != 1) throw Error(Errc::kShapeMismatch, "sum of non-scalar " + Shape(value(s)));
    total += value(s)(0, 0);
    ids.push_back(s.id);
  }
  return Push(Matrix::Constant(1, 1, total), ids, [ids](Tape& t, int self) {
    for (int id : ids) t.AddGrad(id, t.node(self).grad);
  });
}

Tape::Var Tape::Custom(const std::vector<Var>& inputs, double v, std::vector<Matrix> grads) {
  if (grads.size() != inputs.size()) throw Error(Errc::kShapeMismatch, "custom node gradient count");
  std::vector<int> ids;
  for (size_t k = 0; k < inputs.size(); ++k) {
    RequireSameShape(value(inputs[k]), grads[k], "custom node gradient");
    ids.push_back(inputs[k].id);
  }
  return Push(Matrix::Constant(1, 1, v), ids, [ids, grads = std::move(grads)](Tape& t, int self) {
    const double g = t.node(self).grad(0, 0);
    for (size_t k = 0; k < ids.size(); ++k) t.AddGrad(ids[k], grads[k] * g);
  });
}

void Tape::Backward(Var root) {
  if (value(root).size() != 1) throw Error(Errc::kShapeMismatch, "backward from non-scalar " + Shape(value(root)));
  for (Node& n : nodes_) n.grad.resize(0, 0);
  if (!node(root.id).needs_grad) return;
  node(root.id).grad = Matrix::Ones(1, 1);
  for (int id = root.id; id >= 0; --id) {
    Node& n = node(id);
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, id);
    if (n.sink) *n.sink += n.grad;
  }
}

}  // namespace finevl
