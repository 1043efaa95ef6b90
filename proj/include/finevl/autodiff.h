#ifndef FINEVL_AUTODIFF_H_
#define FINEVL_AUTODIFF_H_

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace finevl {

// Minimal reverse-mode differentiation over dense double matrices. Nodes are
// appended in evaluation order; Backward() walks them in reverse.
class Tape {
 public:
  using Matrix = Eigen::MatrixXd;
  static constexpr double kNormFloor = 1e-12;

  struct Var {
    int id = -1;
  };

  // A differentiable input; Backward() adds its gradient into `*sink`, which
  // must outlive the tape and match the value's shape.
  Var Leaf(const Matrix& value, Matrix* sink);
  Var Constant(Matrix value);

  Var MatMul(Var a, Var b);
  Var MatMulT(Var a, Var b);  // a · bᵀ
  Var Add(Var a, Var b);
  Var AddRow(Var a, Var row);  // broadcast a 1×d row over every row of a
  Var Scale(Var a, double s);
  Var Gather(Var table, const std::vector<int>& rows);
  Var RowSlice(Var a, Eigen::Index start, Eigen::Index count);
  Var MeanRows(Var a);
  Var ConcatRows(const std::vector<Var>& parts);
  Var SoftmaxRows(Var a);
  Var Gelu(Var a);
  // Row-wise x / max(|x|, kNormFloor).
  Var NormalizeRows(Var a);
  Var Sum(const std::vector<Var>& scalars);

  // A 1×1 node whose gradient with respect to input k is `grads[k]` times
  // the upstream gradient. Used for loss kernels with analytic gradients.
  Var Custom(const std::vector<Var>& inputs, double value, std::vector<Matrix> grads);

  const Matrix& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
  size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 (root must be 1×1) and propagates to leaves.
  void Backward(Var root);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Matrix* sink = nullptr;
    std::vector<int> inputs;
    std::function<void(Tape&, int)> backward;
  };

  Var Push(Matrix value, std::vector<int> inputs, std::function<void(Tape&, int)> backward);
  void AddGrad(int id, const Matrix& g);
  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }

  std::vector<Node> nodes_;
};

// Exact (erf-based) GELU and its derivative.
double GeluValue(double x);
double GeluDerivative(double x);

}  // namespace finevl

#endif  // FINEVL_AUTODIFF_H_
