#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace dzlab::ag {

using Mat = Eigen::MatrixXd;

// Handle to a node on a Tape.
struct Var {
  int id = -1;
};

// Reverse-mode tape over dense matrices. Nodes are appended in topological
// order, so backward() is a single reverse sweep.
class Tape {
 public:
  Var constant(Mat value);
  // Leaf whose gradient is accumulated and can be read after backward().
  Var leaf(Mat value);

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  // Gradient of the last backward() target; zero-sized if never touched.
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Seeds d(target)/d(target) = 1 for a 1x1 target and sweeps backwards.
  void backward(Var target);

  std::size_t size() const { return nodes_.size(); }

  // Used by op implementations.
  Var push(Mat value, bool requires_grad, std::function<void(Tape&, int)> backward);
  Mat& grad_ref(Var v);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::function<void(Tape&, int)> backward;
  };
  std::vector<Node> nodes_;
};

Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
// x (n x m) plus a 1 x m row broadcast over every row.
Var add_row(Tape& t, Var x, Var row);
Var mul(Tape& t, Var a, Var b);
Var relu(Tape& t, Var x);
// Row-wise layer normalization with learned gain and shift (both 1 x m).
Var layer_norm(Tape& t, Var x, Var gain, Var shift, double eps = 1e-5);

// Multi-head scaled dot-product attention over stacked segments: rows
// [b*seg, (b+1)*seg) of q, k and v belong to sample b. Head outputs are
// concatenated along columns. When `weights` is non-null the softmax
// matrices are appended to it (sample-major, then head). Non-finite scores
// raise NumericError tagged with `layer`.
Var attention(Tape& t, Var q, Var k, Var v, int heads, int seg, int layer,
              std::vector<Mat>* weights = nullptr);

// Mean over each consecutive block of `seg` rows: (B*seg x m) -> (B x m).
Var mean_pool(Tape& t, Var x, int seg);
// Repeats every row `seg` times: (B x m) -> (B*seg x m).
Var repeat_rows(Tape& t, Var x, int seg);

// Mean binary cross-entropy of sigmoid(logits) against 0/1 labels, computed
// in the numerically stable softplus form. logits is B x 1.
Var bce_with_logits(Tape& t, Var logits, const std::vector<int>& labels);

}  // namespace dzlab::ag
