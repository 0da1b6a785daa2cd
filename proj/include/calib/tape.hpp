#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace calib {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

/// Reverse-mode autodiff tape over dense matrices.
///
/// Nodes are appended in topological order during the forward pass and
/// visited exactly once, in reverse, by backward(). Single-threaded per
/// tape; independent tapes may live on independent threads.
class Tape {
 public:
  /// Leaf with gradient tracking.
  Var leaf(const Mat& value);
  /// Node that participates in the forward pass but receives no gradient reads.
  Var constant(const Mat& value);

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  const Mat& grad(Var v) const { return nodes_[v.id].adjoint; }

  /// Seeds the scalar loss with 1 and accumulates adjoints for every node.
  /// Throws std::invalid_argument if the loss is not 1x1.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Internal: append a node computed from up to three inputs.
  Var emplace(Mat value, std::array<int, 3> args,
              std::function<void(Tape&, int)> pull);
  Mat& adjoint(int id) { return nodes_[id].adjoint; }
  const Mat& node_value(int id) const { return nodes_[id].value; }

 private:
  struct Node {
    Mat value;
    Mat adjoint;
    std::array<int, 3> args{-1, -1, -1};
    std::function<void(Tape&, int)> pull;  // empty for leaves/constants
  };
  std::vector<Node> nodes_;
};

// Elementwise arithmetic (shapes must match exactly).
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);

// Scalar arithmetic.
Var operator*(double s, Var a);
Var operator+(Var a, double s);
Var operator-(double s, Var a);

Var matmul(Var a, Var b);
Var transpose(Var a);

Var exp(Var a);
Var log(Var a);   // domain error on non-positive entries
Var sqrt(Var a);  // domain error on negative entries; d/dx at 0 defined as 0
Var abs(Var a);
Var relu(Var a);
Var sigmoid(Var a);

/// Row-wise log-softmax with max-subtraction stabilization.
Var log_softmax_rows(Var a);

Var sum(Var a);   // 1x1
Var mean(Var a);  // 1x1

/// Picks entries (row, col) into an n x 1 column; gradient scatters back.
Var gather(Var a, const std::vector<std::pair<int, int>>& idx);

/// Contiguous row block of a column vector.
Var slice_rows(Var a, int offset, int count);

/// Column-major reshape (element count preserved).
Var reshape(Var a, int rows, int cols);

/// a is n x d, row is 1 x d, broadcast-added to every row of a.
Var add_rowvec(Var a, Var row);

/// max(a, lo) elementwise; gradient passes only where a > lo.
Var clamp_min(Var a, double lo);

}  // namespace calib
