#include "calib/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace calib {

namespace {

std::string shape_str(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const char* op, const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a) + " vs " + shape_str(b));
  }
}

}  // namespace

Var Tape::leaf(const Mat& value) {
  return emplace(value, {-1, -1, -1}, nullptr);
}

Var Tape::constant(const Mat& value) {
  return emplace(value, {-1, -1, -1}, nullptr);
}

Var Tape::emplace(Mat value, std::array<int, 3> args,
                  std::function<void(Tape&, int)> pull) {
  Node n;
  n.value = std::move(value);
  n.adjoint = Mat::Zero(n.value.rows(), n.value.cols());
  n.args = args;
  n.pull = std::move(pull);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var loss) {
  const Mat& lv = nodes_[loss.id].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(lv));
  }
  for (auto& n : nodes_) n.adjoint.setZero();
  nodes_[loss.id].adjoint(0, 0) = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    if (nodes_[i].pull) nodes_[i].pull(*this, i);
  }
}

namespace {

// Builds a binary elementwise node.
template <typename Fwd, typename Pull>
Var binary_node(const char* name, Var a, Var b, Fwd fwd, Pull pull) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  require_same_shape(name, av, bv);
  return t.emplace(fwd(av, bv), {a.id, b.id, -1},
                   [pull, ai = a.id, bi = b.id](Tape& tp, int self) {
                     pull(tp, self, ai, bi);
                   });
}

}  // namespace

Var operator+(Var a, Var b) {
  return binary_node(
      "add", a, b, [](const Mat& x, const Mat& y) { return Mat(x + y); },
      [](Tape& t, int self, int ai, int bi) {
        t.adjoint(ai) += t.adjoint(self);
        t.adjoint(bi) += t.adjoint(self);
      });
}

Var operator-(Var a, Var b) {
  return binary_node(
      "sub", a, b, [](const Mat& x, const Mat& y) { return Mat(x - y); },
      [](Tape& t, int self, int ai, int bi) {
        t.adjoint(ai) += t.adjoint(self);
        t.adjoint(bi) -= t.adjoint(self);
      });
}

Var operator*(Var a, Var b) {
  return binary_node(
      "mul", a, b,
      [](const Mat& x, const Mat& y) { return Mat(x.cwiseProduct(y)); },
      [](Tape& t, int self, int ai, int bi) {
        t.adjoint(ai) += t.adjoint(self).cwiseProduct(t.node_value(bi));
        t.adjoint(bi) += t.adjoint(self).cwiseProduct(t.node_value(ai));
      });
}

Var operator/(Var a, Var b) {
  return binary_node(
      "div", a, b,
      [](const Mat& x, const Mat& y) { return Mat(x.cwiseQuotient(y)); },
      [](Tape& t, int self, int ai, int bi) {
        const Mat& bv = t.node_value(bi);
        t.adjoint(ai) += t.adjoint(self).cwiseQuotient(bv);
        t.adjoint(bi) -= t.adjoint(self)
                             .cwiseProduct(t.node_value(self))
                             .cwiseQuotient(bv);
      });
}

Var operator-(Var a) { return -1.0 * a; }

Var operator*(double s, Var a) {
  Tape& t = *a.tape;
  return t.emplace(Mat(s * t.value(a)), {a.id, -1, -1},
                   [s, ai = a.id](Tape& tp, int self) {
                     tp.adjoint(ai) += s * tp.adjoint(self);
                   });
}

Var operator+(Var a, double s) {
  Tape& t = *a.tape;
  return t.emplace(Mat(t.value(a).array() + s), {a.id, -1, -1},
                   [ai = a.id](Tape& tp, int self) {
                     tp.adjoint(ai) += tp.adjoint(self);
                   });
}

Var operator-(double s, Var a) {
  Tape& t = *a.tape;
  return t.emplace(Mat(s - t.value(a).array()), {a.id, -1, -1},
                   [ai = a.id](Tape& tp, int self) {
                     tp.adjoint(ai) -= tp.adjoint(self);
                   });
}

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  if (av.cols() != bv.rows()) {
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(av) +
                                " vs " + shape_str(bv));
  }
  return t.emplace(Mat(av * bv), {a.id, b.id, -1},
                   [ai = a.id, bi = b.id](Tape& tp, int self) {
                     const Mat& g = tp.adjoint(self);
                     tp.adjoint(ai) += g * tp.node_value(bi).transpose();
                     tp.adjoint(bi) += tp.node_value(ai).transpose() * g;
                   });
}

Var transpose(Var a) {
  Tape& t = *a.tape;
  return t.emplace(Mat(t.value(a).transpose()), {a.id, -1, -1},
                   [ai = a.id](Tape& tp, int self) {
                     tp.adjoint(ai) += tp.adjoint(self).transpose();
                   });
}

namespace {

template <typename Fwd, typename Pull>
Var unary_node(Var a, Fwd fwd, Pull pull) {
  Tape& t = *a.tape;
  return t.emplace(fwd(t.value(a)), {a.id, -1, -1},
                   [pull, ai = a.id](Tape& tp, int self) {
                     pull(tp, self, ai);
                   });
}

}  // namespace

Var exp(Var a) {
  return unary_node(
      a, [](const Mat& x) { return Mat(x.array().exp()); },
      [](Tape& t, int self, int ai) {
        t.adjoint(ai) += t.adjoint(self).cwiseProduct(t.node_value(self));
      });
}

Var log(Var a) {
  if ((a.tape->value(a).array() <= 0.0).any()) {
    throw std::domain_error("log: non-positive input");
  }
  return unary_node(
      a, [](const Mat& x) { return Mat(x.array().log()); },
      [](Tape& t, int self, int ai) {
        t.adjoint(ai) += t.adjoint(self).cwiseQuotient(t.node_value(ai));
      });
}

Var sqrt(Var a) {
  if ((a.tape->value(a).array() < 0.0).any()) {
    throw std::domain_error("sqrt: negative input");
  }
  return unary_node(
      a, [](const Mat& x) { return Mat(x.array().sqrt()); },
      [](Tape& t, int self, int ai) {
        const Mat& y = t.node_value(self);
        Mat g = t.adjoint(self);
        for (Eigen::Index j = 0; j < y.size(); ++j) {
          g(j) = y(j) > 0.0 ? g(j) / (2.0 * y(j)) : 0.0;
        }
        t.adjoint(ai) += g;
      });
}

Var abs(Var a) {
  return unary_node(
      a, [](const Mat& x) { return Mat(x.array().abs()); },
      [](Tape& t, int self, int ai) {
        t.adjoint(ai) += t.adjoint(self).cwiseProduct(
            Mat(t.node_value(ai).array().sign()));
      });
}

Var relu(Var a) {
  return unary_node(
      a, [](const Mat& x) { return Mat(x.cwiseMax(0.0)); },
      [](Tape& t, int self, int ai) {
        t.adjoint(ai) += t.adjoint(self).cwiseProduct(
            Mat((t.node_value(ai).array() > 0.0).cast<double>()));
      });
}

Var sigmoid(Var a) {
  return unary_node(
      a,
      [](const Mat& x) {
        return Mat(1.0 / (1.0 + (-x.array()).exp()));
      },
      [](Tape& t, int self, int ai) {
        const Mat& y = t.node_value(self);
        t.adjoint(ai) += t.adjoint(self).cwiseProduct(
            Mat(y.array() * (1.0 - y.array())));
      });
}

Var log_softmax_rows(Var a) {
  return unary_node(
      a,
      [](const Mat& x) {
        Mat out(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
          double mx = x.row(i).maxCoeff();
          double lse = 0.0;
          for (Eigen::Index j = 0; j < x.cols(); ++j) {
            lse += std::exp(x(i, j) - mx);
          }
          lse = mx + std::log(lse);
          out.row(i) = x.row(i).array() - lse;
        }
        return out;
      },
      [](Tape& t, int self, int ai) {
        const Mat& y = t.node_value(self);  // log-probabilities
        const Mat& g = t.adjoint(self);
        Mat da(y.rows(), y.cols());
        for (Eigen::Index i = 0; i < y.rows(); ++i) {
          double gsum = g.row(i).sum();
          da.row(i) = g.row(i).array() - y.row(i).array().exp() * gsum;
        }
        t.adjoint(ai) += da;
      });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  Mat s(1, 1);
  s(0, 0) = t.value(a).sum();
  return t.emplace(std::move(s), {a.id, -1, -1},
                   [ai = a.id](Tape& tp, int self) {
                     tp.adjoint(ai).array() += tp.adjoint(self)(0, 0);
                   });
}

Var mean(Var a) {
  double n = static_cast<double>(a.tape->value(a).size());
  return (1.0 / n) * sum(a);
}

Var gather(Var a, const std::vector<std::pair<int, int>>& idx) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  Mat out(static_cast<Eigen::Index>(idx.size()), 1);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i].first < 0 || idx[i].first >= av.rows() || idx[i].second < 0 ||
        idx[i].second >= av.cols()) {
      throw std::invalid_argument("gather: index out of range");
    }
    out(static_cast<Eigen::Index>(i), 0) = av(idx[i].first, idx[i].second);
  }
  return t.emplace(std::move(out), {a.id, -1, -1},
                   [idx, ai = a.id](Tape& tp, int self) {
                     const Mat& g = tp.adjoint(self);
                     Mat& da = tp.adjoint(ai);
                     for (std::size_t i = 0; i < idx.size(); ++i) {
                       da(idx[i].first, idx[i].second) +=
                           g(static_cast<Eigen::Index>(i), 0);
                     }
                   });
}

Var slice_rows(Var a, int offset, int count) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  if (av.cols() != 1 || offset < 0 || offset + count > av.rows()) {
    throw std::invalid_argument("slice_rows: bad range on " + shape_str(av));
  }
  return t.emplace(Mat(av.middleRows(offset, count)), {a.id, -1, -1},
                   [offset, count, ai = a.id](Tape& tp, int self) {
                     tp.adjoint(ai).middleRows(offset, count) +=
                         tp.adjoint(self);
                   });
}

Var reshape(Var a, int rows, int cols) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  if (av.size() != static_cast<Eigen::Index>(rows) * cols) {
    throw std::invalid_argument("reshape: element count mismatch on " +
                                shape_str(av));
  }
  Mat out = Eigen::Map<const Mat>(av.data(), rows, cols);
  return t.emplace(std::move(out), {a.id, -1, -1},
                   [ai = a.id](Tape& tp, int self) {
                     const Mat& g = tp.adjoint(self);
                     Mat& da = tp.adjoint(ai);
                     da += Eigen::Map<const Mat>(g.data(), da.rows(),
                                                 da.cols());
                   });
}

Var add_rowvec(Var a, Var row) {
  Tape& t = *a.tape;
  const Mat& av = t.value(a);
  const Mat& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw std::invalid_argument("add_rowvec: shape mismatch " + shape_str(av) +
                                " vs " + shape_str(rv));
  }
  return t.emplace(Mat(av.rowwise() + rv.row(0)), {a.id, row.id, -1},
                   [ai = a.id, ri = row.id](Tape& tp, int self) {
                     const Mat& g = tp.adjoint(self);
                     tp.adjoint(ai) += g;
                     tp.adjoint(ri).row(0) += g.colwise().sum();
                   });
}

Var clamp_min(Var a, double lo) {
  Tape& t = *a.tape;
  return t.emplace(Mat(t.value(a).cwiseMax(lo)), {a.id, -1, -1},
                   [lo, ai = a.id](Tape& tp, int self) {
                     tp.adjoint(ai) += tp.adjoint(self).cwiseProduct(
                         Mat((tp.node_value(ai).array() > lo).cast<double>()));
                   });
}

}  // namespace calib
