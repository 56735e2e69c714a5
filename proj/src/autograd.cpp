#include "dzlab/autograd.hpp"

#include <cmath>
#include <string>

#include "dzlab/errors.hpp"

namespace dzlab::ag {

Var Tape::push(Mat value, bool requires_grad, std::function<void(Tape&, int)> backward) {
  nodes_.push_back({std::move(value), Mat(), requires_grad, std::move(backward)});
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Mat value) { return push(std::move(value), false, nullptr); }

Var Tape::leaf(Mat value) { return push(std::move(value), true, nullptr); }

Mat& Tape::grad_ref(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var target) {
  if (value(target).size() != 1) throw ShapeError("backward target must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad_ref(target)(0, 0) = 1.0;
  for (int i = target.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.backward && n.requires_grad && n.grad.size() != 0) n.backward(*this, i);
  }
}

namespace {

bool any_grad(const Tape& t, std::initializer_list<Var> vs) {
  for (Var v : vs) {
    if (t.requires_grad(v)) return true;
  }
  return false;
}

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  if (t.value(a).cols() != t.value(b).rows()) throw ShapeError("matmul: inner dimension mismatch");
  Mat out = t.value(a) * t.value(b);
  return t.push(std::move(out), any_grad(t, {a, b}), [a, b](Tape& tp, int self) {
    const Mat& g = tp.grad({self});
    if (tp.requires_grad(a)) tp.grad_ref(a).noalias() += g * tp.value(b).transpose();
    if (tp.requires_grad(b)) tp.grad_ref(b).noalias() += tp.value(a).transpose() * g;
  });
}

Var add(Tape& t, Var a, Var b) {
  check_same_shape(t.value(a), t.value(b), "add");
  Mat out = t.value(a) + t.value(b);
  return t.push(std::move(out), any_grad(t, {a, b}), [a, b](Tape& tp, int self) {
    const Mat& g = tp.grad({self});
    if (tp.requires_grad(a)) tp.grad_ref(a) += g;
    if (tp.requires_grad(b)) tp.grad_ref(b) += g;
  });
}

Var add_row(Tape& t, Var x, Var row) {
  const Mat& r = t.value(row);
  if (r.rows() != 1 || r.cols() != t.value(x).cols()) throw ShapeError("add_row: bad row shape");
  Mat out = t.value(x).rowwise() + r.row(0);
  return t.push(std::move(out), any_grad(t, {x, row}), [x, row](Tape& tp, int self) {
    const Mat& g = tp.grad({self});
    if (tp.requires_grad(x)) tp.grad_ref(x) += g;
    if (tp.requires_grad(row)) tp.grad_ref(row) += g.colwise().sum();
  });
}

Var mul(Tape& t, Var a, Var b) {
  check_same_shape(t.value(a), t.value(b), "mul");
  Mat out = t.value(a).cwiseProduct(t.value(b));
  return t.push(std::move(out), any_grad(t, {a, b}), [a, b](Tape& tp, int self) {
    const Mat& g = tp.grad({self});
    if (tp.requires_grad(a)) tp.grad_ref(a) += g.cwiseProduct(tp.value(b));
    if (tp.requires_grad(b)) tp.grad_ref(b) += g.cwiseProduct(tp.value(a));
  });
}

Var relu(Tape& t, Var x) {
  Mat out = t.value(x).cwiseMax(0.0);
  return t.push(std::move(out), t.requires_grad(x), [x](Tape& tp, int self) {
    const Mat& g = tp.grad({self});
    tp.grad_ref(x) += (tp.value(x).array() > 0.0).select(g, 0.0);
  });
}

Var layer_norm(Tape& t, Var x, Var gain, Var shift, double eps) {
  const Mat& in = t.value(x);
  const Eigen::Index m = in.cols();
  if (t.value(gain).cols() != m || t.value(shift).cols() != m) {
    throw ShapeError("layer_norm: parameter width mismatch");
  }
  Mat xhat(in.rows(), m);
  Eigen::VectorXd inv_sd(in.rows());
  for (Eigen::Index i = 0; i < in.rows(); ++i) {
    const double mu = in.row(i).mean();
    const double var = (in.row(i).array() - mu).square().mean();
    inv_sd(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (in.row(i).array() - mu) * inv_sd(i);
  }
  Mat out = (xhat.array().rowwise() * t.value(gain).row(0).array()).matrix();
  out.rowwise() += t.value(shift).row(0);
  return t.push(std::move(out), any_grad(t, {x, gain, shift}),
                [x, gain, shift, xhat = std::move(xhat), inv_sd = std::move(inv_sd)](Tape& tp, int self) {
                  const Mat& g = tp.grad({self});
                  if (tp.requires_grad(gain)) {
                    tp.grad_ref(gain) += g.cwiseProduct(xhat).colwise().sum();
                  }
                  if (tp.requires_grad(shift)) tp.grad_ref(shift) += g.colwise().sum();
                  if (tp.requires_grad(x)) {
                    const Mat gx = (g.array().rowwise() * tp.value(gain).row(0).array()).matrix();
                    Mat& dx = tp.grad_ref(x);
                    const double inv_m = 1.0 / static_cast<double>(gx.cols());
                    for (Eigen::Index i = 0; i < gx.rows(); ++i) {
                      const double mean_g = gx.row(i).sum() * inv_m;
                      const double mean_gx = gx.row(i).dot(xhat.row(i)) * inv_m;
                      dx.row(i).array() += inv_sd(i) * (gx.row(i).array() - mean_g -
                                                        xhat.row(i).array() * mean_gx);
                    }
                  }
                });
}

Var attention(Tape& t, Var q, Var k, Var v, int heads, int seg, int layer,
              std::vector<Mat>* weights) {
  const Mat& Q = t.value(q);
  const Mat& K = t.value(k);
  const Mat& V = t.value(v);
  check_same_shape(Q, K, "attention");
  check_same_shape(Q, V, "attention");
  const Eigen::Index d = Q.cols();
  if (heads <= 0 || d % heads != 0) throw ShapeError("attention: width not divisible by heads");
  if (seg <= 0 || Q.rows() % seg != 0) throw ShapeError("attention: rows not divisible by segment");
  const Eigen::Index dh = d / heads;
  const Eigen::Index batch = Q.rows() / seg;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Mat> probs;
  probs.reserve(static_cast<std::size_t>(batch * heads));
  Mat out(Q.rows(), d);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const auto qb = Q.block(b * seg, h * dh, seg, dh);
      const auto kb = K.block(b * seg, h * dh, seg, dh);
      const auto vb = V.block(b * seg, h * dh, seg, dh);
      Mat s = (qb * kb.transpose()) * scale;
      if (!s.allFinite()) {
        throw NumericError("attention scores not finite in layer " + std::to_string(layer), layer);
      }
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
      }
      out.block(b * seg, h * dh, seg, dh).noalias() = s * vb;
      probs.push_back(std::move(s));
    }
  }
  if (weights) weights->insert(weights->end(), probs.begin(), probs.end());

  return t.push(std::move(out), any_grad(t, {q, k, v}),
                [q, k, v, heads, seg, dh, batch, scale, probs = std::move(probs)](Tape& tp, int self) {
                  const Mat& g = tp.grad({self});
                  const Mat& Qv = tp.value(q);
                  const Mat& Kv = tp.value(k);
                  const Mat& Vv = tp.value(v);
                  const bool gq = tp.requires_grad(q), gk = tp.requires_grad(k),
                             gv = tp.requires_grad(v);
                  for (Eigen::Index b = 0; b < batch; ++b) {
                    for (int h = 0; h < heads; ++h) {
                      const Mat& P = probs[static_cast<std::size_t>(b * heads + h)];
                      const auto go = g.block(b * seg, h * dh, seg, dh);
                      if (gv) {
                        tp.grad_ref(v).block(b * seg, h * dh, seg, dh).noalias() +=
                            P.transpose() * go;
                      }
                      if (!gq && !gk) continue;
                      const Mat dP = go * Vv.block(b * seg, h * dh, seg, dh).transpose();
                      const Eigen::VectorXd rowdot = (dP.cwiseProduct(P)).rowwise().sum();
                      const Mat dS = (P.array() * (dP.colwise() - rowdot).array()).matrix() * scale;
                      if (gq) {
                        tp.grad_ref(q).block(b * seg, h * dh, seg, dh).noalias() +=
                            dS * Kv.block(b * seg, h * dh, seg, dh);
                      }
                      if (gk) {
                        tp.grad_ref(k).block(b * seg, h * dh, seg, dh).noalias() +=
                            dS.transpose() * Qv.block(b * seg, h * dh, seg, dh);
                      }
                    }
                  }
                });
}

Var mean_pool(Tape& t, Var x, int seg) {
  const Mat& in = t.value(x);
  if (seg <= 0 || in.rows() % seg != 0) throw ShapeError("mean_pool: rows not divisible by segment");
  const Eigen::Index batch = in.rows() / seg;
  Mat out(batch, in.cols());
  for (Eigen::Index b = 0; b < batch; ++b) {
    out.row(b) = in.middleRows(b * seg, seg).colwise().mean();
  }
  return t.push(std::move(out), t.requires_grad(x), [x, seg, batch](Tape& tp, int self) {
    const Mat& g = tp.grad({self});
    Mat& dx = tp.grad_ref(x);
    const double inv = 1.0 / static_cast<double>(seg);
    for (Eigen::Index b = 0; b < batch; ++b) {
      dx.middleRows(b * seg, seg).rowwise() += g.row(b) * inv;
    }
  });
}

Var repeat_rows(Tape& t, Var x, int seg) {
  const Mat& in = t.value(x);
  if (seg <= 0) throw ShapeError("repeat_rows: segment must be positive");
  Mat out(in.rows() * seg, in.cols());
  for (Eigen::Index b = 0; b < in.rows(); ++b) {
    out.middleRows(b * seg, seg).rowwise() = in.row(b);
  }
  return t.push(std::move(out), t.requires_grad(x), [x, seg](Tape& tp, int self) {
    const Mat& g = tp.grad({self});
    Mat& dx = tp.grad_ref(x);
    for (Eigen::Index b = 0; b < dx.rows(); ++b) {
      dx.row(b) += g.middleRows(b * seg, seg).colwise().sum();
    }
  });
}

Var bce_with_logits(Tape& t, Var logits, const std::vector<int>& labels) {
  const Mat& z = t.value(logits);
  if (z.cols() != 1 || static_cast<std::size_t>(z.rows()) != labels.size()) {
    throw ShapeError("bce_with_logits: logits must be B x 1 matching labels");
  }
  const auto n = static_cast<double>(labels.size());
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double zi = z(i, 0);
    // softplus(z) - y z
    const double softplus = zi > 0.0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi));
    total += softplus - static_cast<double>(labels[i]) * zi;
  }
  Mat out(1, 1);
  out(0, 0) = total / n;
  return t.push(std::move(out), t.requires_grad(logits), [logits, labels, n](Tape& tp, int self) {
    const double g = tp.grad({self})(0, 0);
    const Mat& zv = tp.value(logits);
    Mat& dz = tp.grad_ref(logits);
    for (Eigen::Index i = 0; i < zv.rows(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-zv(i, 0)));
      dz(i, 0) += g * (p - static_cast<double>(labels[i])) / n;
    }
  });
}

}  // namespace dzlab::ag
