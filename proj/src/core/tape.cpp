#include "tape.hpp"

#include <cmath>
#include <memory>

namespace gs4::ad {

int Tape::push(Mat val, bool needs_grad, std::function<void(Tape&, int)> back) {
  Node n;
  n.val = std::move(val);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return int(nodes_.size()) - 1;
}

int Tape::leaf(Mat v, bool needs_grad) {
  return push(std::move(v), needs_grad, nullptr);
}

const Mat& Tape::grad(int id) const {
  const Node& n = nodes_[std::size_t(id)];
  static const Mat empty;
  return n.grad.size() == 0 ? empty : n.grad;
}

void Tape::add_grad(int id, const Mat& g) {
  Node& n = nodes_[std::size_t(id)];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
  n.grad += g;
}

int Tape::custom(Mat val, bool needs_grad,
                 std::function<void(Tape&, int)> back) {
  return push(std::move(val), needs_grad, std::move(back));
}

namespace {
bool any_grad(const Tape& t, std::initializer_list<int> ids) {
  for (int id : ids)
    if (t.needs_grad(id)) return true;
  return false;
}
}  // namespace

int Tape::add(int a, int b) {
  return custom(val(a) + val(b), any_grad(*this, {a, b}),
                [a, b](Tape& t, int self) {
                  t.add_grad(a, t.grad(self));
                  t.add_grad(b, t.grad(self));
                });
}

int Tape::sub(int a, int b) {
  return custom(val(a) - val(b), any_grad(*this, {a, b}),
                [a, b](Tape& t, int self) {
                  t.add_grad(a, t.grad(self));
                  t.add_grad(b, -t.grad(self));
                });
}

int Tape::mul(int a, int b) {
  return custom(val(a).cwiseProduct(val(b)), any_grad(*this, {a, b}),
                [a, b](Tape& t, int self) {
                  t.add_grad(a, t.grad(self).cwiseProduct(t.val(b)));
                  t.add_grad(b, t.grad(self).cwiseProduct(t.val(a)));
                });
}

int Tape::div(int a, int b) {
  return custom(
      val(a).cwiseQuotient(val(b)), any_grad(*this, {a, b}),
      [a, b](Tape& t, int self) {
        t.add_grad(a, t.grad(self).cwiseQuotient(t.val(b)));
        t.add_grad(b, (-t.grad(self).array() * t.val(a).array() /
                       t.val(b).array().square())
                          .matrix());
      });
}

int Tape::neg(int a) {
  return custom(-val(a), needs_grad(a), [a](Tape& t, int self) {
    t.add_grad(a, -t.grad(self));
  });
}

int Tape::scale(int a, double s) {
  return custom(s * val(a), needs_grad(a), [a, s](Tape& t, int self) {
    t.add_grad(a, s * t.grad(self));
  });
}

int Tape::add_const(int a, double s) {
  return custom(val(a).array() + s, needs_grad(a), [a](Tape& t, int self) {
    t.add_grad(a, t.grad(self));
  });
}

int Tape::exp_op(int a) {
  return custom(val(a).array().exp(), needs_grad(a), [a](Tape& t, int self) {
    t.add_grad(a, t.grad(self).cwiseProduct(t.val(self)));
  });
}

int Tape::sqrt_op(int a) {
  return custom(val(a).array().sqrt(), needs_grad(a), [a](Tape& t, int self) {
    t.add_grad(a, (t.grad(self).array() / (2.0 * t.val(self).array())).matrix());
  });
}

int Tape::square(int a) {
  return custom(val(a).array().square(), needs_grad(a), [a](Tape& t, int self) {
    t.add_grad(a, (2.0 * t.grad(self).array() * t.val(a).array()).matrix());
  });
}

int Tape::relu(int a) {
  return custom(val(a).cwiseMax(0.0), needs_grad(a), [a](Tape& t, int self) {
    t.add_grad(a, (t.grad(self).array() *
                   (t.val(a).array() > 0.0).cast<double>())
                      .matrix());
  });
}

namespace {
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }
inline double norm_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}
}  // namespace

int Tape::gelu(int a) {
  Mat out = val(a).unaryExpr([](double x) { return x * norm_cdf(x); });
  return custom(std::move(out), needs_grad(a), [a](Tape& t, int self) {
    Mat d = t.val(a).unaryExpr(
        [](double x) { return norm_cdf(x) + x * norm_pdf(x); });
    t.add_grad(a, t.grad(self).cwiseProduct(d));
  });
}

int Tape::matmul(int a, int b) {
  return custom(val(a) * val(b), any_grad(*this, {a, b}),
                [a, b](Tape& t, int self) {
                  t.add_grad(a, t.grad(self) * t.val(b).transpose());
                  t.add_grad(b, t.val(a).transpose() * t.grad(self));
                });
}

int Tape::transpose(int a) {
  return custom(val(a).transpose(), needs_grad(a), [a](Tape& t, int self) {
    t.add_grad(a, t.grad(self).transpose());
  });
}

int Tape::sum_all(int a) {
  Mat out(1, 1);
  out(0, 0) = val(a).sum();
  return custom(std::move(out), needs_grad(a), [a](Tape& t, int self) {
    t.add_grad(a, Mat::Constant(t.val(a).rows(), t.val(a).cols(),
                                t.grad(self)(0, 0)));
  });
}

int Tape::row_sum(int a) {
  return custom(val(a).rowwise().sum(), needs_grad(a), [a](Tape& t, int self) {
    t.add_grad(a, t.grad(self) * Eigen::RowVectorXd::Ones(t.val(a).cols()));
  });
}

int Tape::scale_by(int a, int scalar_node) {
  require(val(scalar_node).size() == 1, "scale_by: scalar node must be 1x1");
  return custom(val(scalar_node)(0, 0) * val(a),
                any_grad(*this, {a, scalar_node}),
                [a, scalar_node](Tape& t, int self) {
                  t.add_grad(a, t.val(scalar_node)(0, 0) * t.grad(self));
                  Mat gs(1, 1);
                  gs(0, 0) = t.grad(self).cwiseProduct(t.val(a)).sum();
                  t.add_grad(scalar_node, gs);
                });
}

int Tape::add_row_broadcast(int a, int row_node) {
  require(val(row_node).rows() == 1 && val(row_node).cols() == val(a).cols(),
          "add_row_broadcast: shape mismatch");
  Mat out = val(a).rowwise() + val(row_node).row(0);
  return custom(std::move(out), any_grad(*this, {a, row_node}),
                [a, row_node](Tape& t, int self) {
                  t.add_grad(a, t.grad(self));
                  t.add_grad(row_node, t.grad(self).colwise().sum());
                });
}

int Tape::select_rows(int a, std::vector<int> rows) {
  Mat out(Eigen::Index(rows.size()), val(a).cols());
  for (std::size_t i = 0; i < rows.size(); i++)
    out.row(Eigen::Index(i)) = val(a).row(rows[i]);
  return custom(std::move(out), needs_grad(a),
                [a, rows = std::move(rows)](Tape& t, int self) {
                  Mat g = Mat::Zero(t.val(a).rows(), t.val(a).cols());
                  for (std::size_t i = 0; i < rows.size(); i++)
                    g.row(rows[i]) += t.grad(self).row(Eigen::Index(i));
                  t.add_grad(a, g);
                });
}

int Tape::vconcat(int a, int b) {
  require(val(a).cols() == val(b).cols(), "vconcat: column mismatch");
  Mat out(val(a).rows() + val(b).rows(), val(a).cols());
  out.topRows(val(a).rows()) = val(a);
  out.bottomRows(val(b).rows()) = val(b);
  return custom(std::move(out), any_grad(*this, {a, b}),
                [a, b](Tape& t, int self) {
                  const Eigen::Index ra = t.val(a).rows();
                  t.add_grad(a, t.grad(self).topRows(ra));
                  t.add_grad(b, t.grad(self).bottomRows(t.val(b).rows()));
                });
}

int Tape::diag_embed(int a) {
  require(val(a).cols() == 1, "diag_embed: expects a column vector");
  const Eigen::Index n = val(a).rows();
  Mat out = Mat::Zero(n, n);
  out.diagonal() = val(a).col(0);
  return custom(std::move(out), needs_grad(a), [a](Tape& t, int self) {
    t.add_grad(a, t.grad(self).diagonal());
  });
}

void Tape::backward(int loss_id) {
  require(val(loss_id).size() == 1, "backward: loss must be scalar");
  Node& loss = nodes_[std::size_t(loss_id)];
  require(loss.needs_grad, "backward: loss does not depend on any parameter");
  if (loss.grad.size() == 0) loss.grad = Mat::Zero(1, 1);
  loss.grad(0, 0) += 1.0;
  for (int id = loss_id; id >= 0; id--) {
    Node& n = nodes_[std::size_t(id)];
    if (n.grad.size() != 0 && n.back) n.back(*this, id);
  }
}

CNode cleaf(Tape& t, const CMat& v, bool needs_grad) {
  return {t.leaf(v.real(), needs_grad), t.leaf(v.imag(), needs_grad)};
}

CMat cval(const Tape& t, CNode a) {
  return t.val(a.re).cast<cd>() + cd(0, 1) * t.val(a.im).cast<cd>();
}

CNode cadd(Tape& t, CNode a, CNode b) {
  return {t.add(a.re, b.re), t.add(a.im, b.im)};
}

CNode csub(Tape& t, CNode a, CNode b) {
  return {t.sub(a.re, b.re), t.sub(a.im, b.im)};
}

CNode cmul(Tape& t, CNode a, CNode b) {
  return {t.sub(t.mul(a.re, b.re), t.mul(a.im, b.im)),
          t.add(t.mul(a.re, b.im), t.mul(a.im, b.re))};
}

CNode cmatmul(Tape& t, CNode a, CNode b) {
  return {t.sub(t.matmul(a.re, b.re), t.matmul(a.im, b.im)),
          t.add(t.matmul(a.re, b.im), t.matmul(a.im, b.re))};
}

CNode cconj(Tape& t, CNode a) { return {a.re, t.neg(a.im)}; }

CNode cscale(Tape& t, CNode a, double s) {
  return {t.scale(a.re, s), t.scale(a.im, s)};
}

CNode cscale_by(Tape& t, CNode a, int scalar_node) {
  return {t.scale_by(a.re, scalar_node), t.scale_by(a.im, scalar_node)};
}

CNode cdiag_embed(Tape& t, CNode a) {
  return {t.diag_embed(a.re), t.diag_embed(a.im)};
}

CNode cinverse(Tape& t, CNode a) {
  CMat x = cval(t, a).inverse();
  auto shared = std::make_shared<CMat>(std::move(x));
  const bool ng = t.needs_grad(a.re) || t.needs_grad(a.im);
  auto to_c = [](const Mat& m) -> CMat { return m.cast<cd>(); };
  int re = t.custom(shared->real(), ng, [a, shared, to_c](Tape& tt, int self) {
    CMat ga = -shared->adjoint() * to_c(tt.grad(self)) * shared->adjoint();
    tt.add_grad(a.re, ga.real());
    tt.add_grad(a.im, ga.imag());
  });
  int im = t.custom(shared->imag(), ng, [a, shared, to_c](Tape& tt, int self) {
    CMat g = cd(0, 1) * to_c(tt.grad(self));
    CMat ga = -shared->adjoint() * g * shared->adjoint();
    tt.add_grad(a.re, ga.real());
    tt.add_grad(a.im, ga.imag());
  });
  return {re, im};
}

}  // namespace gs4::ad
