#include "modelgraph.hpp"

#include "fft.hpp"

namespace gs4 {

using ad::CNode;
using ad::Tape;

int ParamBinding::get(Tape& tape, const std::string& name) {
  auto it = node_of.find(name);
  if (it != node_of.end()) return it->second;
  const int idx = model->index_of(name);
  if (idx < 0) throw StateError("binding: missing parameter " + name);
  const Param& p = model->params[std::size_t(idx)];
  const int node = tape.leaf(p.value, !p.frozen);
  node_of.emplace(name, node);
  return node;
}

void ParamBinding::collect(const Tape& tape, std::vector<Mat>& grads,
                           double scale) const {
  for (const auto& [name, node] : node_of) {
    const Mat& g = tape.grad(node);
    if (g.size() == 0) continue;
    const int idx = model->index_of(name);
    Mat& acc = grads[std::size_t(idx)];
    if (acc.size() == 0)
      acc = Mat::Zero(model->params[std::size_t(idx)].value.rows(),
                      model->params[std::size_t(idx)].value.cols());
    acc += scale * g;
  }
}

namespace {

CNode ctranspose_conj(Tape& t, CNode a) {
  return {t.transpose(a.re), t.neg(t.transpose(a.im))};
}

// k[ch][i] = Re(C.row(ch) . Abar^i Bbar); reverse pass is plain BPTT over the
// state recurrence with complex gradients carried as real pairs.
int ssm_kernel_node(Tape& t, CNode abar, CNode bbar, CNode cmat, int len) {
  const CMat a = ad::cval(t, abar);
  const CMat b = ad::cval(t, bbar);
  const CMat c = ad::cval(t, cmat);  // Crows x N
  const Eigen::Index n = a.rows();
  const Eigen::Index rows = c.rows();

  auto traj = std::make_shared<CMat>(n, len);
  Mat k(rows, len);
  CVec x = b.col(0);
  for (int i = 0; i < len; i++) {
    if (i > 0) x = (a * x).eval();
    traj->col(i) = x;
    for (Eigen::Index ch = 0; ch < rows; ch++)
      k(ch, i) = (c.row(ch) * x).value().real();
  }

  const bool ng = t.needs_grad(abar.re) || t.needs_grad(bbar.re) ||
                  t.needs_grad(cmat.re);
  return t.custom(std::move(k), ng, [abar, bbar, cmat, traj, len](Tape& tt,
                                                                  int self) {
    const Mat& g = tt.grad(self);  // Crows x len
    const CMat a = ad::cval(tt, abar);
    const CMat c = ad::cval(tt, cmat);
    const Eigen::Index n = a.rows();
    const Eigen::Index rows = c.rows();
    const CMat ah = a.adjoint();

    CMat gc = CMat::Zero(rows, n);
    CMat ga = CMat::Zero(n, n);
    CVec adj = CVec::Zero(n);
    for (int i = len - 1; i >= 0; i--) {
      const CVec x = traj->col(i);
      for (Eigen::Index ch = 0; ch < rows; ch++) {
        adj += c.row(ch).conjugate().transpose() * g(ch, i);
        gc.row(ch) += x.conjugate().transpose() * g(ch, i);
      }
      if (i > 0) {
        ga += adj * traj->col(i - 1).adjoint();
        adj = (ah * adj).eval();
      }
    }
    // adj now carries the gradient w.r.t. x_0 = Bbar.
    tt.add_grad(abar.re, ga.real());
    tt.add_grad(abar.im, ga.imag());
    tt.add_grad(bbar.re, adj.real());
    tt.add_grad(bbar.im, adj.imag());
    tt.add_grad(cmat.re, gc.real());
    tt.add_grad(cmat.im, gc.imag());
  });
}

// Shared-kernel causal convolution: rows of u are grouped channel-major
// (row = ch * V + v); kernel row min(ch, Crows-1) convolves every node of
// channel ch.
int conv_batch_node(Tape& t, int u, int k, int v) {
  const Mat& uv = t.val(u);
  const Mat& kv = t.val(k);
  const int len = int(uv.cols());
  require(int(kv.cols()) == len, "conv_batch: kernel length mismatch");
  const int channels = int(uv.rows()) / v;
  require(channels * v == int(uv.rows()), "conv_batch: row layout mismatch");

  Mat y(uv.rows(), len);
  for (int ch = 0; ch < channels; ch++) {
    const int kr = std::min<int>(ch, int(kv.rows()) - 1);
    const Vec kern = kv.row(kr).transpose();
    for (int vi = 0; vi < v; vi++) {
      const int r = ch * v + vi;
      y.row(r) = fft::causal_conv(kern, uv.row(r).transpose()).transpose();
    }
  }
  const bool ng = t.needs_grad(u) || t.needs_grad(k);
  return t.custom(std::move(y), ng, [u, k, v](Tape& tt, int self) {
    const Mat& g = tt.grad(self);
    const Mat& uv = tt.val(u);
    const Mat& kv = tt.val(k);
    const int channels = int(uv.rows()) / v;
    Mat gu = Mat::Zero(uv.rows(), uv.cols());
    Mat gk = Mat::Zero(kv.rows(), kv.cols());
    for (int ch = 0; ch < channels; ch++) {
      const int kr = std::min<int>(ch, int(kv.rows()) - 1);
      const Vec kern = kv.row(kr).transpose();
      for (int vi = 0; vi < v; vi++) {
        const int r = ch * v + vi;
        const Vec gr = g.row(r).transpose();
        gu.row(r) = fft::causal_corr(kern, gr).transpose();
        gk.row(kr) +=
            fft::causal_corr(uv.row(r).transpose(), gr).transpose();
      }
    }
    tt.add_grad(u, gu);
    tt.add_grad(k, gk);
  });
}

// (C*V) x T  ->  (V*T) x C
int cv_to_vtc_node(Tape& t, int a, int v, int len, int c) {
  const Mat& av = t.val(a);
  Mat out(Eigen::Index(v) * len, c);
  for (int ch = 0; ch < c; ch++)
    for (int vi = 0; vi < v; vi++)
      out.col(ch).segment(vi * len, len) = av.row(ch * v + vi).transpose();
  return t.custom(std::move(out), t.needs_grad(a),
                  [a, v, len, c](Tape& tt, int self) {
                    const Mat& g = tt.grad(self);
                    Mat ga(Eigen::Index(c) * v, len);
                    for (int ch = 0; ch < c; ch++)
                      for (int vi = 0; vi < v; vi++)
                        ga.row(ch * v + vi) =
                            g.col(ch).segment(vi * len, len).transpose();
                    tt.add_grad(a, ga);
                  });
}

int vtc_to_cv_node(Tape& t, int a, int v, int len, int c) {
  const Mat& av = t.val(a);
  Mat out(Eigen::Index(c) * v, len);
  for (int ch = 0; ch < c; ch++)
    for (int vi = 0; vi < v; vi++)
      out.row(ch * v + vi) = av.col(ch).segment(vi * len, len).transpose();
  return t.custom(std::move(out), t.needs_grad(a),
                  [a, v, len, c](Tape& tt, int self) {
                    const Mat& g = tt.grad(self);
                    Mat ga(Eigen::Index(v) * len, c);
                    for (int ch = 0; ch < c; ch++)
                      for (int vi = 0; vi < v; vi++)
                        ga.col(ch).segment(vi * len, len) =
                            g.row(ch * v + vi).transpose();
                    tt.add_grad(a, ga);
                  });
}

// Input lift: row ch*V+v of the output is w_in[ch] * x.row(v).
int lift_node(Tape& t, const Mat& x, int w_in) {
  const int v = int(x.rows());
  const int len = int(x.cols());
  const int c = int(t.val(w_in).cols());
  Mat out(Eigen::Index(c) * v, len);
  for (int ch = 0; ch < c; ch++)
    for (int vi = 0; vi < v; vi++)
      out.row(ch * v + vi) = t.val(w_in)(0, ch) * x.row(vi);
  return t.custom(std::move(out), t.needs_grad(w_in),
                  [x, w_in, v, c](Tape& tt, int self) {
                    const Mat& g = tt.grad(self);
                    Mat gw = Mat::Zero(1, c);
                    for (int ch = 0; ch < c; ch++)
                      for (int vi = 0; vi < v; vi++)
                        gw(0, ch) +=
                            g.row(ch * v + vi).dot(x.row(vi));
                    tt.add_grad(w_in, gw);
                  });
}

// Row-wise simplex projection; Jacobian is centering restricted to the
// support set.
int sparsemax_rows_node(Tape& t, int z) {
  const Mat& zv = t.val(z);
  Mat out(zv.rows(), zv.cols());
  for (Eigen::Index i = 0; i < zv.rows(); i++)
    out.row(i) = sparsemax_row(zv.row(i).transpose()).transpose();
  auto support = std::make_shared<Mat>(
      (out.array() > 0.0).cast<double>().matrix());
  return t.custom(std::move(out), t.needs_grad(z),
                  [z, support](Tape& tt, int self) {
                    const Mat& g = tt.grad(self);
                    Mat gz = Mat::Zero(g.rows(), g.cols());
                    for (Eigen::Index i = 0; i < g.rows(); i++) {
                      const double cnt = support->row(i).sum();
                      if (cnt <= 0) continue;
                      const double mean =
                          support->row(i).dot(g.row(i)) / cnt;
                      gz.row(i) = support->row(i).array() *
                                  (g.row(i).array() - mean);
                    }
                    tt.add_grad(z, gz);
                  });
}

// Y block(v) = sum_u E(v,u) X block(u), blocks of `len` rows per node.
int node_mix_ad(Tape& t, int e, int x, int v, int len) {
  Mat y = node_mix(t.val(e), t.val(x), v, len);
  const bool ng = t.needs_grad(e) || t.needs_grad(x);
  return t.custom(std::move(y), ng, [e, x, v, len](Tape& tt, int self) {
    const Mat& g = tt.grad(self);
    const Mat& ev = tt.val(e);
    const Mat& xv = tt.val(x);
    tt.add_grad(x, node_mix(ev.transpose(), g, v, len));
    Mat ge = Mat::Zero(v, v);
    for (int vi = 0; vi < v; vi++)
      for (int u = 0; u < v; u++)
        ge(vi, u) = g.middleRows(vi * len, len)
                        .cwiseProduct(xv.middleRows(u * len, len))
                        .sum();
    tt.add_grad(e, ge);
  });
}

int time_pool_node(Tape& t, int a, int v, int len) {
  const Mat& av = t.val(a);
  const int c = int(av.cols());
  Mat out(v, c);
  for (int vi = 0; vi < v; vi++)
    out.row(vi) = av.middleRows(vi * len, len).colwise().mean();
  return t.custom(std::move(out), t.needs_grad(a),
                  [a, v, len](Tape& tt, int self) {
                    const Mat& g = tt.grad(self);
                    Mat ga(Eigen::Index(v) * len, g.cols());
                    for (int vi = 0; vi < v; vi++)
                      ga.middleRows(vi * len, len) =
                          (g.row(vi) / double(len)).replicate(len, 1);
                    tt.add_grad(a, ga);
                  });
}

// V x C -> 1 x (V*C), node-major.
int flatten_node(Tape& t, int a) {
  const Mat& av = t.val(a);
  Mat out(1, av.size());
  for (Eigen::Index i = 0; i < av.rows(); i++)
    for (Eigen::Index j = 0; j < av.cols(); j++)
      out(0, i * av.cols() + j) = av(i, j);
  return t.custom(std::move(out), t.needs_grad(a), [a](Tape& tt, int self) {
    const Mat& g = tt.grad(self);
    const Mat& av = tt.val(a);
    Mat ga(av.rows(), av.cols());
    for (Eigen::Index i = 0; i < av.rows(); i++)
      for (Eigen::Index j = 0; j < av.cols(); j++)
        ga(i, j) = g(0, i * av.cols() + j);
    tt.add_grad(a, ga);
  });
}

// Gather a flat (V*T) x 1 vector into a rows x cols matrix.
int gather_matrix_node(Tape& t, int a, std::vector<int> rows,
                       std::vector<int> cols, int len) {
  const Mat& av = t.val(a);
  Mat out(Eigen::Index(rows.size()), Eigen::Index(cols.size()));
  for (std::size_t i = 0; i < rows.size(); i++)
    for (std::size_t j = 0; j < cols.size(); j++)
      out(Eigen::Index(i), Eigen::Index(j)) = av(rows[i] * len + cols[j], 0);
  return t.custom(std::move(out), t.needs_grad(a),
                  [a, rows = std::move(rows), cols = std::move(cols),
                   len](Tape& tt, int self) {
                    const Mat& g = tt.grad(self);
                    Mat ga = Mat::Zero(tt.val(a).rows(), 1);
                    for (std::size_t i = 0; i < rows.size(); i++)
                      for (std::size_t j = 0; j < cols.size(); j++)
                        ga(rows[i] * len + cols[j], 0) +=
                            g(Eigen::Index(i), Eigen::Index(j));
                    tt.add_grad(a, ga);
                  });
}

int cross_entropy_node(Tape& t, int logits, int label) {
  const Mat& lv = t.val(logits);
  require(lv.rows() == 1 && lv.cols() == 2, "cross_entropy: expects 1x2");
  require(label == 0 || label == 1, "cross_entropy: label must be 0 or 1");
  const double m = lv.maxCoeff();
  const double lse =
      m + std::log(std::exp(lv(0, 0) - m) + std::exp(lv(0, 1) - m));
  Mat out(1, 1);
  out(0, 0) = lse - lv(0, label);
  return t.custom(std::move(out), t.needs_grad(logits),
                  [logits, label](Tape& tt, int self) {
                    const Mat& lv = tt.val(logits);
                    const double m = lv.maxCoeff();
                    const double e0 = std::exp(lv(0, 0) - m);
                    const double e1 = std::exp(lv(0, 1) - m);
                    Mat g(1, 2);
                    g(0, 0) = e0 / (e0 + e1);
                    g(0, 1) = e1 / (e0 + e1);
                    g(0, label) -= 1.0;
                    tt.add_grad(logits, tt.grad(self)(0, 0) * g);
                  });
}

CNode bind_cvec(Tape& t, ParamBinding& bind, int layer, const std::string& re,
                const std::string& im) {
  return {bind.get(t, layer_param(layer, re)),
          bind.get(t, layer_param(layer, im))};
}

// Differentiable Abar/Bbar/kernel for one layer.
int build_kernel(Tape& t, ParamBinding& bind, int layer, int len) {
  const int n = bind.model->cfg.state_dim;
  CNode lambda = bind_cvec(t, bind, layer, "lambda_re", "lambda_im");
  CNode p = bind_cvec(t, bind, layer, "p_re", "p_im");
  CNode q = bind_cvec(t, bind, layer, "q_re", "q_im");
  CNode b = bind_cvec(t, bind, layer, "b_re", "b_im");
  CNode cmat = bind_cvec(t, bind, layer, "c_re", "c_im");
  const int logdt = bind.get(t, layer_param(layer, "log_dt"));

  const int dt = t.exp_op(logdt);
  const int half_dt = t.scale(dt, 0.5);

  CNode a = csub(t, cdiag_embed(t, lambda),
                 cmatmul(t, p, ctranspose_conj(t, q)));
  CNode eye = {t.constant(Mat::Identity(n, n)), t.constant(Mat::Zero(n, n))};
  CNode half = ad::cscale_by(t, a, half_dt);
  CNode minv = ad::cinverse(t, csub(t, eye, half));
  CNode abar = cmatmul(t, minv, cadd(t, eye, half));
  CNode bbar = cmatmul(t, minv, ad::cscale_by(t, b, dt));
  return ssm_kernel_node(t, abar, bbar, cmat, len);
}

int build_adjacency(Tape& t, ParamBinding& bind) {
  const int emb = bind.get(t, "emb");
  const int sim = t.relu(t.matmul(emb, t.transpose(emb)));
  const int s = sparsemax_rows_node(t, sim);
  const int v = int(t.val(emb).rows());
  return t.add(s, t.constant(Mat::Identity(v, v)));
}

}  // namespace

ForwardNodes build_forward(Tape& tape, ParamBinding& bind, const Mat& x,
                           std::mt19937_64* dropout_rng) {
  const ModelConfig& cfg = bind.model->cfg;
  const int v = cfg.num_nodes;
  const int len = int(x.cols());
  const int c = cfg.channels;
  require(int(x.rows()) == v, "build_forward: node count mismatch");
  require(len >= 8, "build_forward: need at least 8 timepoints");
  require(x.allFinite(), "build_forward: non-finite input");

  const int w_in = bind.get(tape, "input_proj");
  int act = cv_to_vtc_node(tape, lift_node(tape, x, w_in), v, len, c);
  const int adj = build_adjacency(tape, bind);

  for (int l = 0; l < cfg.num_layers; l++) {
    const int kern = build_kernel(tape, bind, l, len);
    const int u_cv = vtc_to_cv_node(tape, act, v, len, c);
    const int conv = conv_batch_node(tape, u_cv, kern, v);
    const int hidden = cv_to_vtc_node(tape, tape.gelu(conv), v, len, c);

    int mixed = -1;
    int diff_in = hidden;
    for (int d = 0; d <= cfg.diffusion_steps; d++) {
      if (d > 0)
        diff_in = node_mix_ad(
            tape, adj, cfg.literal_no_power ? hidden : diff_in, v, len);
      const int term = tape.matmul(
          diff_in, bind.get(tape, layer_param(l, "w" + std::to_string(d))));
      mixed = (mixed < 0) ? term : tape.add(mixed, term);
    }
    mixed = tape.add_row_broadcast(mixed,
                                   bind.get(tape, layer_param(l, "bias")));

    if (dropout_rng != nullptr && cfg.dropout > 0.0) {
      std::bernoulli_distribution keep(1.0 - cfg.dropout);
      Mat mask(Eigen::Index(v) * len, c);
      const double inv = 1.0 / (1.0 - cfg.dropout);
      for (Eigen::Index i = 0; i < mask.rows(); i++)
        for (Eigen::Index j = 0; j < mask.cols(); j++)
          mask(i, j) = keep(*dropout_rng) ? inv : 0.0;
      mixed = tape.mul(mixed, tape.constant(std::move(mask)));
    }
    act = tape.add(act, mixed);
  }

  ForwardNodes out;
  out.features = act;
  out.seq_flat = tape.matmul(act, bind.get(tape, "output_proj"));
  out.v = v;
  out.t = len;
  out.c = c;
  return out;
}

void mask_rectangle(const Mat& mask, std::vector<int>& rows,
                    std::vector<int>& cols) {
  rows.clear();
  cols.clear();
  for (Eigen::Index i = 0; i < mask.rows(); i++)
    if (mask.row(i).sum() > 0) rows.push_back(int(i));
  require(!rows.empty(), "loss mask is empty");
  for (Eigen::Index j = 0; j < mask.cols(); j++)
    if (mask(rows.front(), j) > 0) cols.push_back(int(j));
  for (int r : rows)
    for (Eigen::Index j = 0; j < mask.cols(); j++) {
      const bool in_cols =
          std::find(cols.begin(), cols.end(), int(j)) != cols.end();
      require((mask(r, j) > 0) == in_cols,
              "loss mask is not a row-set x column-set rectangle");
    }
}

SeqLossNodes build_seq_loss_parts(Tape& tape, const ForwardNodes& fwd,
                                  const TaskInstance& inst,
                                  const LossConfig& cfg) {
  cfg.validate();
  std::vector<int> rows, cols;
  mask_rectangle(inst.loss_mask, rows, cols);
  const int vp = int(rows.size());
  const int tp = int(cols.size());
  require(tp >= 2, "build_seq_loss: need at least 2 masked timepoints");

  Mat target(vp, tp);
  for (int i = 0; i < vp; i++)
    for (int j = 0; j < tp; j++)
      target(i, j) = inst.target(rows[std::size_t(i)], cols[std::size_t(j)]);

  const int yhat = gather_matrix_node(tape, fwd.seq_flat, rows, cols, fwd.t);
  const int y = tape.constant(target);

  const int diff = tape.sub(y, yhat);
  const int mse = tape.scale(tape.sum_all(tape.square(diff)),
                             1.0 / (double(vp) * double(tp)));

  // Per-node Pearson over the masked window, eps inside both square roots.
  const int ones_row = tape.constant(Mat::Ones(1, tp));
  auto centered = [&](int m) {
    const int mean = tape.scale(tape.row_sum(m), 1.0 / double(tp));
    return tape.sub(m, tape.matmul(mean, ones_row));
  };
  const int yc = centered(y);
  const int hc = centered(yhat);
  const int cov = tape.row_sum(tape.mul(yc, hc));
  // max(s, eps) written as relu(s - eps) + eps so degenerate (constant) rows
  // keep a finite denominator while healthy rows are untouched.
  auto guarded = [&](int s) {
    return tape.add_const(tape.relu(tape.add_const(s, -cfg.pearson_eps)),
                          cfg.pearson_eps);
  };
  const int den_y = tape.sqrt_op(guarded(tape.row_sum(tape.square(yc))));
  const int den_h = tape.sqrt_op(guarded(tape.row_sum(tape.square(hc))));
  const int corr = tape.div(cov, tape.mul(den_y, den_h));
  const int pearson = tape.scale(tape.sum_all(corr), 1.0 / double(vp));

  SeqLossNodes out;
  out.mse = mse;
  out.pearson = pearson;
  out.loss = tape.sub(tape.scale(mse, cfg.lambda1),
                      tape.scale(pearson, cfg.lambda2));
  return out;
}

int build_seq_loss(Tape& tape, const ForwardNodes& fwd,
                   const TaskInstance& inst, const LossConfig& cfg) {
  return build_seq_loss_parts(tape, fwd, inst, cfg).loss;
}

int build_cls_loss(Tape& tape, ParamBinding& bind, const ForwardNodes& fwd,
                   int label) {
  const int pooled = time_pool_node(tape, fwd.features, fwd.v, fwd.t);
  const int flat = flatten_node(tape, pooled);
  const int logits = tape.add(tape.matmul(flat, bind.get(tape, "cls_w")),
                              bind.get(tape, "cls_b"));
  return cross_entropy_node(tape, logits, label);
}

double loss_mse_pearson(const Mat& y, const Mat& y_hat,
                        const LossConfig& cfg) {
  cfg.validate();
  require(y.rows() == y_hat.rows() && y.cols() == y_hat.cols(),
          "loss_mse_pearson: shape mismatch");
  require(y.cols() >= 2, "loss_mse_pearson: need at least 2 timepoints");
  const double vp = double(y.rows());
  const double tp = double(y.cols());
  const double mse = (y - y_hat).squaredNorm() / (vp * tp);
  double pearson = 0.0;
  for (Eigen::Index i = 0; i < y.rows(); i++) {
    Eigen::RowVectorXd yc = y.row(i).array() - y.row(i).mean();
    Eigen::RowVectorXd hc = y_hat.row(i).array() - y_hat.row(i).mean();
    const double num = yc.dot(hc);
    const double den = std::sqrt(std::max(yc.squaredNorm(), cfg.pearson_eps)) *
                       std::sqrt(std::max(hc.squaredNorm(), cfg.pearson_eps));
    pearson += num / den;
  }
  pearson /= vp;
  return cfg.lambda1 * mse - cfg.lambda2 * pearson;
}

double masked_mse(const Mat& target, const Mat& pred, const Mat& loss_mask) {
  require(target.rows() == pred.rows() && target.cols() == pred.cols() &&
              target.rows() == loss_mask.rows() &&
              target.cols() == loss_mask.cols(),
          "masked_mse: shape mismatch");
  const double denom = loss_mask.sum();
  require(denom > 0, "masked_mse: empty mask");
  return (target - pred).cwiseProduct(loss_mask).squaredNorm() / denom;
}

}  // namespace gs4
