#include "mrb/moe/losses.hpp"

#include <algorithm>
#include <cmath>

#include "mrb/error.hpp"

namespace mrb::moe {

namespace {

// Row-wise log-softmax; the row max enters as a constant (the result does not depend on it).
ad::Var log_softmax_rows(ad::Var x) {
  ad::Tape& tape = *x.tape();
  const ad::Tensor& v = x.value();
  const std::size_t cols = v.cols();
  ad::Tensor m(v.rows(), 1);
  for (std::size_t r = 0; r < v.rows(); ++r) {
    const auto row = v.row_span(r);
    m(r, 0) = *std::max_element(row.begin(), row.end());
  }
  const ad::Var shifted = ad::sub(x, tape.constant(std::move(m)));
  const ad::Var row_sum = ad::matmul(ad::exp(shifted), tape.constant(ad::Tensor(cols, 1, 1.0)));
  return ad::sub(shifted, ad::log(row_sum));
}

ad::Tensor soft_targets(const ad::Tensor& t, double tau_target) {
  ad::Tensor sim = ad::kernels::matmul_nt(t, t);
  if (tau_target == 0.0) {
    ad::Tensor eye(sim.rows(), sim.cols());
    for (std::size_t i = 0; i < sim.rows(); ++i) eye(i, i) = 1.0;
    return eye;
  }
  for (double& s : sim.data()) s /= tau_target;
  return ad::kernels::softmax_rows(sim);
}

// −mean_b Σ_j T_bj log softmax(logits)_bj
ad::Var cross_entropy(ad::Var logits, const ad::Tensor& targets) {
  ad::Tape& tape = *logits.tape();
  const ad::Var ce = ad::mul(tape.constant(targets), log_softmax_rows(logits));
  return ad::scale(ad::sum(ce), -1.0 / static_cast<double>(targets.rows()));
}

}  // namespace

ad::Var load_balance_loss(std::span<const ad::Var> probabilities) {
  if (probabilities.empty()) throw ShapeError("load_balance_loss: no levels");
  ad::Var total;
  for (const ad::Var& p : probabilities) {
    const double uniform = 1.0 / static_cast<double>(p.cols());
    const ad::Var d = ad::add_scalar(ad::mean_rows(p), -uniform);
    const ad::Var l = ad::sum(ad::mul(d, d));
    total = total.valid() ? ad::add(total, l) : l;
  }
  return total;
}

ad::Var contrastive_loss(ad::Var pred, ad::Var target, double tau, double tau_target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw ShapeError("contrastive_loss: " + pred.value().shape_string() + " vs " +
                     target.value().shape_string());
  }
  if (!(tau > 0.0)) throw ConfigError("contrastive_loss: tau must be positive");
  if (!(tau_target >= 0.0)) throw ConfigError("contrastive_loss: tau_target must be >= 0");
  const ad::Var pn = ad::l2_normalize_rows(pred);
  const ad::Var tn = ad::l2_normalize_rows(target);
  const ad::Tensor targets = soft_targets(tn.value(), tau_target);
  const ad::Var logits = ad::scale(ad::matmul(pn, ad::transpose(tn)), 1.0 / tau);

  ad::Tensor targets_t(targets.cols(), targets.rows());
  for (std::size_t r = 0; r < targets.rows(); ++r)
    for (std::size_t c = 0; c < targets.cols(); ++c) targets_t(c, r) = targets(r, c);
  const ad::Var forward = cross_entropy(logits, targets);
  const ad::Var backward = cross_entropy(ad::transpose(logits), targets_t);
  return ad::scale(ad::add(forward, backward), 0.5);
}

ad::Var mse_loss(ad::Var pred, ad::Var target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw ShapeError("mse_loss: " + pred.value().shape_string() + " vs " +
                     target.value().shape_string());
  }
  const ad::Var d = ad::sub(pred, target);
  return ad::mean(ad::mul(d, d));
}

Stage1Loss stage1_loss(ad::Var pred_img, ad::Var pred_text, ad::Var gt_img, ad::Var gt_text,
                       std::span<const ad::Var> probabilities, const Stage1Weights& w) {
  const ad::Var mse = ad::add(mse_loss(pred_img, gt_img), mse_loss(pred_text, gt_text));
  const ad::Var con = ad::add(contrastive_loss(pred_img, gt_img, w.tau, w.tau_target),
                              contrastive_loss(pred_text, gt_text, w.tau, w.tau_target));
  const ad::Var bal = load_balance_loss(probabilities);
  Stage1Loss out;
  out.total = ad::add(ad::add(ad::scale(mse, w.mse), ad::scale(con, w.contrastive)),
                      ad::scale(bal, w.balance));
  out.mse = mse.value().item();
  out.contrastive = con.value().item();
  out.balance = bal.value().item();
  return out;
}

std::pair<std::vector<double>, std::vector<double>> aggregate(const ExpertEmbeddingSet& set) {
  if (set.empty()) throw ShapeError("aggregate: no levels");
  const std::size_t d = set.front().at(0).img.size();
  std::vector<double> img(d, 0.0), text(d, 0.0);
  for (const auto& level : set) {
    if (level.empty()) throw ShapeError("aggregate: level without experts");
    std::vector<double> mi(d, 0.0), mt(d, 0.0);
    for (const auto& e : level) {
      if (e.img.size() != d || e.text.size() != d) throw ShapeError("aggregate: width mismatch");
      for (std::size_t k = 0; k < d; ++k) {
        mi[k] += e.img[k];
        mt[k] += e.text[k];
      }
    }
    for (std::size_t k = 0; k < d; ++k) {
      img[k] += mi[k] / static_cast<double>(level.size());
      text[k] += mt[k] / static_cast<double>(level.size());
    }
  }
  for (std::size_t k = 0; k < d; ++k) {
    img[k] /= static_cast<double>(set.size());
    text[k] /= static_cast<double>(set.size());
  }
  return {std::move(img), std::move(text)};
}

}  // namespace mrb::moe
