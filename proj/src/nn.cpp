#include "atr/nn.hpp"

#include <algorithm>
#include <cmath>

namespace atr::nn {

// ---------------------------------------------------------------------------
// ParamLayout
// ---------------------------------------------------------------------------

int ParamLayout::add(const std::string& name, int rows, int cols) {
  if (index_.count(name)) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  if (rows <= 0 || cols <= 0) {
    throw std::invalid_argument("parameter dims must be positive: " + name);
  }
  const int offset = total_;
  index_[name] = static_cast<int>(slices_.size());
  slices_.push_back({name, offset, rows, cols});
  total_ += rows * cols;
  return offset;
}

const ParamSlice& ParamLayout::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UnknownParam("unknown parameter: " + name);
  return slices_[it->second];
}

// ---------------------------------------------------------------------------
// MLP helpers
// ---------------------------------------------------------------------------

ParamLayout mlp_layout(const MlpSpec& spec, const std::string& prefix) {
  ParamLayout l;
  for (int k = 0; k < spec.n_layers(); ++k) {
    const std::string base = prefix + "l" + std::to_string(k);
    l.add(base + ".W", spec.widths[k + 1], spec.widths[k]);
    l.add(base + ".b", spec.widths[k + 1], 1);
  }
  return l;
}

void init_params(ParamVector& p, Rng& rng) {
  for (const ParamSlice& s : p.layout.slices()) {
    auto block = p.mat(s.name);
    if (s.cols == 1) {
      block.setZero();  // biases
    } else {
      const double limit = std::sqrt(6.0 / (s.rows + s.cols));
      for (int c = 0; c < s.cols; ++c) {
        for (int r = 0; r < s.rows; ++r) {
          block(r, c) = rng.uniform(-limit, limit);
        }
      }
    }
  }
}

Mat mlp_forward(const ParamVector& p, const MlpSpec& spec, const Mat& x,
                const std::string& prefix) {
  Mat h = x;
  for (int k = 0; k < spec.n_layers(); ++k) {
    const std::string base = prefix + "l" + std::to_string(k);
    h = (p.mat(base + ".W") * h).colwise() +
        Eigen::VectorXd(p.mat(base + ".b").col(0));
    if (k + 1 < spec.n_layers()) h = h.cwiseMax(0.0);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

void Tape::check_finite(const Mat& m, const std::string& op) const {
  if (!m.allFinite()) {
    throw NonFiniteValue("non-finite values produced by op `" + op + "`");
  }
}

Tape::Id Tape::push(std::string op, Mat value,
                    std::function<void(Tape&, const Node&)> backward) {
  check_finite(value, op);
  nodes_.push_back({std::move(op), std::move(value), Mat(), std::move(backward)});
  return static_cast<Id>(nodes_.size() - 1);
}

Eigen::Map<Mat> Tape::grad_slice(const std::string& name) {
  const ParamSlice& s = params_.layout.at(name);
  return {param_grad_.data() + s.offset, s.rows, s.cols};
}

Tape::Id Tape::input(Mat v) {
  return push("input", std::move(v), nullptr);
}

Tape::Id Tape::dense(const std::string& layer, Id x) {
  const Mat& xv = nodes_[x].value;
  auto W = params_.mat(layer + ".W");
  auto b = params_.mat(layer + ".b");
  if (W.cols() != xv.rows()) {
    throw std::invalid_argument("dense " + layer + ": shape mismatch");
  }
  Mat y = (W * xv).colwise() + Eigen::VectorXd(b.col(0));
  const std::string wname = layer + ".W";
  const std::string bname = layer + ".b";
  return push("dense:" + layer, std::move(y),
              [x, wname, bname](Tape& t, const Node& n) {
                const Mat& g = n.grad;
                const Mat& xv2 = t.nodes_[x].value;
                t.grad_slice(wname) += g * xv2.transpose();
                t.grad_slice(bname).col(0) += g.rowwise().sum();
                auto W2 = t.params_.mat(wname);
                t.nodes_[x].grad += W2.transpose() * g;
              });
}

Tape::Id Tape::relu(Id x) {
  const Mat& xv = nodes_[x].value;
  // Fold the sign pattern into the running signature so two forward passes
  // can be compared for kink crossings.
  for (Eigen::Index c = 0; c < xv.cols(); ++c) {
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
      const std::uint64_t bit = xv(r, c) > 0.0 ? 1u : 0u;
      relu_sig_ = mix64(relu_sig_ ^ (relu_entry_count_ * 2 + bit));
      ++relu_entry_count_;
    }
  }
  Mat y = xv.cwiseMax(0.0);
  return push("relu", std::move(y), [x](Tape& t, const Node& n) {
    const Mat& xv2 = t.nodes_[x].value;
    t.nodes_[x].grad +=
        n.grad.cwiseProduct((xv2.array() > 0.0).cast<double>().matrix());
  });
}

Tape::Id Tape::sigmoid(Id x) {
  const Mat& xv = nodes_[x].value;
  Mat y = (1.0 / (1.0 + (-xv.array()).exp())).matrix();
  return push("sigmoid", std::move(y), [x](Tape& t, const Node& n) {
    const auto y2 = n.value.array();
    t.nodes_[x].grad += (n.grad.array() * y2 * (1.0 - y2)).matrix();
  });
}

Tape::Id Tape::add(Id a, Id b) {
  if (nodes_[a].value.rows() != nodes_[b].value.rows() ||
      nodes_[a].value.cols() != nodes_[b].value.cols()) {
    throw std::invalid_argument("add: shape mismatch");
  }
  Mat y = nodes_[a].value + nodes_[b].value;
  return push("add", std::move(y), [a, b](Tape& t, const Node& n) {
    t.nodes_[a].grad += n.grad;
    t.nodes_[b].grad += n.grad;
  });
}

Tape::Id Tape::scale(Id a, double s) {
  Mat y = nodes_[a].value * s;
  return push("scale", std::move(y), [a, s](Tape& t, const Node& n) {
    t.nodes_[a].grad += n.grad * s;
  });
}

Tape::Id Tape::sum(const std::vector<Id>& xs) {
  if (xs.empty()) throw std::invalid_argument("sum: empty operand list");
  Mat y = nodes_[xs[0]].value;
  for (std::size_t k = 1; k < xs.size(); ++k) y += nodes_[xs[k]].value;
  std::vector<Id> ids = xs;
  return push("sum", std::move(y), [ids](Tape& t, const Node& n) {
    for (Id id : ids) t.nodes_[id].grad += n.grad;
  });
}

Tape::Id Tape::concat_rows(const std::vector<Id>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows: empty list");
  const Eigen::Index cols = nodes_[xs[0]].value.cols();
  Eigen::Index rows = 0;
  for (Id id : xs) {
    if (nodes_[id].value.cols() != cols) {
      throw std::invalid_argument("concat_rows: column mismatch");
    }
    rows += nodes_[id].value.rows();
  }
  Mat y(rows, cols);
  Eigen::Index r = 0;
  for (Id id : xs) {
    y.middleRows(r, nodes_[id].value.rows()) = nodes_[id].value;
    r += nodes_[id].value.rows();
  }
  std::vector<Id> ids = xs;
  return push("concat_rows", std::move(y), [ids](Tape& t, const Node& n) {
    Eigen::Index r2 = 0;
    for (Id id : ids) {
      const Eigen::Index h = t.nodes_[id].value.rows();
      t.nodes_[id].grad += n.grad.middleRows(r2, h);
      r2 += h;
    }
  });
}

Tape::Id Tape::concat_cols(const std::vector<Id>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: empty list");
  const Eigen::Index rows = nodes_[xs[0]].value.rows();
  Eigen::Index cols = 0;
  for (Id id : xs) {
    if (nodes_[id].value.rows() != rows) {
      throw std::invalid_argument("concat_cols: row mismatch");
    }
    cols += nodes_[id].value.cols();
  }
  Mat y(rows, cols);
  Eigen::Index c = 0;
  for (Id id : xs) {
    y.middleCols(c, nodes_[id].value.cols()) = nodes_[id].value;
    c += nodes_[id].value.cols();
  }
  std::vector<Id> ids = xs;
  return push("concat_cols", std::move(y), [ids](Tape& t, const Node& n) {
    Eigen::Index c2 = 0;
    for (Id id : ids) {
      const Eigen::Index wdt = t.nodes_[id].value.cols();
      t.nodes_[id].grad += n.grad.middleCols(c2, wdt);
      c2 += wdt;
    }
  });
}

Tape::Id Tape::slice_rows(Id x, int r0, int rows) {
  const Mat& xv = nodes_[x].value;
  if (r0 < 0 || r0 + rows > xv.rows()) {
    throw std::invalid_argument("slice_rows: out of range");
  }
  Mat y = xv.middleRows(r0, rows);
  return push("slice_rows", std::move(y), [x, r0, rows](Tape& t, const Node& n) {
    t.nodes_[x].grad.middleRows(r0, rows) += n.grad;
  });
}

Tape::Id Tape::mean_squared_error(Id pred, const Mat& target) {
  const Mat& pv = nodes_[pred].value;
  if (pv.rows() != target.rows() || pv.cols() != target.cols()) {
    throw std::invalid_argument("mean_squared_error: shape mismatch");
  }
  const double batch = static_cast<double>(pv.cols());
  Mat diff = pv - target;
  Mat y(1, 1);
  y(0, 0) = diff.squaredNorm() / batch;
  Mat d = std::move(diff);
  return push("mean_squared_error", std::move(y),
              [pred, d, batch](Tape& t, const Node& n) {
                t.nodes_[pred].grad += (2.0 / batch) * n.grad(0, 0) * d;
              });
}

namespace {
inline double clamp_log_std(double s) {
  return std::min(kLogStdMax, std::max(kLogStdMin, s));
}
}  // namespace

Tape::Id Tape::gaussian_nll(Id mean, Id log_std, const Mat& actions) {
  const Mat& mu = nodes_[mean].value;
  const Mat& ls = nodes_[log_std].value;
  if (mu.rows() != actions.rows() || mu.cols() != actions.cols() ||
      ls.rows() != actions.rows() || ls.cols() != actions.cols()) {
    throw std::invalid_argument("gaussian_nll: shape mismatch");
  }
  const double batch = static_cast<double>(mu.cols());
  Mat s_cl = ls.unaryExpr([](double s) { return clamp_log_std(s); });
  Mat z = ((actions - mu).array() * (-s_cl).array().exp()).matrix();
  double total = 0.0;
  for (Eigen::Index c = 0; c < mu.cols(); ++c) {
    for (Eigen::Index r = 0; r < mu.rows(); ++r) {
      total += 0.5 * z(r, c) * z(r, c) + s_cl(r, c) +
               0.5 * std::log(2.0 * M_PI);
    }
  }
  Mat y(1, 1);
  y(0, 0) = total / batch;
  return push(
      "gaussian_nll", std::move(y),
      [mean, log_std, actions, s_cl, z, batch](Tape& t, const Node& n) {
        const double g = n.grad(0, 0) / batch;
        // d/dmu of 0.5 z^2 with z = (a - mu) e^{-s}: -z e^{-s}
        Mat inv_sigma = (-s_cl.array()).exp().matrix();
        t.nodes_[mean].grad -=
            g * (z.array() * inv_sigma.array()).matrix();
        // d/ds of [0.5 z^2 + s] = 1 - z^2, zero where the clamp is active.
        const Mat& raw = t.nodes_[log_std].value;
        Mat ds = (1.0 - z.array().square()).matrix();
        for (Eigen::Index c = 0; c < ds.cols(); ++c) {
          for (Eigen::Index r = 0; r < ds.rows(); ++r) {
            if (raw(r, c) <= kLogStdMin || raw(r, c) >= kLogStdMax) {
              ds(r, c) = 0.0;
            }
          }
        }
        t.nodes_[log_std].grad += g * ds;
      });
}

double Tape::scalar(Id id) const {
  const Mat& v = nodes_[id].value;
  if (v.rows() != 1 || v.cols() != 1) {
    throw std::invalid_argument("scalar: node is not 1x1");
  }
  return v(0, 0);
}

Vec Tape::grad(Id loss) {
  const Mat& lv = nodes_[loss].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw std::invalid_argument("grad: loss node must be 1x1");
  }
  check_finite(lv, nodes_[loss].op);
  param_grad_ = Vec::Zero(params_.layout.total());
  for (Id id = 0; id <= loss; ++id) {
    nodes_[id].grad =
        Mat::Zero(nodes_[id].value.rows(), nodes_[id].value.cols());
  }
  nodes_[loss].grad(0, 0) = 1.0;
  for (Id id = loss; id >= 0; --id) {
    const Node& n = nodes_[id];
    if (!n.grad.allFinite()) {
      throw NonFiniteValue("non-finite gradient at op `" + n.op + "`");
    }
    if (n.backward) n.backward(*this, n);
  }
  if (!param_grad_.allFinite()) {
    throw NonFiniteValue("non-finite parameter gradient");
  }
  return param_grad_;
}

Tape::Id tape_mlp(Tape& t, const MlpSpec& spec, Tape::Id x,
                  const std::string& prefix) {
  Tape::Id h = x;
  for (int k = 0; k < spec.n_layers(); ++k) {
    h = t.dense(prefix + "l" + std::to_string(k), h);
    if (k + 1 < spec.n_layers()) h = t.relu(h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

AdamState make_adam(int n, double lr) {
  AdamState s;
  s.m = Vec::Zero(n);
  s.v = Vec::Zero(n);
  s.lr = lr;
  return s;
}

void adam_step(ParamVector& p, AdamState& s, const Vec& g) {
  if (g.size() != p.values.size() || g.size() != s.m.size()) {
    throw std::invalid_argument("adam_step: size mismatch");
  }
  s.t += 1;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * g;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * g.cwiseProduct(g);
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  Vec mhat = s.m / bc1;
  Vec vhat = s.v / bc2;
  p.values -= s.lr *
              (mhat.array() / (vhat.array().sqrt() + s.eps)).matrix();
}

// ---------------------------------------------------------------------------
// Gaussian log-likelihood
// ---------------------------------------------------------------------------

double gaussian_loglik(const Vec& mean, const Vec& log_std, const Vec& a) {
  if (mean.size() != log_std.size() || mean.size() != a.size()) {
    throw std::invalid_argument("gaussian_loglik: size mismatch");
  }
  double ll = 0.0;
  for (Eigen::Index d = 0; d < mean.size(); ++d) {
    const double s = clamp_log_std(log_std[d]);
    const double z = (a[d] - mean[d]) * std::exp(-s);
    ll += -0.5 * z * z - s - 0.5 * std::log(2.0 * M_PI);
  }
  return ll;
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

FdReport finite_diff_check(const ParamVector& p, const LossFn& f,
                           const Vec& analytic, double h,
                           const std::vector<int>& coords) {
  if (analytic.size() != p.values.size()) {
    throw std::invalid_argument("finite_diff_check: gradient size mismatch");
  }
  std::vector<int> idx = coords;
  if (idx.empty()) {
    idx.resize(p.values.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  }
  FdReport rep;
  ParamVector q = p;
  for (int i : idx) {
    const double orig = q.values[i];
    q.values[i] = orig + h;
    const LossEval plus = f(q);
    q.values[i] = orig - h;
    const LossEval minus = f(q);
    q.values[i] = orig;
    if (plus.relu_sig != minus.relu_sig) {
      ++rep.n_kink_skipped;
      continue;
    }
    const double numeric = (plus.loss - minus.loss) / (2.0 * h);
    const double a = analytic[i];
    const double abs_err = std::abs(numeric - a);
    const double rel =
        abs_err / std::max({std::abs(numeric), std::abs(a), 1e-3});
    rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
    rep.max_rel_err = std::max(rep.max_rel_err, rel);
    ++rep.n_checked;
  }
  return rep;
}

}  // namespace atr::nn
