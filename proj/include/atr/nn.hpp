#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "atr/rng.hpp"

namespace atr::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct NonFiniteValue : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnknownParam : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Clamp bounds applied to policy log-standard-deviations.
inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

// ---------------------------------------------------------------------------
// Flat parameter vector with named matrix slices
// ---------------------------------------------------------------------------

struct ParamSlice {
  std::string name;
  int offset = 0;
  int rows = 0;
  int cols = 1;
  int size() const { return rows * cols; }
};

class ParamLayout {
 public:
  // Registers a named block; returns its offset. Names must be unique.
  int add(const std::string& name, int rows, int cols = 1);
  const ParamSlice& at(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  int total() const { return total_; }
  const std::vector<ParamSlice>& slices() const { return slices_; }

 private:
  std::vector<ParamSlice> slices_;
  std::unordered_map<std::string, int> index_;
  int total_ = 0;
};

struct ParamVector {
  ParamLayout layout;
  Vec values;

  static ParamVector zeros(ParamLayout l) {
    ParamVector p;
    p.values = Vec::Zero(l.total());
    p.layout = std::move(l);
    return p;
  }
  Eigen::Map<const Mat> mat(const std::string& name) const {
    const ParamSlice& s = layout.at(name);
    return {values.data() + s.offset, s.rows, s.cols};
  }
  Eigen::Map<Mat> mat(const std::string& name) {
    const ParamSlice& s = layout.at(name);
    return {values.data() + s.offset, s.rows, s.cols};
  }
};

// ---------------------------------------------------------------------------
// MLP helpers (layers named "l<k>.W" / "l<k>.b")
// ---------------------------------------------------------------------------

struct MlpSpec {
  std::vector<int> widths;  // e.g. {36, 64, 64, 12}
  int n_layers() const { return static_cast<int>(widths.size()) - 1; }
};

ParamLayout mlp_layout(const MlpSpec& spec, const std::string& prefix = "");

// Glorot-uniform weights, zero biases; draw order is fixed (layer by layer,
// column-major within each matrix) so initialization is seed-deterministic.
void init_params(ParamVector& p, Rng& rng);

// Plain forward pass: ReLU hidden layers, linear output. Columns are batch.
Mat mlp_forward(const ParamVector& p, const MlpSpec& spec, const Mat& x,
                const std::string& prefix = "");

// ---------------------------------------------------------------------------
// Reverse-mode tape over matrix-valued nodes
// ---------------------------------------------------------------------------

class Tape {
 public:
  using Id = int;

  explicit Tape(const ParamVector& params) : params_(params) {}

  Id input(Mat v);  // gradient-free leaf
  Id dense(const std::string& layer, Id x);  // W*x + b (b broadcast over cols)
  Id relu(Id x);
  Id sigmoid(Id x);
  Id add(Id a, Id b);
  Id scale(Id a, double s);
  Id concat_rows(const std::vector<Id>& xs);
  Id concat_cols(const std::vector<Id>& xs);
  Id slice_rows(Id x, int r0, int rows);
  // Sum of equal-shape nodes, accumulated in the order given.
  Id sum(const std::vector<Id>& xs);
  // Scalar: mean over columns of the squared column-wise error.
  Id mean_squared_error(Id pred, const Mat& target);
  // Scalar: mean over columns of the Gaussian negative log-likelihood of
  // `actions` under N(mean, exp(log_std)^2); log_std is clamped to
  // [kLogStdMin, kLogStdMax] with zero gradient outside the clamp.
  Id gaussian_nll(Id mean, Id log_std, const Mat& actions);

  const Mat& value(Id id) const { return nodes_[id].value; }
  double scalar(Id id) const;

  // Reverse accumulation from a 1x1 loss node. Returns the gradient w.r.t.
  // the flat parameter vector. Throws NonFiniteValue naming the offending op
  // if any value or gradient is non-finite.
  Vec grad(Id loss);

  // Hash of every ReLU input's sign pattern; two evaluations with different
  // signatures straddle a kink.
  std::uint64_t relu_signature() const { return relu_sig_; }

 private:
  struct Node {
    std::string op;
    Mat value;
    Mat grad;
    std::function<void(Tape&, const Node&)> backward;
  };

  Id push(std::string op, Mat value,
          std::function<void(Tape&, const Node&)> backward);
  void check_finite(const Mat& m, const std::string& op) const;
  Eigen::Map<Mat> grad_slice(const std::string& name);

  const ParamVector& params_;
  std::vector<Node> nodes_;
  Vec param_grad_;
  std::uint64_t relu_sig_ = 0xcbf29ce484222325ULL;
  std::uint64_t relu_entry_count_ = 0;
};

// Builds an MLP on the tape; layer names follow mlp_layout(prefix).
Tape::Id tape_mlp(Tape& t, const MlpSpec& spec, Tape::Id x,
                  const std::string& prefix = "");

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  Vec m, v;
  long t = 0;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState make_adam(int n, double lr = 3e-4);
void adam_step(ParamVector& p, AdamState& s, const Vec& g);

// ---------------------------------------------------------------------------
// Gaussian log-likelihood (shared by policies and tests)
// ---------------------------------------------------------------------------

// Sum over dimensions of log N(a | mean, exp(clamped log_std)^2).
double gaussian_loglik(const Vec& mean, const Vec& log_std, const Vec& a);

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

struct LossEval {
  double loss = 0.0;
  std::uint64_t relu_sig = 0;
};
using LossFn = std::function<LossEval(const ParamVector&)>;

struct FdReport {
  double max_rel_err = 0.0;  // over coordinates away from ReLU kinks
  double max_abs_err = 0.0;
  int n_checked = 0;
  int n_kink_skipped = 0;
};

// Central differences with step h against the analytic gradient. Coordinates
// whose +/-h evaluations produce different ReLU sign patterns straddle a kink
// and are excluded from the error statistics (counted separately). An empty
// `coords` checks every coordinate.
FdReport finite_diff_check(const ParamVector& p, const LossFn& f,
                           const Vec& analytic, double h = 1e-5,
                           const std::vector<int>& coords = {});

}  // namespace atr::nn
