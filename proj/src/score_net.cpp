#include "apohf/score_net.hpp"

#include <cmath>
#include <random>

#include "apohf/json_io.hpp"

namespace apohf {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LayerShape {
  Eigen::Index in;
  Eigen::Index out;
  Eigen::Index weight_offset;
  Eigen::Index bias_offset;
};

std::vector<LayerShape> layout(Eigen::Index input_dim, const std::vector<int>& widths) {
  std::vector<LayerShape> layers;
  Eigen::Index in = input_dim;
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l <= widths.size(); ++l) {
    const Eigen::Index out = l < widths.size() ? widths[l] : 1;
    layers.push_back(LayerShape{in, out, offset, offset + in * out});
    offset += in * out + out;
    in = out;
  }
  return layers;
}

}  // namespace

// Forward/backward workspace for batched evaluation. Reused across epochs so
// the training loop does not allocate.
class NetTrainer {
 public:
  NetTrainer(Eigen::Index input_dim, const std::vector<int>& widths)
      : layers_(layout(input_dim, widths)),
        pre_(widths.size()),
        act_(widths.size()),
        grad_a_(widths.size()) {}

  const Vector& forward(const Vector& theta, const Matrix& inputs) {
    const Eigen::Index m = inputs.rows();
    const Matrix* a = &inputs;
    const std::size_t hidden = pre_.size();
    for (std::size_t l = 0; l < hidden; ++l) {
      const LayerShape& s = layers_[l];
      Eigen::Map<const RowMatrix> w(theta.data() + s.weight_offset, s.out, s.in);
      Eigen::Map<const Vector> b(theta.data() + s.bias_offset, s.out);
      pre_[l].resize(m, s.out);
      pre_[l].noalias() = *a * w.transpose();
      pre_[l].rowwise() += b.transpose();
      act_[l] = pre_[l].cwiseMax(0.0);
      a = &act_[l];
    }
    const LayerShape& s = layers_.back();
    Eigen::Map<const Vector> w(theta.data() + s.weight_offset, s.in);
    out_.resize(m);
    out_.noalias() = *a * w;
    out_.array() += theta[s.bias_offset];
    inputs_ = &inputs;
    return out_;
  }

  // Reverse pass for the batch seen by the last forward(). Writes
  // sum_i d_out[i] * dh(x_i)/dtheta into `grad`.
  void backward(const Vector& theta, const Vector& d_out, Vector& grad) {
    const std::size_t hidden = pre_.size();
    const LayerShape& s = layers_.back();
    const Matrix& last = hidden ? act_.back() : *inputs_;
    Eigen::Map<const Vector> w_out(theta.data() + s.weight_offset, s.in);
    grad.segment(s.weight_offset, s.in).noalias() = last.transpose() * d_out;
    grad[s.bias_offset] = d_out.sum();
    if (hidden == 0) return;
    grad_a_.back().noalias() = d_out * w_out.transpose();
    for (std::size_t l = hidden; l-- > 0;) {
      const LayerShape& ls = layers_[l];
      Matrix& dz = grad_a_[l];
      dz.array() *= (pre_[l].array() > 0.0).cast<double>();
      const Matrix& a_in = l == 0 ? *inputs_ : act_[l - 1];
      Eigen::Map<RowMatrix> gw(grad.data() + ls.weight_offset, ls.out, ls.in);
      gw.noalias() = dz.transpose() * a_in;
      grad.segment(ls.bias_offset, ls.out) = dz.colwise().sum().transpose();
      if (l > 0) {
        Eigen::Map<const RowMatrix> w(theta.data() + ls.weight_offset, ls.out, ls.in);
        grad_a_[l - 1].noalias() = dz * w;
      }
    }
  }

  // Per-row parameter gradients of the batch seen by the last forward().
  Matrix per_sample_gradients(const Vector& theta) {
    const Eigen::Index m = out_.size();
    const Eigen::Index p = theta.size();
    RowMatrix g = RowMatrix::Zero(m, p);
    const std::size_t hidden = pre_.size();
    const LayerShape& s = layers_.back();
    const Matrix& last = hidden ? act_.back() : *inputs_;
    g.middleCols(s.weight_offset, s.in) = last;
    g.col(s.bias_offset).setOnes();
    if (hidden > 0) {
      Eigen::Map<const Vector> w_out(theta.data() + s.weight_offset, s.in);
      Matrix da = Vector::Ones(m) * w_out.transpose();
      for (std::size_t l = hidden; l-- > 0;) {
        const LayerShape& ls = layers_[l];
        Matrix dz = da.cwiseProduct((pre_[l].array() > 0.0).cast<double>().matrix());
        const Matrix& a_in = l == 0 ? *inputs_ : act_[l - 1];
        for (Eigen::Index i = 0; i < m; ++i) {
          for (Eigen::Index o = 0; o < ls.out; ++o) {
            g.row(i).segment(ls.weight_offset + o * ls.in, ls.in) = dz(i, o) * a_in.row(i);
          }
        }
        g.middleCols(ls.bias_offset, ls.out) = dz;
        if (l > 0) {
          Eigen::Map<const RowMatrix> w(theta.data() + ls.weight_offset, ls.out, ls.in);
          da = dz * w;
        }
      }
    }
    return Matrix(g);
  }

  // Loss over `data` at the scores from the last forward(); fills d_loss/d_out.
  static double pair_loss(const Vector& scores, const TrainingSet& data, Vector& d_out) {
    d_out.setZero(scores.size());
    double loss = 0.0;
    for (const Comparison& c : data.comparisons) {
      const double z = scores[c.first_row] - scores[c.second_row];
      const double sign = c.outcome == 1 ? 1.0 : -1.0;
      loss -= log_sigmoid(sign * z);
      const double g = -sign * sigmoid(-sign * z);
      d_out[c.first_row] += g;
      d_out[c.second_row] -= g;
    }
    return loss;
  }

  // Full loss and gradient (including regularizer) at theta.
  double loss_and_gradient(const Vector& theta, const TrainingSet& data,
                           double l2_lambda, Vector& grad) {
    double loss = 0.0;
    if (data.comparisons.empty()) {
      grad.setZero(theta.size());
    } else {
      const Vector& scores = forward(theta, data.inputs);
      loss = pair_loss(scores, data, d_out_);
      backward(theta, d_out_, grad);
    }
    loss += l2_lambda * theta.squaredNorm();
    grad.noalias() += 2.0 * l2_lambda * theta;
    return loss;
  }

 private:
  std::vector<LayerShape> layers_;
  std::vector<Matrix> pre_;
  std::vector<Matrix> act_;
  std::vector<Matrix> grad_a_;
  Vector out_;
  Vector d_out_;
  const Matrix* inputs_ = nullptr;
};

double log_sigmoid(double z) {
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (!(l2_lambda >= 0.0)) throw std::invalid_argument("l2_lambda must be >= 0");
}

ScoreNet::ScoreNet(Eigen::Index input_dim, std::vector<int> widths, Vector theta)
    : input_dim_(input_dim), widths_(std::move(widths)) {
  if (input_dim_ < 1) throw std::invalid_argument("input dimension must be >= 1");
  for (int w : widths_) {
    if (w < 1) throw std::invalid_argument("hidden widths must be >= 1");
  }
  set_theta(std::move(theta));
}

ScoreNet ScoreNet::init(Eigen::Index input_dim, std::uint64_t seed, std::vector<int> widths) {
  if (input_dim < 1) throw std::invalid_argument("input dimension must be >= 1");
  Vector theta = Vector::Zero(param_count(input_dim, widths));
  std::mt19937_64 rng(seed);
  for (const LayerShape& s : layout(input_dim, widths)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index k = 0; k < s.in * s.out; ++k) theta[s.weight_offset + k] = u(rng);
  }
  return ScoreNet(input_dim, std::move(widths), std::move(theta));
}

Eigen::Index ScoreNet::param_count(Eigen::Index input_dim, const std::vector<int>& widths) {
  Eigen::Index p = 0;
  Eigen::Index in = input_dim;
  for (int w : widths) {
    p += in * w + w;
    in = w;
  }
  return p + in + 1;
}

void ScoreNet::set_theta(Vector theta) {
  if (theta.size() != param_count(input_dim_, widths_)) {
    throw std::invalid_argument("theta has " + std::to_string(theta.size()) +
                                " entries, expected " +
                                std::to_string(param_count(input_dim_, widths_)));
  }
  if (!theta.allFinite()) throw std::invalid_argument("theta has non-finite entries");
  theta_ = std::move(theta);
}

double ScoreNet::forward(const Eigen::Ref<const Vector>& x) const {
  if (x.size() != input_dim_) {
    throw std::invalid_argument("input has dimension " + std::to_string(x.size()) +
                                ", expected " + std::to_string(input_dim_));
  }
  Matrix row = x.transpose();
  return forward_batch(row)[0];
}

Vector ScoreNet::forward_batch(const Matrix& inputs) const {
  if (inputs.cols() != input_dim_) {
    throw std::invalid_argument("inputs have dimension " + std::to_string(inputs.cols()) +
                                ", expected " + std::to_string(input_dim_));
  }
  NetTrainer t(input_dim_, widths_);
  return t.forward(theta_, inputs);
}

Vector ScoreNet::param_gradient(const Eigen::Ref<const Vector>& x) const {
  if (x.size() != input_dim_) {
    throw std::invalid_argument("input has dimension " + std::to_string(x.size()) +
                                ", expected " + std::to_string(input_dim_));
  }
  Matrix row = x.transpose();
  NetTrainer t(input_dim_, widths_);
  t.forward(theta_, row);
  Vector grad(theta_.size());
  t.backward(theta_, Vector::Ones(1), grad);
  return grad;
}

Matrix ScoreNet::param_gradients(const Matrix& inputs) const {
  if (inputs.cols() != input_dim_) {
    throw std::invalid_argument("inputs have dimension " + std::to_string(inputs.cols()) +
                                ", expected " + std::to_string(input_dim_));
  }
  NetTrainer t(input_dim_, widths_);
  t.forward(theta_, inputs);
  return t.per_sample_gradients(theta_);
}

nlohmann::json ScoreNet::checkpoint() const {
  return nlohmann::json{{"d", input_dim_}, {"widths", widths_}, {"theta", vector_to_json(theta_)}};
}

ScoreNet ScoreNet::from_checkpoint(const nlohmann::json& j) {
  return ScoreNet(j.at("d").get<Eigen::Index>(), j.at("widths").get<std::vector<int>>(),
                  vector_from_json(j.at("theta")));
}

namespace {

void check_inputs(const ScoreNet& net, const TrainingSet& data) {
  if (!data.comparisons.empty() && data.inputs.cols() != net.input_dim()) {
    throw std::invalid_argument("training inputs have dimension " +
                                std::to_string(data.inputs.cols()) + ", expected " +
                                std::to_string(net.input_dim()));
  }
}

}  // namespace

double preference_loss(const ScoreNet& net, const TrainingSet& data, double l2_lambda) {
  check_inputs(net, data);
  NetTrainer t(net.input_dim(), net.widths());
  Vector grad(net.num_params());
  return t.loss_and_gradient(net.theta(), data, l2_lambda, grad);
}

Vector preference_loss_gradient(const ScoreNet& net, const TrainingSet& data,
                                double l2_lambda) {
  check_inputs(net, data);
  NetTrainer t(net.input_dim(), net.widths());
  Vector grad(net.num_params());
  t.loss_and_gradient(net.theta(), data, l2_lambda, grad);
  return grad;
}

ScoreNet train(ScoreNet start, const TrainingSet& data, const TrainConfig& config) {
  config.validate();
  check_inputs(start, data);
  NetTrainer t(start.input_dim(), start.widths());
  Vector theta = start.theta();
  const Eigen::Index p = theta.size();
  Vector grad(p);
  Vector m = Vector::Zero(p);
  Vector v = Vector::Zero(p);
  double beta1_pow = 1.0;
  double beta2_pow = 1.0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double loss = t.loss_and_gradient(theta, data, config.l2_lambda, grad);
    if (!std::isfinite(loss) || !grad.allFinite()) {
      throw TrainingError(epoch, "non-finite loss");
    }
    beta1_pow *= config.beta1;
    beta2_pow *= config.beta2;
    m = config.beta1 * m + (1.0 - config.beta1) * grad;
    v = config.beta2 * v + (1.0 - config.beta2) * grad.cwiseAbs2();
    const double step = config.learning_rate / (1.0 - beta1_pow);
    const double v_correction = 1.0 / (1.0 - beta2_pow);
    theta.array() -= step * m.array() / ((v.array() * v_correction).sqrt() + config.epsilon);
  }
  start.set_theta(std::move(theta));
  return start;
}

}  // namespace apohf
