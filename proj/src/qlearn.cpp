#include "dynaplatoon/qlearn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "dynaplatoon/errors.hpp"
#include "dynaplatoon/text_io.hpp"

namespace dynaplatoon::qlearn {

namespace {

constexpr const char* kNetFormat = "dynaplatoon-qnet-1";

Gradients zeros_like(const QNetwork& net) {
  Gradients g;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    g.weights.push_back(Eigen::MatrixXd::Zero(net.weight(l).rows(), net.weight(l).cols()));
    g.biases.push_back(Eigen::VectorXd::Zero(net.bias(l).size()));
  }
  return g;
}

}  // namespace

QNetwork::QNetwork(std::vector<std::size_t> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw DomainError("network needs at least an input and an output layer");
  for (auto s : sizes_) {
    if (s == 0) throw DomainError("layer widths must be positive");
  }
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const auto out = static_cast<Eigen::Index>(sizes_[l + 1]);
    const auto in = static_cast<Eigen::Index>(sizes_[l]);
    weights_.push_back(Eigen::MatrixXd::Zero(out, in));
    biases_.push_back(Eigen::VectorXd::Zero(out));
  }
}

void QNetwork::init_uniform(Engine& rng) {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    auto& W = weights_[l];
    const double limit = std::sqrt(6.0 / static_cast<double>(W.rows() + W.cols()));
    // Row-major fill so the draw order matches the checkpoint layout.
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = limit * (2.0 * uniform01(rng) - 1.0);
    }
    biases_[l].setZero();
  }
}

Eigen::MatrixXd QNetwork::forward(const Eigen::MatrixXd& inputs) const {
  if (static_cast<std::size_t>(inputs.rows()) != input_size()) {
    std::ostringstream msg;
    msg << "network expects " << input_size() << " inputs, got " << inputs.rows();
    throw DomainError(msg.str());
  }
  Eigen::MatrixXd a = inputs;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Eigen::MatrixXd z = weights_[l] * a;
    z.colwise() += biases_[l];
    a = (l + 1 < weights_.size()) ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
  }
  return a;
}

Eigen::VectorXd QNetwork::forward(const Eigen::VectorXd& input) const {
  return forward(Eigen::MatrixXd(input)).col(0);
}

bool QNetwork::all_finite() const {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (!weights_[l].allFinite() || !biases_[l].allFinite()) return false;
  }
  return true;
}

bool QNetwork::operator==(const QNetwork& o) const {
  if (sizes_ != o.sizes_) return false;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (weights_[l] != o.weights_[l] || biases_[l] != o.biases_[l]) return false;
  }
  return true;
}

void QNetwork::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write network checkpoint " + path.string());
  out << "format = " << kNetFormat << "\nlayers =";
  for (auto s : sizes_) out << ' ' << s;
  out << '\n';
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const auto& W = weights_[l];
    out << "weight." << l << " = " << W.rows() << ' ' << W.cols() << '\n';
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      for (Eigen::Index c = 0; c < W.cols(); ++c) {
        out << (c ? " " : "") << format_double(W(r, c));
      }
      out << '\n';
    }
    out << "bias." << l << " = " << biases_[l].size() << '\n';
    for (Eigen::Index r = 0; r < biases_[l].size(); ++r) {
      out << (r ? " " : "") << format_double(biases_[l](r));
    }
    out << '\n';
  }
}

QNetwork QNetwork::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read network checkpoint " + path.string());
  auto fail = [&](const std::string& why) -> void {
    throw InputError("network checkpoint " + path.string() + ": " + why);
  };
  std::string line;
  auto header = [&](const std::string& key) {
    if (!std::getline(in, line)) fail("missing " + key);
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(std::string_view(line).substr(0, eq)) != key) {
      fail("expected '" + key + " = ...'");
    }
    return std::string(trim(std::string_view(line).substr(eq + 1)));
  };
  auto numbers = [&](std::size_t expected) {
    if (!std::getline(in, line)) fail("truncated parameter block");
    std::vector<double> values;
    for (auto field : split(line, " \t")) {
      const auto v = parse_double(field);
      if (!v) fail("bad number '" + std::string(field) + "'");
      values.push_back(*v);
    }
    if (values.size() != expected) fail("parameter row has the wrong length");
    return values;
  };

  if (header("format") != kNetFormat) fail("unknown format");
  std::vector<std::size_t> sizes;
  for (auto field : split(header("layers"), " ")) {
    std::size_t v = 0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc{}) fail("bad layer width");
    sizes.push_back(v);
  }
  QNetwork net(sizes);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    auto& W = net.weight(l);
    std::istringstream dims(header("weight." + std::to_string(l)));
    Eigen::Index rows = 0, cols = 0;
    if (!(dims >> rows >> cols) || rows != W.rows() || cols != W.cols()) {
      fail("weight shape mismatch in layer " + std::to_string(l));
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto row = numbers(static_cast<std::size_t>(cols));
      for (Eigen::Index c = 0; c < cols; ++c) W(r, c) = row[static_cast<std::size_t>(c)];
    }
    std::istringstream bdim(header("bias." + std::to_string(l)));
    Eigen::Index n = 0;
    if (!(bdim >> n) || n != net.bias(l).size()) fail("bias shape mismatch");
    const auto b = numbers(static_cast<std::size_t>(n));
    for (Eigen::Index r = 0; r < n; ++r) net.bias(l)(r) = b[static_cast<std::size_t>(r)];
  }
  if (!net.all_finite()) fail("non-finite parameters");
  return net;
}

double squared_td_loss(const QNetwork& net, const Eigen::MatrixXd& inputs,
                       std::span<const std::size_t> actions, const Eigen::VectorXd& targets,
                       Gradients* grad) {
  const auto batch = inputs.cols();
  if (batch == 0) throw DomainError("empty batch");
  if (static_cast<std::size_t>(batch) != actions.size() || targets.size() != batch) {
    throw DomainError("batch inputs, actions and targets disagree in size");
  }
  if (static_cast<std::size_t>(inputs.rows()) != net.input_size()) {
    throw DomainError("batch input width does not match the network");
  }
  const std::size_t L = net.layer_count();
  std::vector<Eigen::MatrixXd> activations{inputs};
  std::vector<Eigen::MatrixXd> pre;
  for (std::size_t l = 0; l < L; ++l) {
    Eigen::MatrixXd z = net.weight(l) * activations.back();
    z.colwise() += net.bias(l);
    pre.push_back(z);
    activations.push_back(l + 1 < L ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z);
  }
  const Eigen::MatrixXd& q = activations.back();

  const double inv_b = 1.0 / static_cast<double>(batch);
  double loss = 0.0;
  Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(q.rows(), batch);
  for (Eigen::Index j = 0; j < batch; ++j) {
    const auto a = static_cast<Eigen::Index>(actions[static_cast<std::size_t>(j)]);
    if (a >= q.rows()) throw DomainError("action index outside the network output");
    const double err = q(a, j) - targets(j);
    loss += err * err;
    delta(a, j) = 2.0 * err * inv_b;
  }
  loss *= inv_b;
  if (grad == nullptr) return loss;

  grad->weights.assign(L, {});
  grad->biases.assign(L, {});
  for (std::size_t l = L; l-- > 0;) {
    grad->weights[l] = delta * activations[l].transpose();
    grad->biases[l] = delta.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXd back = net.weight(l).transpose() * delta;
      delta = back.cwiseProduct((pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  return loss;
}

Adam::Adam(const QNetwork& net, AdamParams params)
    : params_(params), m_(zeros_like(net)), v_(zeros_like(net)) {}

void Adam::step(QNetwork& net, const Gradients& grad) {
  ++t_;
  const double b1 = params_.beta1;
  const double b2 = params_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = params_.learning_rate;
  const double eps = params_.epsilon;
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    update(net.weight(l), m_.weights[l], v_.weights[l], grad.weights[l]);
    update(net.bias(l), m_.biases[l], v_.biases[l], grad.biases[l]);
  }
}

void Normalizer::apply(const mdp::StateVec& s, Eigen::Ref<Eigen::VectorXd> out) const {
  const std::size_t n = s.n_cells();
  out(0) = s.x_p() / position_scale;
  out(1) = s.v_p() / speed_scale;
  for (std::size_t i = 0; i < n; ++i) {
    out(static_cast<Eigen::Index>(2 + i)) = s.rho(i) / density_scale;
    out(static_cast<Eigen::Index>(2 + n + i)) = s.vbar(i) / speed_scale;
  }
}

Eigen::VectorXd Normalizer::apply(const mdp::StateVec& s) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(s.size()));
  apply(s, out);
  return out;
}

Eigen::MatrixXd Normalizer::apply_batch(std::span<const mdp::StateVec* const> states) const {
  if (states.empty()) throw DomainError("empty batch");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(states.front()->size()),
                      static_cast<Eigen::Index>(states.size()));
  for (std::size_t j = 0; j < states.size(); ++j) apply(*states[j], out.col(static_cast<Eigen::Index>(j)));
  return out;
}

double td_update(QNetwork& net, const QNetwork& target, std::span<const Transition> batch,
                 const Normalizer& normalizer, const TdParams& params, Adam& optimizer) {
  if (batch.empty()) throw DomainError("td_update needs a non-empty batch");
  if (!(params.gamma >= 0.0 && params.gamma <= 1.0)) throw DomainError("gamma must lie in [0, 1]");

  std::vector<const mdp::StateVec*> states, nexts;
  std::vector<std::size_t> actions;
  states.reserve(batch.size());
  nexts.reserve(batch.size());
  actions.reserve(batch.size());
  for (const auto& t : batch) {
    states.push_back(&t.s);
    nexts.push_back(&t.next);
    actions.push_back(t.action);
  }
  const Eigen::MatrixXd next_q = target.forward(normalizer.apply_batch(nexts));
  Eigen::VectorXd targets(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    double y = params.reward_scale * batch[j].reward;
    if (!batch[j].done) y += params.gamma * next_q.col(col).maxCoeff();
    targets(col) = y;
  }

  Gradients grad;
  const double loss = squared_td_loss(net, normalizer.apply_batch(states), actions, targets, &grad);
  if (!std::isfinite(loss)) throw TrainingError("non-finite TD loss");
  optimizer.step(net, grad);
  if (!net.all_finite()) throw TrainingError("non-finite network parameters after update");
  return loss;
}

void sync_target(const QNetwork& net, QNetwork& target) { target = net; }

ReplayMemory::ReplayMemory(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw DomainError("replay capacity must be positive");
}

void ReplayMemory::push(Transition t) {
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
    return;
  }
  data_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayMemory::at(std::size_t i) const {
  if (i >= data_.size()) throw DomainError("replay index out of range");
  return data_[(head_ + i) % data_.size()];
}

std::vector<std::size_t> ReplayMemory::sample_indices(std::size_t n, Engine& rng) const {
  if (data_.size() < n || n == 0) {
    std::ostringstream msg;
    msg << "cannot sample " << n << " transitions from a memory holding " << data_.size();
    throw StateError(msg.str());
  }
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = uniform_index(rng, data_.size());
  return idx;
}

std::vector<Transition> ReplayMemory::sample(std::size_t n, Engine& rng) const {
  std::vector<Transition> out;
  out.reserve(n);
  for (auto i : sample_indices(n, rng)) out.push_back(data_[i]);
  return out;
}

double EpsSchedule::greedy_prob(std::size_t step) const {
  if (ramp_steps == 0 || step >= ramp_steps) return max_greedy;
  return max_greedy * static_cast<double>(step) / static_cast<double>(ramp_steps);
}

std::size_t argmax(std::span<const double> q) {
  if (q.empty()) throw DomainError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < q.size(); ++i) {
    if (q[i] > q[best]) best = i;
  }
  return best;
}

std::size_t epsilon_greedy(std::span<const double> q, double greedy_prob, Engine& rng) {
  if (q.empty()) throw DomainError("no actions to choose from");
  if (uniform01(rng) < greedy_prob) return argmax(q);
  return uniform_index(rng, q.size());
}

}  // namespace dynaplatoon::qlearn
