#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include "dynaplatoon/errors.hpp"
#include "dynaplatoon/qlearn.hpp"
#include "oracles.hpp"

using namespace dynaplatoon;
using namespace dynaplatoon::qlearn;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Engine& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = 2.0 * uniform01(rng) - 1.0;
  }
  return m;
}

mdp::StateVec state(double x, std::size_t n = 2) {
  std::vector<double> v(2 + 2 * n, 0.0);
  v[0] = x;
  v[1] = 5.0;
  for (std::size_t i = 0; i < n; ++i) {
    v[2 + i] = 0.01 * static_cast<double>(i + 1);
    v[2 + n + i] = 10.0;
  }
  return {v, n};
}

Transition transition(double x, std::size_t a, double r, bool done = false) {
  return {state(x), a, r, state(x + 10.0), done, 0};
}

}  // namespace

TEST_CASE("zero network outputs zero") {
  QNetwork net({34, 64, 64, 9});
  Engine rng(1);
  const Eigen::MatrixXd x = random_matrix(34, 5, rng);
  CHECK(net.forward(x).isZero(0.0));
  CHECK(net.forward(Eigen::VectorXd(x.col(0))).size() == 9);
  CHECK_THROWS_AS(net.forward(Eigen::VectorXd(Eigen::VectorXd::Zero(33))), DomainError);
}

TEST_CASE("hand-computed two-layer forward pass") {
  QNetwork net({2, 2, 1});
  net.weight(0) << 1.0, -1.0, 0.5, 2.0;
  net.bias(0) << 0.0, -1.0;
  net.weight(1) << 3.0, -2.0;
  net.bias(1) << 0.25;
  // Hidden pre-activations for x = (1, 2): (-1, 3.5) -> relu (0, 3.5); output 0*3 - 7 + 0.25.
  const Eigen::VectorXd q = net.forward(Eigen::VectorXd(Eigen::Vector2d(1.0, 2.0)));
  CHECK(q(0) == -6.75);
  CHECK(net.forward(Eigen::VectorXd(Eigen::Vector2d(1.0, 2.0)))(0) == q(0));
}

TEST_CASE("uniform initialisation respects the fan limits") {
  QNetwork net({34, 64, 64, 9});
  Engine rng = make_engine(1, Stream::weight_init);
  net.init_uniform(rng);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(net.sizes()[l] + net.sizes()[l + 1]));
    CHECK(net.weight(l).cwiseAbs().maxCoeff() <= limit);
    CHECK(net.weight(l).cwiseAbs().maxCoeff() > 0.5 * limit);
    CHECK(net.bias(l).isZero(0.0));
  }
}

TEST_CASE("analytic gradients match central differences") {
  Engine rng(77);
  const std::vector<std::vector<std::size_t>> shapes{{3, 4, 2}, {6, 5, 5, 4}, {34, 16, 16, 9}};
  for (const auto& sizes : shapes) {
    QNetwork net(sizes);
    net.init_uniform(rng);
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      net.bias(l) = 0.1 * random_matrix(net.bias(l).size(), 1, rng);
    }
    const Eigen::Index batch = 5;
    const Eigen::MatrixXd x = random_matrix(static_cast<Eigen::Index>(sizes.front()), batch, rng);
    std::vector<std::size_t> actions;
    for (Eigen::Index j = 0; j < batch; ++j) actions.push_back(uniform_index(rng, sizes.back()));
    const Eigen::VectorXd y = random_matrix(batch, 1, rng);
    CHECK(oracle::gradient_check(net, x, actions, y) < 1e-4);
  }
}

TEST_CASE("loss is zero when Q matches the targets") {
  QNetwork net({2, 3, 2});
  Engine rng(3);
  net.init_uniform(rng);
  const Eigen::MatrixXd x = random_matrix(2, 4, rng);
  const Eigen::MatrixXd q = net.forward(x);
  const std::vector<std::size_t> actions{0, 1, 1, 0};
  Eigen::VectorXd y(4);
  for (Eigen::Index j = 0; j < 4; ++j) y(j) = q(static_cast<Eigen::Index>(actions[j]), j);
  Gradients g;
  CHECK(squared_td_loss(net, x, actions, y, &g) == 0.0);
  for (const auto& w : g.weights) CHECK(w.isZero(0.0));
}

TEST_CASE("first Adam step moves each parameter by the learning rate against the gradient") {
  QNetwork net({3, 4, 2});
  Engine rng(8);
  net.init_uniform(rng);
  for (std::size_t l = 0; l < net.layer_count(); ++l) net.bias(l).setConstant(0.05);
  const Eigen::MatrixXd x = random_matrix(3, 6, rng).cwiseAbs();
  const std::vector<std::size_t> actions{0, 1, 0, 1, 0, 1};
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(6, 3.0);
  Gradients g;
  squared_td_loss(net, x, actions, y, &g);
  const QNetwork before = net;
  AdamParams p;
  p.learning_rate = 1e-3;
  Adam adam(net, p);
  adam.step(net, g);
  CHECK(adam.steps() == 1);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    for (Eigen::Index i = 0; i < g.weights[l].size(); ++i) {
      const double gi = g.weights[l].data()[i];
      const double moved = net.weight(l).data()[i] - before.weight(l).data()[i];
      if (std::abs(gi) > 1e-6) {
        CHECK(moved == doctest::Approx(-p.learning_rate * (gi > 0 ? 1.0 : -1.0)).epsilon(1e-4));
      } else {
        CHECK(std::abs(moved) <= p.learning_rate);
      }
    }
  }
}

TEST_CASE("discount zero makes the target equal the scaled reward") {
  QNetwork net({6, 4, 3});
  Engine rng(4);
  net.init_uniform(rng);
  QNetwork target({6, 4, 3});
  target.init_uniform(rng);
  const std::vector<Transition> batch{transition(10, 0, 2.0), transition(30, 2, -1.0)};
  const Normalizer norm{100.0, 15.0, 0.4};
  const auto loss = [&](const QNetwork& n, double reward_scale) {
    Eigen::MatrixXd x(6, 2);
    x.col(0) = norm.apply(batch[0].s);
    x.col(1) = norm.apply(batch[1].s);
    const std::vector<std::size_t> a{0, 2};
    return squared_td_loss(n, x, a, Eigen::Vector2d(2.0 * reward_scale, -1.0 * reward_scale));
  };
  QNetwork copy = net;
  Adam adam(copy, AdamParams{});
  const double got = td_update(copy, target, batch, norm, TdParams{0.0, 0.5}, adam);
  CHECK(got == doctest::Approx(loss(net, 0.5)).epsilon(1e-15));

  // Terminal transitions ignore the bootstrap even with gamma = 1.
  const std::vector<Transition> terminal{transition(10, 0, 2.0, true), transition(30, 2, -1.0, true)};
  QNetwork copy2 = net;
  Adam adam2(copy2, AdamParams{});
  CHECK(td_update(copy2, target, terminal, norm, TdParams{1.0, 0.5}, adam2) ==
        doctest::Approx(loss(net, 0.5)).epsilon(1e-15));
}

TEST_CASE("non-finite rewards abort the update") {
  QNetwork net({6, 4, 3});
  Engine rng(4);
  net.init_uniform(rng);
  const QNetwork target = net;
  Adam adam(net, AdamParams{});
  const std::vector<Transition> batch{transition(10, 0, std::numeric_limits<double>::infinity())};
  CHECK_THROWS_AS(td_update(net, target, batch, Normalizer{}, TdParams{}, adam), TrainingError);
}

TEST_CASE("target sync copies every parameter") {
  QNetwork net({5, 7, 3}), target({5, 7, 3});
  Engine rng(12);
  net.init_uniform(rng);
  sync_target(net, target);
  CHECK(target == net);
  const Eigen::MatrixXd x = random_matrix(5, 4, rng);
  CHECK(target.forward(x) == net.forward(x));
}

TEST_CASE("checkpoint round-trip is exact") {
  QNetwork net({34, 16, 16, 9});
  Engine rng(21);
  net.init_uniform(rng);
  for (std::size_t l = 0; l < net.layer_count(); ++l) net.bias(l) = random_matrix(net.bias(l).size(), 1, rng);
  const auto path = std::filesystem::temp_directory_path() / "dynaplatoon_qnet_test.txt";
  net.save(path);
  CHECK(QNetwork::load(path) == net);
  {
    std::ofstream out(path);
    out << "format = dynaplatoon-qnet-1\nlayers = 34 16\nweight.0 = 16 34\n1 2 3\n";
  }
  CHECK_THROWS_AS(QNetwork::load(path), InputError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(QNetwork::load(path), InputError);
}

TEST_CASE("replay memory is a FIFO ring") {
  ReplayMemory memory(5);
  Engine rng(1);
  CHECK_THROWS_AS(memory.sample(1, rng), StateError);
  for (int k = 0; k < 12; ++k) memory.push(transition(k, 0, k));
  CHECK(memory.size() == 5);
  std::vector<double> stored;
  for (std::size_t i = 0; i < memory.size(); ++i) stored.push_back(memory.at(i).reward);
  CHECK(stored == std::vector<double>{7, 8, 9, 10, 11});
  memory.push(transition(12, 0, 12));
  CHECK(memory.at(0).reward == 8);
  CHECK(memory.at(4).reward == 12);
  CHECK_THROWS_AS(memory.sample(6, rng), StateError);
}

TEST_CASE("seeded sampling is reproducible and uniform with replacement") {
  ReplayMemory memory(100);
  for (int k = 0; k < 64; ++k) memory.push(transition(k, 0, k));
  Engine a(5), b(5);
  CHECK(memory.sample_indices(64, a) == memory.sample_indices(64, b));
  ReplayMemory small(10);
  for (int k = 0; k < 10; ++k) small.push(transition(k, 0, k));
  std::vector<int> counts(10, 0);
  Engine c(6);
  for (int round = 0; round < 1000; ++round) {
    for (auto i : small.sample_indices(10, c)) ++counts[i];
  }
  for (int n : counts) CHECK(std::abs(n - 1000) < 150);
}

TEST_CASE("greedy probability ramp") {
  const EpsSchedule s;
  CHECK(s.greedy_prob(0) == 0.0);
  CHECK(s.greedy_prob(10000) == doctest::Approx(0.475));
  CHECK(s.greedy_prob(20000) == 0.95);
  CHECK(s.greedy_prob(1000000) == 0.95);
  double prev = 0.0;
  for (std::size_t k = 0; k < 25000; k += 97) {
    CHECK(s.greedy_prob(k) >= prev);
    prev = s.greedy_prob(k);
  }
}

TEST_CASE("argmax breaks ties towards the lowest index") {
  const std::vector<double> q{0.0, 1.0, 3.0, 2.0, 0.5, 3.0, -1.0, 0.0, 1.0};
  CHECK(argmax(q) == 2);
  Engine rng(1);
  for (int k = 0; k < 20; ++k) CHECK(epsilon_greedy(q, 1.0, rng) == 2);
  std::vector<double> shifted = q;
  for (double& v : shifted) v += 17.25;
  CHECK(argmax(shifted) == argmax(q));
}

TEST_CASE("pure exploration is uniform over the actions") {
  const std::vector<double> q(9, 0.0);
  Engine rng = make_engine(1, Stream::exploration);
  std::vector<double> counts(9, 0.0);
  const int draws = 10000;
  for (int k = 0; k < draws; ++k) ++counts[epsilon_greedy(q, 0.0, rng)];
  double chi2 = 0.0;
  const double expected = draws / 9.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 99.9th percentile of chi-square with 8 degrees of freedom.
  CHECK(chi2 < 26.12);
}

TEST_CASE("normaliser scales positions, speeds and densities") {
  const Normalizer n{800.0, 15.0, 0.4};
  const auto x = n.apply(state(400.0));
  CHECK(x(0) == 0.5);
  CHECK(x(1) == doctest::Approx(1.0 / 3.0));
  CHECK(x(2) == doctest::Approx(0.025));
  CHECK(x(4) == doctest::Approx(10.0 / 15.0));
}
