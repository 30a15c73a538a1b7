#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "magpose/autodiff.hpp"
#include "magpose/params.hpp"
#include "magpose/rng.hpp"

using namespace magpose;

TEST_CASE("primitive values") {
  Tape tape;
  CHECK(tanh(tape.leaf(0.0)).value() == 0.0);
  CHECK(sigmoid(tape.leaf(0.0)).value() == 0.5);
  CHECK(softplus(tape.leaf(0.0)).value() == doctest::Approx(std::log(2.0)));
  CHECK(square(tape.leaf(-3.0)).value() == 9.0);
  CHECK(inv(tape.leaf(4.0)).value() == 0.25);
  CHECK(magpose::sqrt(tape.leaf(9.0)).value() == 3.0);
  CHECK(magpose::exp(tape.leaf(1.0)).value() == doctest::Approx(std::exp(1.0)));
  CHECK(magpose::log(tape.leaf(std::exp(2.0))).value() == doctest::Approx(2.0));
}

TEST_CASE("taped composite matches a straight reimplementation") {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(-4.0, 4.0);
    const double b = rng.uniform(-4.0, 4.0);
    const double c = rng.uniform(-4.0, 4.0);

    Tape tape;
    const Var va = tape.leaf(a), vb = tape.leaf(b), vc = tape.leaf(c);
    const Var taped = tanh(va * vb + sigmoid(vc)) * softplus(va - vc) +
                      square(magpose::log(softplus(vb) + 0.5)) -
                      magpose::exp(vc * 0.25) * 0.1;

    const double s = 1.0 / (1.0 + std::exp(-c));
    const double straight = std::tanh(a * b + s) * std::log1p(std::exp(a - c)) +
                            std::pow(std::log(std::log1p(std::exp(b)) + 0.5), 2) -
                            std::exp(c * 0.25) * 0.1;
    CHECK(taped.value() == doctest::Approx(straight).epsilon(1e-12));
  }
}

TEST_CASE("backward on a sum of squares gives 2p") {
  ParamStore store;
  auto& p = store.create("p", {5});
  Rng rng(9);
  for (auto& v : p) v = rng.uniform(-2.0, 2.0);

  Tape tape;
  Binding binding(tape, store);
  const auto& vars = binding.get("p");
  Var loss = tape.leaf(0.0);
  for (const Var& v : vars) loss = loss + square(v);
  tape.backward(loss);
  binding.add_grads();

  const auto& e = store.at("p");
  for (std::size_t i = 0; i < e.value.size(); ++i)
    CHECK(e.grad[i] == doctest::Approx(2.0 * e.value[i]).epsilon(1e-15));
}

TEST_CASE("unreachable parameters get exact zero gradient") {
  ParamStore store;
  store.create("used", {3}) = {1.0, 2.0, 3.0};
  store.create("unused_bound", {2}) = {4.0, 5.0};
  store.create("never_bound", {2}) = {6.0, 7.0};

  Tape tape;
  Binding binding(tape, store);
  const auto& used = binding.get("used");
  binding.get("unused_bound");  // on the tape but not connected to the loss
  Var loss = square(used[0]) + used[1] * used[2];
  tape.backward(loss);
  binding.add_grads();

  for (double g : store.at("unused_bound").grad) CHECK(g == 0.0);
  for (double g : store.at("never_bound").grad) CHECK(g == 0.0);
  CHECK(store.at("used").grad[0] == 2.0);
  CHECK(store.at("used").grad[1] == 3.0);
  CHECK(store.at("used").grad[2] == 2.0);
}

TEST_CASE("dot and matvec_affine shapes are enforced") {
  Tape tape;
  std::vector<Var> a{tape.leaf(1.0), tape.leaf(2.0)};
  std::vector<Var> b{tape.leaf(3.0)};
  CHECK_THROWS_AS(dot(a, b), ShapeMismatch);

  std::vector<double> w{1.0, 2.0, 3.0, 4.0};
  std::vector<double> x{1.0, 1.0};
  std::vector<double> bias{0.5};
  CHECK_THROWS_AS(matvec_affine(w, 2, 2, x, bias), ShapeMismatch);

  const auto y = matvec_affine(w, 2, 2, x, std::vector<double>{0.5, -0.5});
  CHECK(y[0] == 3.5);
  CHECK(y[1] == 6.5);
}

TEST_CASE("adam: zero gradient leaves fresh parameters unchanged") {
  ParamStore store;
  store.create("p", {3}) = {1.0, -2.0, 0.5};
  const auto before = store.at("p").value;
  store.adam_step({});
  CHECK(store.at("p").value == before);
}

TEST_CASE("adam: constant gradient approaches -sign(g) * lr steps") {
  ParamStore store;
  store.create("p", {2}) = {0.0, 0.0};
  AdamConfig cfg;
  cfg.lr = 1e-3;
  double prev0 = 0.0, prev1 = 0.0;
  double step0 = 0.0, step1 = 0.0;
  for (int t = 0; t < 2000; ++t) {
    auto& e = store.at("p");
    e.grad[0] = 2.5;
    e.grad[1] = -0.3;
    prev0 = e.value[0];
    prev1 = e.value[1];
    store.adam_step(cfg);
    step0 = store.at("p").value[0] - prev0;
    step1 = store.at("p").value[1] - prev1;
  }
  CHECK(step0 == doctest::Approx(-cfg.lr).epsilon(1e-4));
  CHECK(step1 == doctest::Approx(cfg.lr).epsilon(1e-4));
}

TEST_CASE("adam drives a quadratic bowl to the minimum") {
  ParamStore store;
  store.create("p", {4}) = {0.8, -0.6, 0.4, 0.2};
  AdamConfig cfg;
  cfg.lr = 1e-2;
  for (int t = 0; t < 500; ++t) {
    Tape tape;
    Binding binding(tape, store);
    const auto& vars = binding.get("p");
    Var loss = tape.leaf(0.0);
    for (const Var& v : vars) loss = loss + square(v);
    tape.backward(loss);
    binding.add_grads();
    store.adam_step(cfg);
  }
  double nrm = 0.0;
  for (double v : store.at("p").value) nrm += v * v;
  CHECK(std::sqrt(nrm) < 1e-3);
}

TEST_CASE("identical seeds give bit-identical optimization trajectories") {
  const auto run = [] {
    ParamStore store;
    Rng rng(42);
    auto& p = store.create("p", {6});
    for (auto& v : p) v = rng.uniform(-1.0, 1.0);
    AdamConfig cfg;
    for (int t = 0; t < 50; ++t) {
      Tape tape;
      Binding binding(tape, store);
      const auto& vars = binding.get("p");
      Var loss = tape.leaf(0.0);
      for (std::size_t i = 0; i < vars.size(); ++i)
        loss = loss + square(tanh(vars[i]) - 0.1 * static_cast<double>(i));
      tape.backward(loss);
      binding.add_grads();
      store.adam_step(cfg);
    }
    return store.at("p").value;
  };
  CHECK(run() == run());
}

TEST_CASE("random graphs over [-20, 20] stay finite") {
  Rng rng(77);
  long evaluations = 0;
  while (evaluations < 1000000) {
    Tape tape;
    std::vector<Var> nodes;
    for (int i = 0; i < 4; ++i) nodes.push_back(tape.leaf(rng.uniform(-20.0, 20.0)));
    int growth_budget = 3;  // mul/square/exp grow magnitudes; the guards cap exp
    for (int i = 0; i < 16; ++i) {
      const Var a = nodes[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(nodes.size())))];
      const Var b = nodes[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(nodes.size())))];
      Var out = a;
      switch (rng.uniform_int(9)) {
        case 0: out = a + b; break;
        case 1: out = a - b; break;
        case 2: out = growth_budget-- > 0 ? a * b : a + b; break;
        case 3: out = tanh(a); break;
        case 4: out = sigmoid(a); break;
        case 5: out = growth_budget-- > 0 ? magpose::exp(a) : sigmoid(a); break;
        case 6: out = magpose::log(a); break;
        case 7: out = softplus(a); break;
        case 8: out = growth_budget-- > 0 ? square(a) : tanh(a); break;
      }
      nodes.push_back(out);
      ++evaluations;
      CHECK(std::isfinite(out.value()));
    }
    tape.backward(nodes.back());
  }
}

TEST_CASE("gradient-check harness validates a composite loss") {
  ParamStore store;
  Rng rng(3);
  auto& w = store.create("w", {4});
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  auto& b = store.create("b", {1});
  b[0] = 0.3;

  const auto build = [](Tape& tape, Binding& binding) {
    const auto& wv = binding.get("w");
    const auto& bv = binding.get("b");
    Var acc = tape.leaf(0.0);
    for (std::size_t i = 0; i < wv.size(); ++i)
      acc = acc + softplus(wv[i] * 0.7 + bv[0]) * tanh(wv[i]);
    return square(acc) + sigmoid(acc);
  };
  const auto report = check_gradients(store, build);
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("parameter persistence round trips exactly") {
  ParamStore store;
  Rng rng(17);
  auto& a = store.create("net.W0", {3, 4});
  for (auto& v : a) v = rng.gaussian() * 1e-3;
  auto& c = store.create("net.b0", {3});
  for (auto& v : c) v = rng.gaussian() * 100.0;

  std::map<std::string, std::string> meta{{"kind", "test"}, {"note", "x"}};
  std::stringstream ss;
  store.save(ss, meta);

  std::map<std::string, std::string> meta2;
  const ParamStore loaded = ParamStore::load(ss, meta2);
  CHECK(meta2.at("kind") == "test");
  CHECK(loaded.at("net.W0").value == store.at("net.W0").value);
  CHECK(loaded.at("net.W0").shape == std::vector<int>{3, 4});
  CHECK(loaded.at("net.b0").value == store.at("net.b0").value);
}

TEST_CASE("model files with a foreign version line are rejected") {
  std::stringstream ss;
  ss << "# magpose-model-v99\nkind = test\n\n";
  std::map<std::string, std::string> meta;
  CHECK_THROWS_AS(ParamStore::load(ss, meta), VersionMismatch);
}
