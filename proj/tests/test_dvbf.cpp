#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "magpose/dvbf.hpp"
#include "magpose/sim.hpp"
#include "support/test_oracles.hpp"

using namespace magpose;
using oracles::kalman_smoother;
using oracles::Lgssm;
using oracles::lgssm_elbo;

namespace {

DvbfConfig tiny_cfg() {
  DvbfConfig cfg;
  cfg.n_sensors = 4;
  cfg.latent_dim = 4;
  cfg.enc_hidden = 8;
  cfg.trans_hidden = 8;
  cfg.dec_hidden = 8;
  cfg.init_hidden = 8;
  return cfg;
}

std::vector<double> random_frame(Rng& rng, int channels) {
  std::vector<double> x(static_cast<std::size_t>(channels));
  for (auto& v : x) v = rng.uniform(-1.5, 1.5);
  return x;
}

std::vector<DvbfStep> random_steps(Rng& rng, const DvbfConfig& cfg, int T) {
  std::vector<DvbfStep> steps;
  for (int t = 0; t < T; ++t) {
    DvbfStep s;
    s.x = random_frame(rng, cfg.n_sensors * 3);
    for (auto& v : s.u) v = rng.uniform(-1.0, 1.0);
    s.y = rotation_to_sixd(random_rotation(rng)).v;
    steps.push_back(std::move(s));
  }
  return steps;
}

// Forces the sigma head of an MLP-with-gaussian-head to a constant by
// zeroing the last layer's sigma rows and pinning their bias.
void force_sigma(ParamStore& params, const std::string& prefix,
                 const std::vector<int>& dims, double raw_bias) {
  const std::size_t last = dims.size() - 2;
  auto& w = params.at(prefix + ".W" + std::to_string(last)).value;
  auto& b = params.at(prefix + ".b" + std::to_string(last)).value;
  const int rows = dims[last + 1];
  const int cols = dims[last];
  for (int r = rows / 2; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) w[static_cast<std::size_t>(r * cols + c)] = 0.0;
    b[static_cast<std::size_t>(r)] = raw_bias;
  }
}

}  // namespace

TEST_CASE("posterior_step: infinite measurement variance defers to the prior") {
  DvbfConfig cfg = tiny_cfg();
  DvbfModel model = DvbfModel::create(cfg, 3);
  for (int i = 0; i < cfg.n_sensors; ++i)
    force_sigma(model.params, "enc" + std::to_string(i), cfg.enc_dims(), 1e6);

  Rng rng(4);
  RawFetch fetch{model.params};
  const std::vector<double> z(static_cast<std::size_t>(cfg.latent_dim), 0.2);
  const auto ps = posterior_step(fetch, cfg, z, random_frame(rng, 12), {0.1, -0.2, 0.3});
  for (int k = 0; k < cfg.latent_dim; ++k) {
    CHECK(ps.posterior.mu[static_cast<std::size_t>(k)] ==
          doctest::Approx(ps.prior.mu[static_cast<std::size_t>(k)]).epsilon(1e-3));
    CHECK(ps.posterior.sigma[static_cast<std::size_t>(k)] ==
          doctest::Approx(ps.prior.sigma[static_cast<std::size_t>(k)]).epsilon(1e-3));
  }
}

TEST_CASE("posterior_step: flat prior defers to the fused measurement") {
  DvbfConfig cfg = tiny_cfg();
  DvbfModel model = DvbfModel::create(cfg, 5);
  force_sigma(model.params, "trans", cfg.trans_dims(), 1e6);

  Rng rng(6);
  RawFetch fetch{model.params};
  const std::vector<double> z(static_cast<std::size_t>(cfg.latent_dim), -0.1);
  const auto ps = posterior_step(fetch, cfg, z, random_frame(rng, 12), {0.0, 0.1, 0.2});
  for (int k = 0; k < cfg.latent_dim; ++k) {
    CHECK(ps.posterior.mu[static_cast<std::size_t>(k)] ==
          doctest::Approx(ps.q_meas.mu[static_cast<std::size_t>(k)]).epsilon(1e-3));
    CHECK(ps.posterior.sigma[static_cast<std::size_t>(k)] ==
          doctest::Approx(ps.q_meas.sigma[static_cast<std::size_t>(k)]).epsilon(1e-3));
  }
}

TEST_CASE("posterior_step equals one flat fusion of all factors") {
  DvbfConfig cfg = tiny_cfg();
  DvbfModel model = DvbfModel::create(cfg, 7);
  Rng rng(8);
  RawFetch fetch{model.params};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> z(static_cast<std::size_t>(cfg.latent_dim));
    for (auto& v : z) v = rng.uniform(-1.0, 1.0);
    const auto ps = posterior_step(fetch, cfg, z, random_frame(rng, 12),
                                   {rng.uniform(-1.0, 1.0), 0.0, 0.5});
    std::vector<DiagGaussian> flat = ps.per_sensor;
    flat.push_back(ps.prior);
    const auto direct = fuse_gaussians(flat);
    for (int k = 0; k < cfg.latent_dim; ++k) {
      CHECK(std::fabs(direct.mu[static_cast<std::size_t>(k)] - ps.posterior.mu[static_cast<std::size_t>(k)]) < 1e-10);
      CHECK(std::fabs(direct.sigma[static_cast<std::size_t>(k)] - ps.posterior.sigma[static_cast<std::size_t>(k)]) < 1e-10);
    }
  }
}

TEST_CASE("elbo: flat decoders reduce to normalization minus initial KL") {
  DvbfConfig cfg = tiny_cfg();
  DvbfModel model = DvbfModel::create(cfg, 9);
  for (int i = 0; i < cfg.n_sensors; ++i)
    force_sigma(model.params, "decx" + std::to_string(i), cfg.dec_x_dims(), 1e6);
  force_sigma(model.params, "decy", cfg.dec_y_dims(), 1e6);

  Rng rng(10);
  const auto steps = random_steps(rng, cfg, 1);
  const auto eps = detail::draw_noise(rng, 1, cfg.latent_dim);

  RawFetch fetch{model.params};
  ElboTerms terms;
  elbo(fetch, cfg, steps, eps, &terms);

  // reconstruction collapses to -(log sigma + log sqrt(2pi)) per channel
  const double sigma = softplus(1e6) + 1e-4;
  const double per_channel = -std::log(sigma) - 0.5 * kLog2Pi;
  const double expected_recon = (cfg.n_sensors * 3 + 6) * per_channel;

  const auto q1 = gaussian_head(
      mlp_forward(fetch, "init", cfg.init_dims(), std::vector<double>(steps[0].x)));
  DiagGaussian std_normal;
  std_normal.mu.assign(static_cast<std::size_t>(cfg.latent_dim), 0.0);
  std_normal.sigma.assign(static_cast<std::size_t>(cfg.latent_dim), 1.0);
  const double expected = expected_recon - kl_diag(q1, std_normal);

  CHECK(terms.elbo == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("elbo with frozen noise is deterministic") {
  DvbfConfig cfg = tiny_cfg();
  DvbfModel model = DvbfModel::create(cfg, 11);
  Rng rng(12);
  const auto steps = random_steps(rng, cfg, 5);
  const auto eps = detail::draw_noise(rng, 5, cfg.latent_dim);
  RawFetch fetch{model.params};
  const auto r1 = elbo(fetch, cfg, steps, eps);
  const auto r2 = elbo(fetch, cfg, steps, eps);
  CHECK(r1.elbo == r2.elbo);
  CHECK(r1.penalty == r2.penalty);
}

TEST_CASE("elbo gradient matches finite differences with frozen noise") {
  DvbfConfig cfg = tiny_cfg();
  DvbfModel model = DvbfModel::create(cfg, 13);
  Rng rng(14);
  const auto steps = random_steps(rng, cfg, 3);
  const auto eps = detail::draw_noise(rng, 3, cfg.latent_dim);

  const auto build = [&](Tape&, Binding& binding) {
    TapeFetch fetch{binding};
    return elbo(fetch, cfg, steps, eps).elbo;
  };
  const auto plain = [&](const ParamStore& store) {
    RawFetch fetch{store};
    return elbo(fetch, cfg, steps, eps).elbo;
  };
  const auto report = check_gradients(model.params, build, plain);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("constrained_loss identities") {
  DvbfConfig cfg = tiny_cfg();
  DvbfModel model = DvbfModel::create(cfg, 15);
  Rng rng(16);
  const auto steps = random_steps(rng, cfg, 4);
  const auto eps = detail::draw_noise(rng, 4, cfg.latent_dim);
  RawFetch fetch{model.params};

  DvbfConfig zero_alpha = cfg;
  zero_alpha.alpha = 0.0;
  const auto r = elbo(fetch, cfg, steps, eps);
  CHECK(constrained_loss(fetch, zero_alpha, steps, eps) == -r.elbo);

  DvbfConfig strong = cfg;
  strong.alpha = 0.25;
  const double loss = constrained_loss(fetch, strong, steps, eps);
  CHECK(std::fabs((loss - (-r.elbo)) - strong.alpha * r.penalty) < 1e-12);
  CHECK(r.penalty > 0.0);
}

TEST_CASE("reparameterized gradient of E[z^2] matches (2mu, 2sigma)") {
  ParamStore store;
  store.create("mu", {1}) = {0.7};
  store.create("sigma", {1}) = {0.9};

  const int n = 100000;
  Rng rng(17);
  std::vector<double> eps(static_cast<std::size_t>(n));
  for (auto& e : eps) e = rng.gaussian();

  Tape tape;
  Binding binding(tape, store);
  const Var mu = binding.get("mu")[0];
  const Var sigma = binding.get("sigma")[0];
  Var acc = tape.leaf(0.0);
  for (int i = 0; i < n; ++i) acc = acc + square(mu + sigma * eps[static_cast<std::size_t>(i)]);
  tape.backward(acc / static_cast<double>(n));
  binding.add_grads();

  // gradient samples: d z^2/d mu = 2z, d z^2/d sigma = 2 z eps
  double gm = 0.0, gm2 = 0.0, gs = 0.0, gs2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = 0.7 + 0.9 * eps[static_cast<std::size_t>(i)];
    const double dmu = 2.0 * z;
    const double dsg = 2.0 * z * eps[static_cast<std::size_t>(i)];
    gm += dmu;
    gm2 += dmu * dmu;
    gs += dsg;
    gs2 += dsg * dsg;
  }
  gm /= n;
  gs /= n;
  const double se_mu = std::sqrt((gm2 / n - gm * gm) / n);
  const double se_sg = std::sqrt((gs2 / n - gs * gs) / n);

  CHECK(store.at("mu").grad[0] == doctest::Approx(gm).epsilon(1e-10));
  CHECK(store.at("sigma").grad[0] == doctest::Approx(gs).epsilon(1e-10));
  CHECK(std::fabs(store.at("mu").grad[0] - 2.0 * 0.7) < 3.0 * se_mu);
  CHECK(std::fabs(store.at("sigma").grad[0] - 2.0 * 0.9) < 3.0 * se_sg);
}

TEST_CASE("elbo stays below the exact Kalman log likelihood") {
  Rng rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    Lgssm g;
    g.a = rng.uniform(-0.95, 0.95);
    g.b = rng.uniform(-1.0, 1.0);
    g.c = rng.uniform(0.3, 2.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    g.q = rng.uniform(0.2, 1.5);
    g.r = rng.uniform(0.2, 1.5);
    g.m0 = rng.uniform(-1.0, 1.0);
    g.s0 = rng.uniform(0.3, 1.5);
    const int T = 8;
    std::vector<double> u(T), x(T);
    double z = g.m0 + g.s0 * rng.gaussian();
    for (int t = 0; t < T; ++t) {
      u[static_cast<std::size_t>(t)] = rng.uniform(-1.0, 1.0);
      if (t > 0) z = g.a * z + g.b * u[static_cast<std::size_t>(t)] + g.q * rng.gaussian();
      x[static_cast<std::size_t>(t)] = g.c * z + g.r * rng.gaussian();
    }
    const auto kr = kalman_smoother(g, u, x);
    const double bound = lgssm_elbo(g, u, x, kr);
    CHECK(bound <= kr.loglik + 1e-9);

    // T = 1 is tight: the smoother marginal is the exact posterior
    const std::vector<double> u1(1, 0.0), x1(1, x[0]);
    const auto kr1 = kalman_smoother(g, u1, x1);
    CHECK(lgssm_elbo(g, u1, x1, kr1) == doctest::Approx(kr1.loglik).epsilon(1e-9));
  }
}

TEST_CASE("filter_init reproduces the frozen regression vector") {
  DvbfConfig cfg;  // full-size defaults
  const DvbfModel model = DvbfModel::create(cfg, 20250808);
  const SensorFrame f = read_sensors(SensorRig::default_rig(), Rotation{});
  std::vector<double> x = f.flat();
  for (auto& v : x) v /= 0.0015;

  const double golden_mu[8] = {
      -0.80701921855246805, 0.79376167581247281, 0.8136252919750544,
      -0.61601374225251759, -0.9063815583577125, -0.32814191377970503,
      0.24949615881987255,  0.72429794299349914};
  const double golden_sigma[8] = {
      0.83165685815986956, 0.93195483054922823, 0.41749534492901763,
      0.63539913197765785, 0.82762153799577742, 0.72655912041781934,
      1.0947354278220112,  0.74601562891321849};

  const FilterState st = filter_init(model, x);
  for (int k = 0; k < 8; ++k) {
    CHECK(st.posterior.mu[static_cast<std::size_t>(k)] == doctest::Approx(golden_mu[k]).epsilon(1e-14));
    CHECK(st.posterior.sigma[static_cast<std::size_t>(k)] == doctest::Approx(golden_sigma[k]).epsilon(1e-14));
  }

  const FilterState again = filter_init(model, x);
  CHECK(again.posterior.mu == st.posterior.mu);

  // standardized zeros stay finite
  const FilterState zero = filter_init(model, std::vector<double>(12, 0.0));
  for (double v : zero.posterior.mu) CHECK(std::isfinite(v));
  for (double v : zero.posterior.sigma) CHECK(v > 0.0);
}

TEST_CASE("filter converges on a constant input stream") {
  DvbfConfig cfg = tiny_cfg();
  const DvbfModel model = DvbfModel::create(cfg, 21);
  Rng rng(22);
  const auto x = random_frame(rng, 12);
  const std::array<double, 3> u{0.1, -0.3, 0.2};

  FilterState state = filter_init(model, x);
  Rotation prev_pose = decode_pose(model, state.posterior.mu).pose;
  double last_delta = 1e9;
  for (int t = 0; t < 80; ++t) {
    const auto out = filter_step(model, state, x, u);
    last_delta = geodesic_angle(prev_pose, out.pose);
    prev_pose = out.pose;
  }
  CHECK(last_delta < 1e-4);
}

TEST_CASE("fusion damps a single corrupted sensor") {
  DvbfConfig cfg = tiny_cfg();
  DvbfModel model = DvbfModel::create(cfg, 23);
  Rng rng(24);
  RawFetch fetch{model.params};
  const std::vector<double> z(static_cast<std::size_t>(cfg.latent_dim), 0.0);
  const std::array<double, 3> u{0.0, 0.0, 0.0};
  const auto x = random_frame(rng, 12);

  auto spiked = x;
  for (int c = 0; c < 3; ++c) spiked[static_cast<std::size_t>(c)] += 5.0;

  const auto clean = posterior_step(fetch, cfg, z, x, std::vector<double>(u.begin(), u.end()));
  const auto corrupt = posterior_step(fetch, cfg, z, spiked, std::vector<double>(u.begin(), u.end()));

  for (int k = 0; k < cfg.latent_dim; ++k) {
    const double sensor_move =
        std::fabs(corrupt.per_sensor[0].mu[static_cast<std::size_t>(k)] -
                  clean.per_sensor[0].mu[static_cast<std::size_t>(k)]);
    const double fused_move = std::fabs(corrupt.posterior.mu[static_cast<std::size_t>(k)] -
                                        clean.posterior.mu[static_cast<std::size_t>(k)]);
    CHECK(fused_move <= sensor_move + 1e-12);
  }
}

TEST_CASE("filtering the same stream twice is bit-identical") {
  DvbfConfig cfg = tiny_cfg();
  const DvbfModel model = DvbfModel::create(cfg, 25);
  Rng rng(26);
  std::vector<std::vector<double>> xs;
  for (int t = 0; t < 30; ++t) xs.push_back(random_frame(rng, 12));

  const auto run = [&] {
    std::vector<double> flat;
    FilterState state = filter_init(model, xs[0]);
    for (std::size_t t = 1; t < xs.size(); ++t) {
      const auto out = filter_step(model, state, xs[t], {0.1, 0.2, 0.3});
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) flat.push_back(out.pose.m(i, j));
    }
    return flat;
  };
  CHECK(run() == run());
}

TEST_CASE("train_dvbf: zero epochs returns initialization, seeds reproduce") {
  const int channels = 12;
  std::vector<Sample> samples;
  Rng rng(27);
  for (int t = 0; t < 200; ++t) {
    Sample s;
    s.t = t;
    s.u = EulerAngles{0.1 * std::sin(0.05 * t), 0.0, 0.0};
    s.y = euler_to_rotation(s.u);
    s.x = random_frame(rng, channels);
    samples.push_back(std::move(s));
  }

  DvbfConfig cfg = tiny_cfg();
  DvbfTrainConfig tc;
  tc.epochs = 0;
  tc.seq_len = 16;
  tc.seed = 31;
  const DvbfModel zero = train_dvbf(samples, samples, StandardStats{}, cfg, tc);
  const DvbfModel fresh = DvbfModel::create(cfg, 31);
  CHECK(zero.params.at("trans.W0").value == fresh.params.at("trans.W0").value);

  tc.epochs = 2;
  std::vector<DvbfEpochLog> log1, log2;
  const DvbfModel a = train_dvbf(samples, samples, StandardStats{}, cfg, tc, &log1);
  const DvbfModel b = train_dvbf(samples, samples, StandardStats{}, cfg, tc, &log2);
  CHECK(a.params.at("trans.W0").value == b.params.at("trans.W0").value);
  CHECK(a.params.at("enc0.W0").value == b.params.at("enc0.W0").value);
  REQUIRE(log1.size() == 2);
  CHECK(log1[0].train_loss == log2[0].train_loss);
}

TEST_CASE("alpha penalty shrinks per-sensor encoder means") {
  // identical data and seeds; only alpha differs
  const int channels = 12;
  std::vector<Sample> samples;
  Rng rng(37);
  for (int t = 0; t < 320; ++t) {
    Sample s;
    s.t = t;
    const double a = 0.3 * std::sin(0.04 * t);
    s.u = EulerAngles{a, 0.2 * std::cos(0.03 * t), -a};
    s.y = euler_to_rotation(s.u);
    s.x.resize(channels);
    for (int c = 0; c < channels; ++c)
      s.x[static_cast<std::size_t>(c)] = std::sin(0.04 * t + 0.5 * c) + 0.02 * rng.gaussian();
    samples.push_back(std::move(s));
  }

  DvbfConfig cfg = tiny_cfg();
  DvbfTrainConfig tc;
  tc.epochs = 12;
  tc.seq_len = 16;
  tc.batch = 4;
  tc.seed = 5;

  cfg.alpha = 0.0;
  std::vector<DvbfEpochLog> log_free;
  train_dvbf(samples, samples, StandardStats{}, cfg, tc, &log_free);

  cfg.alpha = 1e3;
  std::vector<DvbfEpochLog> log_pinned;
  train_dvbf(samples, samples, StandardStats{}, cfg, tc, &log_pinned);

  CHECK(log_pinned.back().val_penalty < log_free.back().val_penalty);
}

TEST_CASE("dvbf persistence round trips") {
  DvbfConfig cfg = tiny_cfg();
  DvbfModel model = DvbfModel::create(cfg, 41);
  model.stats.mean.assign(12, -0.5);
  model.stats.stdev.assign(12, 1.25);

  std::stringstream ss;
  save_dvbf(ss, model);
  const DvbfModel loaded = load_dvbf(ss);
  CHECK(loaded.cfg.latent_dim == cfg.latent_dim);
  CHECK(loaded.cfg.alpha == cfg.alpha);
  CHECK(loaded.stats.stdev == model.stats.stdev);
  CHECK(loaded.params.at("decy.W0").value == model.params.at("decy.W0").value);

  Rng rng(42);
  const auto x = random_frame(rng, 12);
  const FilterState s1 = filter_init(model, x);
  const FilterState s2 = filter_init(loaded, x);
  CHECK(s1.posterior.mu == s2.posterior.mu);
}

TEST_CASE("filter stream emits one row per input row, bit-identically") {
  DvbfConfig cfg = tiny_cfg();
  const DvbfModel model = DvbfModel::create(cfg, 43);

  std::ostringstream csv;
  Rng rng(44);
  std::vector<Sample> samples;
  for (int t = 0; t < 40; ++t) {
    Sample s;
    s.t = t;
    s.u = EulerAngles{0.1, 0.2, 0.3};
    s.y = Rotation{};
    s.x = random_frame(rng, 12);
    samples.push_back(s);
  }
  write_dataset_csv(csv, samples, 4);
  const std::string input = csv.str();

  const auto run = [&] {
    std::istringstream in(input);
    std::ostringstream out, err;
    const StreamResult r = run_filter_stream(model, in, out, err);
    CHECK(r.rows_in == 40);
    CHECK(r.rows_out == 40);
    CHECK(r.rows_skipped == 0);
    CHECK(err.str().empty());
    return out.str();
  };
  const std::string first = run();
  CHECK(first == run());

  // malformed rows are skipped with a note, the rest still flows
  std::string broken = input;
  broken.insert(broken.find('\n', broken.find("\n0,") + 1) + 1, "oops,not,a,row\n");
  std::istringstream in(broken);
  std::ostringstream out, err;
  const StreamResult r = run_filter_stream(model, in, out, err);
  CHECK(r.rows_in == 41);
  CHECK(r.rows_out == 40);
  CHECK(r.rows_skipped == 1);
  CHECK(err.str().find("row") != std::string::npos);
}
