#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "magpose/dataset.hpp"
#include "magpose/gaussian.hpp"
#include "magpose/nets.hpp"
#include "magpose/rotation.hpp"
#include "magpose/sim.hpp"

namespace magpose {

struct DvbfConfig {
  int n_sensors = 4;
  int latent_dim = 8;
  int enc_hidden = 32;
  int trans_hidden = 32;
  int dec_hidden = 32;
  int init_hidden = 32;
  double alpha = 1e-3;  // soft-constraint weight on per-sensor encoder means

  std::vector<int> enc_dims() const { return {3, enc_hidden, 2 * latent_dim}; }
  std::vector<int> init_dims() const { return {n_sensors * 3, init_hidden, 2 * latent_dim}; }
  std::vector<int> trans_dims() const {
    return {latent_dim + 3, trans_hidden, trans_hidden, 2 * latent_dim};
  }
  std::vector<int> dec_x_dims() const { return {latent_dim, dec_hidden, 6}; }
  std::vector<int> dec_y_dims() const { return {latent_dim, dec_hidden, 12}; }
};

// Fusion deep variational Bayes filter. Per-sensor recognition nets emit
// Gaussians over the latent, fused by product of Gaussians together with a
// learned Gaussian transition; decoders reconstruct the readings and the
// pose's 6D encoding.
struct DvbfModel {
  DvbfConfig cfg;
  ParamStore params;
  StandardStats stats;

  static DvbfModel create(const DvbfConfig& cfg, std::uint64_t seed) {
    DvbfModel model;
    model.cfg = cfg;
    Rng rng(seed);
    for (int i = 0; i < cfg.n_sensors; ++i)
      register_mlp(model.params, "enc" + std::to_string(i), cfg.enc_dims(), rng);
    register_mlp(model.params, "init", cfg.init_dims(), rng);
    register_mlp(model.params, "trans", cfg.trans_dims(), rng);
    for (int i = 0; i < cfg.n_sensors; ++i)
      register_mlp(model.params, "decx" + std::to_string(i), cfg.dec_x_dims(), rng);
    register_mlp(model.params, "decy", cfg.dec_y_dims(), rng);
    return model;
  }
};

template <class S>
struct PosteriorStepT {
  DiagGaussianT<S> posterior;
  DiagGaussianT<S> prior;   // q_trans, also the KL prior at this step
  DiagGaussianT<S> q_meas;  // fused measurement factor
  std::vector<DiagGaussianT<S>> per_sensor;
};

// One Bayesian-filter style update: fuse the per-sensor recognition
// Gaussians into q_meas and multiply with the transition factor,
//   q(z_t | .) proportional to q_meas(z_t | x_t) * q_trans(z_t | z_{t-1}, u_t).
template <class Fetch, class S = typename std::decay_t<Fetch>::Scalar>
PosteriorStepT<S> posterior_step(Fetch&& fetch, const DvbfConfig& cfg,
                                 const std::vector<S>& prev_z,
                                 const std::vector<S>& x_t, const std::vector<S>& u_t) {
  if (static_cast<int>(x_t.size()) != cfg.n_sensors * 3 || u_t.size() != 3 ||
      static_cast<int>(prev_z.size()) != cfg.latent_dim)
    throw ShapeMismatch("posterior_step: input shape mismatch");
  PosteriorStepT<S> out;
  out.per_sensor.reserve(static_cast<std::size_t>(cfg.n_sensors));
  for (int i = 0; i < cfg.n_sensors; ++i) {
    std::vector<S> reading(x_t.begin() + i * 3, x_t.begin() + i * 3 + 3);
    out.per_sensor.push_back(gaussian_head(
        mlp_forward(fetch, "enc" + std::to_string(i), cfg.enc_dims(), std::move(reading))));
  }
  out.q_meas = fuse_gaussians(out.per_sensor);
  out.prior = gaussian_head(
      mlp_forward(fetch, "trans", cfg.trans_dims(), concat(prev_z, u_t)));
  out.posterior = fuse_gaussians(std::vector<DiagGaussianT<S>>{out.q_meas, out.prior});
  return out;
}

// Observations for one step of an ELBO evaluation.
struct DvbfStep {
  std::vector<double> x;        // standardized readings, n_sensors x 3
  std::array<double, 3> u{};    // joint target
  std::array<double, 6> y{};    // 6D encoding of the ground-truth pose
};

struct ElboTerms {
  double recon_x = 0.0;
  double recon_y = 0.0;
  double kl = 0.0;
  double penalty = 0.0;  // sum over steps and sensors of |mu_i(x_t)|^2
  double elbo = 0.0;
};

inline double scalar_value(double v) { return v; }
inline double scalar_value(Var v) { return v.value(); }

template <class S>
struct ElboResultT {
  S elbo;
  S penalty;
};

// Sequence ELBO with reparameterized sampling:
//   sum_t [log p(x_t|z_t) + log p(y_t|z_t)] - sum_t KL(posterior_t || prior_t)
// with prior_1 = N(0, I) and prior_t the transition Gaussian. `eps` carries
// the frozen standard-normal draws, one latent_dim vector per step.
template <class Fetch, class S = typename std::decay_t<Fetch>::Scalar>
ElboResultT<S> elbo(Fetch&& fetch, const DvbfConfig& cfg,
                    const std::vector<DvbfStep>& steps,
                    const std::vector<std::vector<double>>& eps,
                    ElboTerms* terms = nullptr) {
  const std::size_t T = steps.size();
  if (T == 0) throw Error("elbo: empty sequence");
  if (eps.size() != T) throw ShapeMismatch("elbo: noise length mismatch");
  const int d = cfg.latent_dim;

  const auto sample = [&](const DiagGaussianT<S>& g, const std::vector<double>& e) {
    std::vector<S> z;
    z.reserve(static_cast<std::size_t>(d));
    for (int k = 0; k < d; ++k) z.push_back(g.mu[static_cast<std::size_t>(k)] +
                                            g.sigma[static_cast<std::size_t>(k)] * e[static_cast<std::size_t>(k)]);
    return z;
  };
  const auto recon = [&](const DvbfStep& step, const std::vector<S>& z, S& rx, S& ry) {
    for (int i = 0; i < cfg.n_sensors; ++i) {
      const std::vector<double> xi(step.x.begin() + i * 3, step.x.begin() + i * 3 + 3);
      const auto g = gaussian_head(
          mlp_forward(fetch, "decx" + std::to_string(i), cfg.dec_x_dims(), std::vector<S>(z)));
      rx = rx + gaussian_log_likelihood(xi, g);
    }
    const auto gy = gaussian_head(mlp_forward(fetch, "decy", cfg.dec_y_dims(), std::vector<S>(z)));
    ry = ry + gaussian_log_likelihood(std::vector<double>(step.y.begin(), step.y.end()), gy);
  };

  DiagGaussianT<S> q1 = gaussian_head(mlp_forward(fetch, "init", cfg.init_dims(), fetch.lift(steps[0].x)));
  DiagGaussianT<S> std_normal;
  std_normal.mu = fetch.lift(std::vector<double>(static_cast<std::size_t>(d), 0.0));
  std_normal.sigma = fetch.lift(std::vector<double>(static_cast<std::size_t>(d), 1.0));

  S kl_total = kl_diag(q1, std_normal);
  std::vector<S> z = sample(q1, eps[0]);
  S recon_x = kl_total - kl_total;  // typed zero
  S recon_y = recon_x;
  S penalty = recon_x;
  recon(steps[0], z, recon_x, recon_y);

  for (std::size_t t = 1; t < T; ++t) {
    const auto ps = posterior_step(fetch, cfg,  z, fetch.lift(steps[t].x),
                                   fetch.lift(std::vector<double>(steps[t].u.begin(), steps[t].u.end())));
    kl_total = kl_total + kl_diag(ps.posterior, ps.prior);
    for (const auto& qi : ps.per_sensor)
      for (int k = 0; k < d; ++k) penalty = penalty + square(qi.mu[static_cast<std::size_t>(k)]);
    z = sample(ps.posterior, eps[t]);
    recon(steps[t], z, recon_x, recon_y);
  }

  ElboResultT<S> result{recon_x + recon_y - kl_total, penalty};
  if (terms) {
    terms->recon_x = scalar_value(recon_x);
    terms->recon_y = scalar_value(recon_y);
    terms->kl = scalar_value(kl_total);
    terms->penalty = scalar_value(penalty);
    terms->elbo = scalar_value(result.elbo);
  }
  return result;
}

// Training objective: -ELBO plus the soft constraint that keeps per-sensor
// encoder means near zero so fusion penalizes the corrupted sensor.
template <class Fetch, class S = typename std::decay_t<Fetch>::Scalar>
S constrained_loss(Fetch&& fetch, const DvbfConfig& cfg, const std::vector<DvbfStep>& steps,
                   const std::vector<std::vector<double>>& eps, ElboTerms* terms = nullptr) {
  const auto r = elbo(fetch, cfg, steps, eps, terms);
  return (0.0 - r.elbo) + cfg.alpha * r.penalty;
}

// ---- online filtering ----

struct FilterState {
  DiagGaussian posterior;  // over the latent
  long step = 0;
};

struct FilterOutput {
  Rotation pose;
  DiagGaussian pose_uncertainty;  // dec_y Gaussian over the 6D encoding
};

inline FilterOutput decode_pose(const DvbfModel& model, const std::vector<double>& z_mean) {
  RawFetch fetch{model.params};
  FilterOutput out;
  out.pose_uncertainty =
      gaussian_head(mlp_forward(fetch, "decy", model.cfg.dec_y_dims(), std::vector<double>(z_mean)));
  SixD v;
  for (int k = 0; k < 6; ++k) v[k] = out.pose_uncertainty.mu[static_cast<std::size_t>(k)];
  try {
    out.pose = sixd_to_rotation(v);
  } catch (const DegenerateSixD& e) {
    throw EstimationFailed(std::string("dvbf decode: ") + e.what());
  }
  return out;
}

inline FilterState filter_init(const DvbfModel& model, const std::vector<double>& x1) {
  if (static_cast<int>(x1.size()) != model.cfg.n_sensors * 3)
    throw ShapeMismatch("filter_init: frame size mismatch");
  RawFetch fetch{model.params};
  FilterState state;
  state.posterior =
      gaussian_head(mlp_forward(fetch, "init", model.cfg.init_dims(), std::vector<double>(x1)));
  state.step = 1;
  return state;
}

// Deterministic filtering update: the posterior mean (never a sample) seeds
// the transition, and the pose decodes from the new posterior mean.
inline FilterOutput filter_step(const DvbfModel& model, FilterState& state,
                                const std::vector<double>& x_t,
                                const std::array<double, 3>& u_t) {
  RawFetch fetch{model.params};
  const auto ps = posterior_step(fetch, model.cfg, state.posterior.mu, x_t,
                                 std::vector<double>(u_t.begin(), u_t.end()));
  state.posterior = ps.posterior;
  ++state.step;
  return decode_pose(model, state.posterior.mu);
}

// ---- training ----

struct DvbfTrainConfig {
  int epochs = 60;
  int batch = 16;
  int seq_len = 32;
  std::uint64_t seed = 1;
  AdamConfig adam;
};

struct DvbfEpochLog {
  int epoch = 0;
  double train_loss = 0.0;      // per-step constrained loss
  double val_elbo = 0.0;        // per-step, fixed evaluation noise
  double val_penalty = 0.0;     // mean per-step sum of |mu_i|^2
  double val_euler_mse = 0.0;   // filtering the validation split
  double val_euler_rmse = 0.0;
  double val_geodesic = 0.0;
  double wall_seconds = 0.0;
};

namespace detail {

inline std::vector<DvbfStep> make_sequence(const std::vector<Sample>& samples,
                                           std::size_t start, int seq_len) {
  std::vector<DvbfStep> steps;
  steps.reserve(static_cast<std::size_t>(seq_len));
  for (int k = 0; k < seq_len; ++k) {
    const Sample& s = samples[start + static_cast<std::size_t>(k)];
    DvbfStep step;
    step.x = s.x;
    step.u = {s.u.rx, s.u.ry, s.u.rz};
    step.y = rotation_to_sixd(s.y).v;
    steps.push_back(std::move(step));
  }
  return steps;
}

inline std::vector<std::vector<double>> draw_noise(Rng& rng, int T, int d) {
  std::vector<std::vector<double>> eps(static_cast<std::size_t>(T));
  for (auto& e : eps) {
    e.resize(static_cast<std::size_t>(d));
    for (auto& v : e) v = rng.gaussian();
  }
  return eps;
}

}  // namespace detail

inline DvbfModel train_dvbf(const std::vector<Sample>& train_split,
                            const std::vector<Sample>& val_split,
                            const StandardStats& stats, const DvbfConfig& cfg,
                            const DvbfTrainConfig& tc,
                            std::vector<DvbfEpochLog>* log = nullptr,
                            const std::function<void(const DvbfEpochLog&)>& on_epoch = {}) {
  if (static_cast<int>(train_split.size()) < tc.seq_len)
    throw Error("train_dvbf: dataset shorter than one sequence");
  DvbfModel model = DvbfModel::create(cfg, tc.seed);
  model.stats = stats;
  Rng rng(tc.seed ^ 0x2545f4914f6cdd1dULL);

  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + static_cast<std::size_t>(tc.seq_len) <= train_split.size();
       s += static_cast<std::size_t>(tc.seq_len))
    starts.push_back(s);

  const auto t0 = std::chrono::steady_clock::now();
  Tape tape;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    rng.shuffle(starts);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t at = 0; at < starts.size(); at += static_cast<std::size_t>(tc.batch)) {
      const std::size_t stop = std::min(starts.size(), at + static_cast<std::size_t>(tc.batch));
      tape.clear();
      Binding binding(tape, model.params);
      TapeFetch fetch{binding};
      Var loss = tape.leaf(0.0);
      for (std::size_t s = at; s < stop; ++s) {
        const auto steps = detail::make_sequence(train_split, starts[s], tc.seq_len);
        const auto eps = detail::draw_noise(rng, tc.seq_len, cfg.latent_dim);
        loss = loss + constrained_loss(fetch, cfg, steps, eps);
      }
      loss = loss / static_cast<double>(stop - at);
      tape.backward(loss);
      binding.add_grads();
      model.params.adam_step(tc.adam);
      epoch_loss += loss.value();
      ++batches;
    }

    if (log || on_epoch) {
      DvbfEpochLog entry;
      entry.epoch = epoch;
      entry.train_loss = batches ? epoch_loss / static_cast<double>(batches) / tc.seq_len : 0.0;

      // Validation ELBO on tiled subsequences with per-epoch identical noise.
      RawFetch raw{model.params};
      Rng val_rng(tc.seed ^ 0xd1342543de82ef95ULL);
      double vsum = 0.0, psum = 0.0;
      std::size_t vcount = 0;
      for (std::size_t s = 0; s + static_cast<std::size_t>(tc.seq_len) <= val_split.size();
           s += static_cast<std::size_t>(tc.seq_len)) {
        const auto steps = detail::make_sequence(val_split, s, tc.seq_len);
        const auto eps = detail::draw_noise(val_rng, tc.seq_len, cfg.latent_dim);
        ElboTerms terms;
        elbo(raw, cfg, steps, eps, &terms);
        vsum += terms.elbo;
        psum += terms.penalty;
        ++vcount;
      }
      if (vcount) {
        entry.val_elbo = vsum / static_cast<double>(vcount) / tc.seq_len;
        entry.val_penalty = psum / static_cast<double>(vcount) / tc.seq_len;
      }

      // Filtering accuracy on the validation split.
      if (val_split.size() > 1) {
        FilterState fs = filter_init(model, val_split[0].x);
        double euler = 0.0, geo = 0.0;
        int n = 0;
        for (std::size_t t = 1; t < val_split.size(); ++t) {
          const auto out = filter_step(model, fs, val_split[t].x,
                                       {val_split[t].u.rx, val_split[t].u.ry, val_split[t].u.rz});
          euler += mean_sq_euler_error(rotation_to_euler(out.pose),
                                                  rotation_to_euler(val_split[t].y));
          geo += geodesic_angle(out.pose, val_split[t].y);
          ++n;
        }
        entry.val_euler_mse = euler / n;
        entry.val_euler_rmse = std::sqrt(entry.val_euler_mse);
        entry.val_geodesic = geo / n;
      }
      entry.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (log) log->push_back(entry);
      if (on_epoch) on_epoch(entry);
    }
  }
  return model;
}

// ---- streaming mode ----

inline constexpr const char* kStreamFormatLine = "# magpose-stream-v1";

struct StreamResult {
  long rows_in = 0;
  long rows_out = 0;
  long rows_skipped = 0;
};

// Consumes dataset-schema CSV rows (the y columns are optional and ignored)
// from `in` and writes one pose row per input row to `out`, flushed
// immediately: t, Euler radians, the 9 matrix entries, and the per-dimension
// posterior sigma over the latent. Malformed rows are reported to `err` with
// their row number and skipped.
inline StreamResult run_filter_stream(const DvbfModel& model, std::istream& in,
                                      std::ostream& out, std::ostream& err) {
  std::string line;
  if (!std::getline(in, line) || line != kDatasetFormatLine)
    throw VersionMismatch("filter stream: unsupported format line");
  if (!std::getline(in, line)) throw ParseError("filter stream: missing header row");
  int columns = 1;
  for (char ch : line) columns += ch == ',' ? 1 : 0;
  const int channels = model.cfg.n_sensors * 3;
  bool has_y;
  if (columns == 4 + channels) {
    has_y = false;
  } else if (columns == 13 + channels) {
    has_y = true;
  } else {
    throw ParseError("filter stream: column count matches neither schema");
  }

  out << kStreamFormatLine << "\n";
  out << "t,e_rx,e_ry,e_rz";
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out << ",r" << i << j;
  for (int k = 0; k < model.cfg.latent_dim; ++k) out << ",z_sigma" << k;
  out << "\n";
  out.flush();

  StreamResult result;
  FilterState state;
  bool initialized = false;
  std::vector<double> fields;
  fields.reserve(static_cast<std::size_t>(columns));
  std::string row;
  int row_no = 0;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty()) continue;
    ++result.rows_in;
    fields.clear();
    const char* p = line.c_str();
    bool bad = false;
    while (true) {
      char* stop = nullptr;
      const double v = std::strtod(p, &stop);
      if (stop == p) {
        bad = true;
        break;
      }
      fields.push_back(v);
      p = stop;
      if (*p == ',')
        ++p;
      else if (*p == '\0' || *p == '\r')
        break;
      else {
        bad = true;
        break;
      }
    }
    if (bad || static_cast<int>(fields.size()) != columns) {
      err << "row " << row_no << ": malformed row, skipped\n";
      ++result.rows_skipped;
      continue;
    }
    const long t = static_cast<long>(fields[0]);
    const std::array<double, 3> u{fields[1], fields[2], fields[3]};
    const std::size_t x_at = has_y ? 13 : 4;
    const std::vector<double> x(fields.begin() + static_cast<std::ptrdiff_t>(x_at), fields.end());

    FilterOutput decoded;
    if (!initialized) {
      state = filter_init(model, x);
      initialized = true;
      decoded = decode_pose(model, state.posterior.mu);
    } else {
      decoded = filter_step(model, state, x, u);
    }

    row.clear();
    row += std::to_string(t);
    const EulerAngles e = rotation_to_euler(decoded.pose);
    append_csv_value(row, e.rx);
    append_csv_value(row, e.ry);
    append_csv_value(row, e.rz);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) append_csv_value(row, decoded.pose.m(i, j));
    for (double s : state.posterior.sigma) append_csv_value(row, s);
    out << row << "\n";
    out.flush();
    ++result.rows_out;
  }
  return result;
}

// ---- persistence ----

inline void save_dvbf(std::ostream& os, const DvbfModel& model) {
  std::map<std::string, std::string> meta;
  meta["kind"] = "dvbf";
  meta["n_sensors"] = std::to_string(model.cfg.n_sensors);
  meta["latent_dim"] = std::to_string(model.cfg.latent_dim);
  meta["enc_hidden"] = std::to_string(model.cfg.enc_hidden);
  meta["trans_hidden"] = std::to_string(model.cfg.trans_hidden);
  meta["dec_hidden"] = std::to_string(model.cfg.dec_hidden);
  meta["init_hidden"] = std::to_string(model.cfg.init_hidden);
  meta["alpha"] = doubles_to_string({model.cfg.alpha});
  meta["stats_mean"] = doubles_to_string(model.stats.mean);
  meta["stats_std"] = doubles_to_string(model.stats.stdev);
  model.params.save(os, meta);
}

inline DvbfModel load_dvbf(std::istream& is) {
  std::map<std::string, std::string> meta;
  ParamStore store = ParamStore::load(is, meta);
  if (meta["kind"] != "dvbf") throw ParseError("model file is not a dvbf model");
  DvbfModel model;
  model.cfg.n_sensors = std::stoi(meta.at("n_sensors"));
  model.cfg.latent_dim = std::stoi(meta.at("latent_dim"));
  model.cfg.enc_hidden = std::stoi(meta.at("enc_hidden"));
  model.cfg.trans_hidden = std::stoi(meta.at("trans_hidden"));
  model.cfg.dec_hidden = std::stoi(meta.at("dec_hidden"));
  model.cfg.init_hidden = std::stoi(meta.at("init_hidden"));
  model.cfg.alpha = parse_doubles(meta.at("alpha")).at(0);
  model.stats.mean = parse_doubles(meta.at("stats_mean"));
  model.stats.stdev = parse_doubles(meta.at("stats_std"));
  model.params = std::move(store);
  return model;
}

}  // namespace magpose
