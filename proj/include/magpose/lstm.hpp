#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <type_traits>
#include <vector>

#include "magpose/dataset.hpp"
#include "magpose/nets.hpp"
#include "magpose/rotation.hpp"
#include "magpose/sim.hpp"

namespace magpose {

struct LstmConfig {
  int n_sensors = 4;
  int window = 5;
  int hidden = 32;

  int input_dim() const { return n_sensors * 3; }
};

template <class S>
struct LstmCellStateT {
  std::vector<S> c;  // cell state
  std::vector<S> h;  // cell output
};

using LstmCellState = LstmCellStateT<double>;

// Windowed LSTM regressor: the cell consumes one standardized frame per step
// and a linear readout maps the final h to a 6D rotation encoding.
struct LstmRegressor {
  LstmConfig cfg;
  ParamStore params;
  StandardStats stats;

  static LstmRegressor create(const LstmConfig& cfg, std::uint64_t seed) {
    LstmRegressor model;
    model.cfg = cfg;
    Rng rng(seed);
    const int in = cfg.input_dim() + cfg.hidden;  // gates see concat(x, h)
    for (const char* gate : {"f", "i", "o", "c"}) {
      auto& w = model.params.create(std::string("lstm.W") + gate, {cfg.hidden, in});
      init_xavier(w, in, cfg.hidden, rng);
      model.params.create(std::string("lstm.b") + gate, {cfg.hidden});
    }
    // forget-gate bias +1 keeps early memory open
    for (auto& b : model.params.at("lstm.bf").value) b = 1.0;
    auto& wout = model.params.create("lstm.Wout", {6, cfg.hidden});
    init_xavier(wout, cfg.hidden, 6, rng);
    model.params.create("lstm.bout", {6});
    return model;
  }
};

// One step of the gate equations:
//   f,i,o = sigmoid(affine(x, h)),  c_hat = tanh(affine(x, h)),
//   C_t = C_{t-1} (.) f + c_hat (.) i,  h_t = o (.) tanh(C_t).
template <class Fetch, class S = typename std::decay_t<Fetch>::Scalar>
LstmCellStateT<S> lstm_cell(Fetch&& fetch, const LstmConfig& cfg,
                            const LstmCellStateT<S>& prev, const std::vector<S>& x) {
  const int hidden = cfg.hidden;
  if (static_cast<int>(x.size()) != cfg.input_dim() ||
      static_cast<int>(prev.h.size()) != hidden ||
      static_cast<int>(prev.c.size()) != hidden)
    throw ShapeMismatch("lstm_cell: input or state shape mismatch");
  const std::vector<S> xh = concat(x, prev.h);
  const int in = cfg.input_dim() + hidden;

  auto gate = [&](const char* name) {
    return matvec_affine(fetch(std::string("lstm.W") + name), hidden, in, xh,
                         fetch(std::string("lstm.b") + name));
  };
  std::vector<S> f = gate("f"), i = gate("i"), o = gate("o"), c_hat = gate("c");
  for (int k = 0; k < hidden; ++k) {
    f[k] = sigmoid(f[k]);
    i[k] = sigmoid(i[k]);
    o[k] = sigmoid(o[k]);
    c_hat[k] = tanh(c_hat[k]);
  }

  LstmCellStateT<S> next;
  next.c.reserve(hidden);
  next.h.reserve(hidden);
  for (int k = 0; k < hidden; ++k) {
    next.c.push_back(prev.c[k] * f[k] + c_hat[k] * i[k]);
    next.h.push_back(o[k] * tanh(next.c.back()));
  }
  return next;
}

// Runs the cell over the window from zero state and applies the readout.
template <class Fetch, class S = typename std::decay_t<Fetch>::Scalar>
std::vector<S> lstm_forward_sixd(Fetch&& fetch, const LstmConfig& cfg,
                                 const std::vector<std::vector<double>>& window) {
  if (static_cast<int>(window.size()) != cfg.window)
    throw ShapeMismatch("lstm forward: window length mismatch");
  LstmCellStateT<S> state;
  state.c = fetch.lift(std::vector<double>(static_cast<std::size_t>(cfg.hidden), 0.0));
  state.h = fetch.lift(std::vector<double>(static_cast<std::size_t>(cfg.hidden), 0.0));
  for (const auto& frame : window) state = lstm_cell(fetch, cfg, state, fetch.lift(frame));
  return matvec_affine(fetch("lstm.Wout"), 6, cfg.hidden, state.h, fetch("lstm.bout"));
}

// window holds the most recent cfg.window standardized frames, oldest first.
inline Rotation predict(const LstmRegressor& model,
                        const std::vector<std::vector<double>>& window) {
  RawFetch fetch{model.params};
  const std::vector<double> head = lstm_forward_sixd(fetch, model.cfg, window);
  SixD v;
  for (int k = 0; k < 6; ++k) v[k] = head[static_cast<std::size_t>(k)];
  try {
    return sixd_to_rotation(v);
  } catch (const DegenerateSixD& e) {
    throw EstimationFailed(std::string("lstm predict: ") + e.what());
  }
}

struct TrainConfig {
  int epochs = 30;
  int batch = 64;
  std::uint64_t seed = 1;
  AdamConfig adam;
};


struct LstmEpochLog {
  int epoch = 0;
  double train_mse_sixd = 0.0;
  double val_mse_sixd = 0.0;
  double val_euler_mse = 0.0;   // mean over axes, rad^2, wrap-aware
  double val_euler_rmse = 0.0;  // sqrt of the above
  double val_geodesic = 0.0;    // mean geodesic error, rad
  double wall_seconds = 0.0;
};

namespace detail {

inline std::vector<std::vector<double>> window_frames(const std::vector<Sample>& samples,
                                                      int end, int window) {
  std::vector<std::vector<double>> frames;
  frames.reserve(static_cast<std::size_t>(window));
  for (int k = end - window + 1; k <= end; ++k)
    frames.push_back(samples[static_cast<std::size_t>(k)].x);
  return frames;
}

}  // namespace detail

// Minimizes 6D-encoding MSE over sliding windows with Adam. Deterministic
// for a fixed seed; per-epoch validation is evaluated untaped.
inline LstmRegressor train_lstm(const std::vector<Sample>& train_split,
                                const std::vector<Sample>& val_split,
                                const StandardStats& stats, const LstmConfig& cfg,
                                const TrainConfig& tc,
                                std::vector<LstmEpochLog>* log = nullptr,
                                const std::function<void(const LstmEpochLog&)>& on_epoch = {}) {
  if (static_cast<int>(train_split.size()) < cfg.window + 1)
    throw Error("train_lstm: dataset shorter than window + 1");
  LstmRegressor model = LstmRegressor::create(cfg, tc.seed);
  model.stats = stats;
  Rng rng(tc.seed ^ 0x517cc1b727220a95ULL);

  std::vector<int> ends;
  for (int e = cfg.window - 1; e < static_cast<int>(train_split.size()); ++e)
    ends.push_back(e);

  std::vector<std::array<double, 6>> targets(train_split.size());
  for (std::size_t i = 0; i < train_split.size(); ++i)
    targets[i] = rotation_to_sixd(train_split[i].y).v;

  const auto t0 = std::chrono::steady_clock::now();
  Tape tape;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    rng.shuffle(ends);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t at = 0; at < ends.size(); at += static_cast<std::size_t>(tc.batch)) {
      const std::size_t stop = std::min(ends.size(), at + static_cast<std::size_t>(tc.batch));
      tape.clear();
      Binding binding(tape, model.params);
      TapeFetch fetch{binding};
      Var loss = tape.leaf(0.0);
      for (std::size_t w = at; w < stop; ++w) {
        const int end = ends[w];
        const auto head =
            lstm_forward_sixd(fetch, cfg, detail::window_frames(train_split, end, cfg.window));
        Var werr = tape.leaf(0.0);
        for (int k = 0; k < 6; ++k)
          werr = werr + square(head[static_cast<std::size_t>(k)] -
                               targets[static_cast<std::size_t>(end)][static_cast<std::size_t>(k)]);
        loss = loss + werr / 6.0;
      }
      loss = loss / static_cast<double>(stop - at);
      tape.backward(loss);
      binding.add_grads();
      model.params.adam_step(tc.adam);
      epoch_loss += loss.value();
      ++batches;
    }

    if (log || on_epoch) {
      LstmEpochLog entry;
      entry.epoch = epoch;
      entry.train_mse_sixd = batches ? epoch_loss / static_cast<double>(batches) : 0.0;
      RawFetch raw{model.params};
      double mse6 = 0.0, euler = 0.0, geo = 0.0;
      int n = 0;
      for (int e = cfg.window - 1; e < static_cast<int>(val_split.size()); ++e) {
        const auto head =
            lstm_forward_sixd(raw, cfg, detail::window_frames(val_split, e, cfg.window));
        const auto target = rotation_to_sixd(val_split[static_cast<std::size_t>(e)].y);
        double werr = 0.0;
        for (int k = 0; k < 6; ++k) werr += (head[static_cast<std::size_t>(k)] - target[k]) *
                                            (head[static_cast<std::size_t>(k)] - target[k]);
        mse6 += werr / 6.0;
        SixD v;
        for (int k = 0; k < 6; ++k) v[k] = head[static_cast<std::size_t>(k)];
        const Rotation pred = sixd_to_rotation(v);
        euler += mean_sq_euler_error(rotation_to_euler(pred),
                                                rotation_to_euler(val_split[static_cast<std::size_t>(e)].y));
        geo += geodesic_angle(pred, val_split[static_cast<std::size_t>(e)].y);
        ++n;
      }
      if (n > 0) {
        entry.val_mse_sixd = mse6 / n;
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

// ---- persistence ----

inline void save_lstm(std::ostream& os, const LstmRegressor& model) {
  std::map<std::string, std::string> meta;
  meta["kind"] = "lstm";
  meta["n_sensors"] = std::to_string(model.cfg.n_sensors);
  meta["window"] = std::to_string(model.cfg.window);
  meta["hidden"] = std::to_string(model.cfg.hidden);
  meta["stats_mean"] = doubles_to_string(model.stats.mean);
  meta["stats_std"] = doubles_to_string(model.stats.stdev);
  model.params.save(os, meta);
}

inline LstmRegressor load_lstm(std::istream& is) {
  std::map<std::string, std::string> meta;
  ParamStore store = ParamStore::load(is, meta);
  if (meta["kind"] != "lstm") throw ParseError("model file is not an lstm model");
  LstmRegressor model;
  model.cfg.n_sensors = std::stoi(meta.at("n_sensors"));
  model.cfg.window = std::stoi(meta.at("window"));
  model.cfg.hidden = std::stoi(meta.at("hidden"));
  model.stats.mean = parse_doubles(meta.at("stats_mean"));
  model.stats.stdev = parse_doubles(meta.at("stats_std"));
  model.params = std::move(store);
  return model;
}

}  // namespace magpose
