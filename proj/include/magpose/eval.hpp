#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "magpose/dataset.hpp"
#include "magpose/dvbf.hpp"
#include "magpose/lstm.hpp"
#include "magpose/rotation.hpp"

namespace magpose {

// Uniform view over both model kinds for the evaluation experiments. run()
// returns one pose per step from warmup() onward.
class PoseEstimator {
 public:
  virtual ~PoseEstimator() = default;
  virtual int warmup() const = 0;
  virtual std::vector<Rotation> run(const std::vector<Sample>& samples) const = 0;
  virtual const StandardStats* stats() const = 0;
  virtual std::string name() const = 0;
};

class LstmEstimator : public PoseEstimator {
 public:
  explicit LstmEstimator(LstmRegressor model) : model_(std::move(model)) {}

  int warmup() const override { return model_.cfg.window - 1; }

  std::vector<Rotation> run(const std::vector<Sample>& samples) const override {
    std::vector<Rotation> poses;
    const int w = model_.cfg.window;
    if (static_cast<int>(samples.size()) < w) return poses;
    poses.reserve(samples.size() - static_cast<std::size_t>(w) + 1);
    for (int e = w - 1; e < static_cast<int>(samples.size()); ++e)
      poses.push_back(predict(model_, detail::window_frames(samples, e, w)));
    return poses;
  }

  const StandardStats* stats() const override { return &model_.stats; }
  std::string name() const override { return "lstm"; }

  const LstmRegressor& model() const { return model_; }

 private:
  LstmRegressor model_;
};

class DvbfEstimator : public PoseEstimator {
 public:
  explicit DvbfEstimator(DvbfModel model) : model_(std::move(model)) {}

  int warmup() const override { return 1; }

  std::vector<Rotation> run(const std::vector<Sample>& samples) const override {
    std::vector<Rotation> poses;
    if (samples.size() < 2) return poses;
    poses.reserve(samples.size() - 1);
    FilterState state = filter_init(model_, samples[0].x);
    for (std::size_t t = 1; t < samples.size(); ++t) {
      const auto out = filter_step(model_, state, samples[t].x,
                                   {samples[t].u.rx, samples[t].u.ry, samples[t].u.rz});
      poses.push_back(out.pose);
    }
    return poses;
  }

  const StandardStats* stats() const override { return &model_.stats; }
  std::string name() const override { return "dvbf"; }

  const DvbfModel& model() const { return model_; }

 private:
  DvbfModel model_;
};

// Debug estimator that replays the ground truth.
class OracleEstimator : public PoseEstimator {
 public:
  int warmup() const override { return 0; }

  std::vector<Rotation> run(const std::vector<Sample>& samples) const override {
    std::vector<Rotation> poses;
    poses.reserve(samples.size());
    for (const auto& s : samples) poses.push_back(s.y);
    return poses;
  }

  const StandardStats* stats() const override { return nullptr; }
  std::string name() const override { return "oracle"; }
};

struct EvalReport {
  std::string method;
  int warmup = 0;
  int n = 0;                          // evaluated steps
  double euler_mse[3] = {0, 0, 0};    // per-axis, rad^2, wrap-aware
  double euler_rmse[3] = {0, 0, 0};   // rad
  double euler_mse_mean = 0.0;        // mean over axes
  double euler_rmse_mean = 0.0;
  double mean_geodesic = 0.0;         // rad
  std::vector<long> t;                // per evaluated step
  std::vector<double> err_rx, err_ry, err_rz, geodesic;
};

// Runs the estimator over a split and scores it against ground truth.
inline EvalReport evaluate(const PoseEstimator& estimator,
                           const std::vector<Sample>& samples,
                           const StandardStats& dataset_stats) {
  if (estimator.stats() && !estimator.stats()->matches(dataset_stats))
    throw StatsMismatch("evaluate: model and dataset standardization stats differ");
  EvalReport report;
  report.method = estimator.name();
  report.warmup = estimator.warmup();

  const auto poses = estimator.run(samples);
  const std::size_t offset = static_cast<std::size_t>(report.warmup);
  report.n = static_cast<int>(poses.size());
  if (poses.size() + offset != samples.size())
    throw Error("evaluate: estimator output length mismatch");

  double acc[3] = {0, 0, 0}, geo = 0.0;
  for (std::size_t k = 0; k < poses.size(); ++k) {
    const Sample& s = samples[offset + k];
    const EulerAngles pe = rotation_to_euler(poses[k]);
    const EulerAngles te = rotation_to_euler(s.y);
    double err[3];
    for (int a = 0; a < 3; ++a) {
      err[a] = normalize_angle(pe[a] - te[a]);
      acc[a] += err[a] * err[a];
    }
    const double g = geodesic_angle(poses[k], s.y);
    geo += g;
    report.t.push_back(s.t);
    report.err_rx.push_back(err[0]);
    report.err_ry.push_back(err[1]);
    report.err_rz.push_back(err[2]);
    report.geodesic.push_back(g);
  }
  if (report.n > 0) {
    for (int a = 0; a < 3; ++a) {
      report.euler_mse[a] = acc[a] / report.n;
      report.euler_rmse[a] = std::sqrt(report.euler_mse[a]);
      report.euler_mse_mean += report.euler_mse[a] / 3.0;
    }
    report.euler_rmse_mean = std::sqrt(report.euler_mse_mean);
    report.mean_geodesic = geo / report.n;
  }
  return report;
}

// ---- spike-robustness experiment ----

struct SpikeSpec {
  double magnitude = 0.5;  // additive offset in standardized units (10 x 0.05)
  int duration = 3;        // steps
  int sensor = 0;          // corrupted sensor for single-sensor spikes
  int locations = 20;      // spike sites spread over the stream
  bool all_sensors = false;
};

struct SpikeEvent {
  long step = 0;
  double peak_lstm = 0.0;  // geodesic deviation from the clean run, rad
  double peak_dvbf = 0.0;
};

struct SpikeReport {
  SpikeSpec spec;
  std::vector<SpikeEvent> events;
  double mean_peak_lstm = 0.0;
  double mean_peak_dvbf = 0.0;
  double ratio = 0.0;  // dvbf / lstm
};

namespace detail {

inline double peak_deviation(const std::vector<Rotation>& clean,
                             const std::vector<Rotation>& spiked) {
  double peak = 0.0;
  for (std::size_t k = 0; k < clean.size(); ++k)
    peak = std::fmax(peak, geodesic_angle(clean[k], spiked[k]));
  return peak;
}

}  // namespace detail

// Injects deterministic additive spikes into an otherwise clean stream and
// measures each method's peak output deviation from its own clean run.
inline SpikeReport spike_experiment(const PoseEstimator& lstm_est,
                                    const PoseEstimator& dvbf_est,
                                    const std::vector<Sample>& samples,
                                    const StandardStats& dataset_stats,
                                    const SpikeSpec& spec) {
  SpikeReport report;
  report.spec = spec;
  for (const PoseEstimator* est : {&lstm_est, &dvbf_est})
    if (est->stats() && !est->stats()->matches(dataset_stats))
      throw StatsMismatch("spike_experiment: model and dataset stats differ");
  const auto lstm_clean_poses = lstm_est.run(samples);
  const auto dvbf_clean_poses = dvbf_est.run(samples);

  const int n = static_cast<int>(samples.size());
  const int margin = std::max(lstm_est.warmup(), dvbf_est.warmup()) + 5;
  const int usable = n - margin - spec.duration - 5;
  if (usable < spec.locations) throw Error("spike_experiment: stream too short");
  const int stride = usable / spec.locations;

  for (int k = 0; k < spec.locations; ++k) {
    const int loc = margin + k * stride;
    std::vector<Sample> corrupted = samples;
    for (int d = 0; d < spec.duration; ++d) {
      auto& x = corrupted[static_cast<std::size_t>(loc + d)].x;
      if (spec.all_sensors) {
        for (auto& v : x) v += spec.magnitude;
      } else {
        for (int c = 0; c < 3; ++c) x[static_cast<std::size_t>(spec.sensor * 3 + c)] += spec.magnitude;
      }
    }
    SpikeEvent event;
    event.step = samples[static_cast<std::size_t>(loc)].t;
    event.peak_lstm = detail::peak_deviation(lstm_clean_poses, lstm_est.run(corrupted));
    event.peak_dvbf = detail::peak_deviation(dvbf_clean_poses, dvbf_est.run(corrupted));
    report.events.push_back(event);
    report.mean_peak_lstm += event.peak_lstm / spec.locations;
    report.mean_peak_dvbf += event.peak_dvbf / spec.locations;
  }
  report.ratio = report.mean_peak_lstm > 0.0 ? report.mean_peak_dvbf / report.mean_peak_lstm : 0.0;
  return report;
}

// ---- report serialization ----

inline constexpr const char* kReportFormatLine = "# magpose-report-v1";

inline void write_eval_series_csv(std::ostream& os, const EvalReport& r) {
  os << kReportFormatLine << "\n";
  os << "t,err_rx,err_ry,err_rz,geodesic\n";
  std::string row;
  for (std::size_t k = 0; k < r.t.size(); ++k) {
    row = std::to_string(r.t[k]);
    append_csv_value(row, r.err_rx[k]);
    append_csv_value(row, r.err_ry[k]);
    append_csv_value(row, r.err_rz[k]);
    append_csv_value(row, r.geodesic[k]);
    os << row << "\n";
  }
}

inline KvFile eval_summary_kv(const EvalReport& r) {
  KvFile kv;
  kv.set("method", r.method);
  kv.set_int("warmup", r.warmup);
  kv.set_int("n", r.n);
  kv.set_double("euler_mse_rx", r.euler_mse[0]);
  kv.set_double("euler_mse_ry", r.euler_mse[1]);
  kv.set_double("euler_mse_rz", r.euler_mse[2]);
  kv.set_double("euler_mse_mean", r.euler_mse_mean);
  kv.set_double("euler_rmse_rx", r.euler_rmse[0]);
  kv.set_double("euler_rmse_ry", r.euler_rmse[1]);
  kv.set_double("euler_rmse_rz", r.euler_rmse[2]);
  kv.set_double("euler_rmse_mean", r.euler_rmse_mean);
  kv.set_double("mean_geodesic", r.mean_geodesic);
  return kv;
}

inline void write_spike_series_csv(std::ostream& os, const SpikeReport& r) {
  os << kReportFormatLine << "\n";
  os << "step,peak_lstm,peak_dvbf\n";
  std::string row;
  for (const auto& e : r.events) {
    row = std::to_string(e.step);
    append_csv_value(row, e.peak_lstm);
    append_csv_value(row, e.peak_dvbf);
    os << row << "\n";
  }
}

inline KvFile spike_summary_kv(const SpikeReport& r) {
  KvFile kv;
  kv.set_double("spike_magnitude", r.spec.magnitude);
  kv.set_int("spike_duration", r.spec.duration);
  kv.set_int("spike_sensor", r.spec.sensor);
  kv.set_int("spike_locations", r.spec.locations);
  kv.set("spike_all_sensors", r.spec.all_sensors ? "true" : "false");
  kv.set_double("mean_peak_lstm", r.mean_peak_lstm);
  kv.set_double("mean_peak_dvbf", r.mean_peak_dvbf);
  kv.set_double("dvbf_lstm_ratio", r.ratio);
  return kv;
}

}  // namespace magpose
