#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "magpose/errors.hpp"
#include "magpose/linalg.hpp"
#include "magpose/rng.hpp"
#include "magpose/rotation.hpp"

namespace magpose {

// mu0 / 4 pi
inline constexpr double kDipoleConstant = 1e-7;
inline constexpr double kMinSourceDistance = 1e-6;

// Per-axis joint range in radians. Defaults are the reached limits of the
// reference experiment.
struct JointLimits {
  double lo[3] = {-1.418, -1.457, -2.036};
  double hi[3] = {0.647, -0.0288, 0.061};

  bool valid() const {
    for (int a = 0; a < 3; ++a)
      if (!(lo[a] < hi[a])) return false;
    return true;
  }

  double clamp(int axis, double v) const {
    return std::fmax(lo[axis], std::fmin(hi[axis], v));
  }

  double span(int axis) const { return hi[axis] - lo[axis]; }
};

struct Magnet {
  Vec3 position;  // ball frame, meters
  Vec3 moment;    // ball frame, A m^2
};

// Sensor positions live in the socket frame, magnets in the ball frame.
struct SensorRig {
  std::vector<Vec3> sensor_positions;
  std::vector<Magnet> magnets;

  int n_sensors() const { return static_cast<int>(sensor_positions.size()); }

  bool valid() const {
    if (sensor_positions.empty()) return false;
    for (std::size_t i = 0; i < sensor_positions.size(); ++i)
      for (std::size_t j = i + 1; j < sensor_positions.size(); ++j)
        if (norm(sensor_positions[i] - sensor_positions[j]) == 0.0) return false;
    return true;
  }

  // Four sensors on a 25 mm circle, 10 mm below the ball center; three
  // magnets at 120 degrees inside the ball with tilted moments so that no
  // pose symmetry survives.
  static SensorRig default_rig() {
    SensorRig rig;
    const double r = 0.025, zs = -0.010;
    rig.sensor_positions = {{r, 0.0, zs}, {0.0, r, zs}, {-r, 0.0, zs}, {0.0, -r, zs}};
    const double rm = 0.008;
    for (int k = 0; k < 3; ++k) {
      const double th = 2.0 * kPi * k / 3.0;
      Vec3 dir{std::cos(th), std::sin(th), 1.2};
      dir = dir / norm(dir);
      rig.magnets.push_back({{rm * std::cos(th), rm * std::sin(th), 0.002}, dir * 0.1});
    }
    return rig;
  }
};

// One time step of flux readings, one 3-vector per sensor.
struct SensorFrame {
  std::vector<Vec3> b;

  int n_sensors() const { return static_cast<int>(b.size()); }

  std::vector<double> flat() const {
    std::vector<double> out;
    out.reserve(b.size() * 3);
    for (const auto& v : b) {
      out.push_back(v.x);
      out.push_back(v.y);
      out.push_back(v.z);
    }
    return out;
  }
};

// Point-dipole field at query_pos from a dipole `moment` sitting at
// source_pos: B = (mu0/4pi) (3(m.r^)r^ - m)/|r|^3.
inline Vec3 dipole_field(const Vec3& moment, const Vec3& source_pos,
                         const Vec3& query_pos) {
  const Vec3 r = query_pos - source_pos;
  const double dist = norm(r);
  if (dist <= kMinSourceDistance)
    throw TooCloseToSource("dipole_field: query within exclusion radius");
  const Vec3 rhat = r / dist;
  const double d3 = dist * dist * dist;
  return (3.0 * dot(moment, rhat) * rhat - moment) * (kDipoleConstant / d3);
}

// Superposition of all magnet fields at every sensor, with magnet positions
// and moments rotated into the socket frame by the pose.
inline SensorFrame read_sensors(const SensorRig& rig, const Rotation& pose) {
  SensorFrame frame;
  frame.b.reserve(rig.sensor_positions.size());
  for (const Vec3& sp : rig.sensor_positions) {
    Vec3 field{};
    for (const Magnet& mag : rig.magnets)
      field += dipole_field(pose.m * mag.moment, pose.m * mag.position, sp);
    frame.b.push_back(field);
  }
  return frame;
}

struct WalkPoint {
  EulerAngles u;  // commanded joint target (the control input)
  Rotation y;     // actual pose after first-order lag
};

// Open-loop random walk: sample a uniform target inside the limits, move the
// commanded Euler point toward it at a fixed per-axis rate, and drag the
// actual pose behind through slerp with a fixed lag factor.
struct WalkConfig {
  double rate_per_step = 0.01;  // rad/step per axis
  double lag_alpha = 0.2;       // slerp fraction toward the target per step
};

inline std::vector<WalkPoint> random_walk(const JointLimits& limits, int n_steps,
                                          std::uint64_t seed,
                                          const WalkConfig& cfg = {}) {
  if (!limits.valid()) throw Error("random_walk: invalid joint limits");
  if (n_steps < 1) throw Error("random_walk: n_steps must be >= 1");
  Rng rng(seed);
  const auto sample_target = [&] {
    EulerAngles e;
    for (int a = 0; a < 3; ++a) e[a] = rng.uniform(limits.lo[a], limits.hi[a]);
    return e;
  };

  EulerAngles u = sample_target();
  EulerAngles target = sample_target();
  Rotation y = euler_to_rotation(u);

  std::vector<WalkPoint> out;
  out.reserve(static_cast<std::size_t>(n_steps));
  for (int t = 0; t < n_steps; ++t) {
    bool arrived = true;
    for (int a = 0; a < 3; ++a) {
      const double diff = target[a] - u[a];
      if (std::fabs(diff) <= cfg.rate_per_step) {
        u[a] = target[a];
      } else {
        u[a] += diff > 0.0 ? cfg.rate_per_step : -cfg.rate_per_step;
        arrived = false;
      }
    }
    y = slerp(y, euler_to_rotation(u), cfg.lag_alpha);
    EulerAngles e = rotation_to_euler(y);
    for (int a = 0; a < 3; ++a) e[a] = limits.clamp(a, e[a]);
    y = euler_to_rotation(e);
    out.push_back({u, y});
    if (arrived) target = sample_target();
  }
  return out;
}

// Gaussian noise plus transient spikes. A spike corrupts one uniformly chosen
// sensor by a constant additive offset of outlier_magnitude * gaussian_sigma
// (random sign) on all three of its channels for outlier_duration steps; no
// new spike starts while one is active. Units follow the frames passed in
// (standardized readings in the default pipeline).
struct NoiseSpec {
  double gaussian_sigma = 0.05;
  double outlier_prob = 0.0;
  double outlier_magnitude = 10.0;
  int outlier_duration = 3;

  bool valid() const {
    return gaussian_sigma >= 0.0 && outlier_prob >= 0.0 && outlier_prob <= 1.0 &&
           outlier_duration >= 1;
  }
};

class Corruptor {
 public:
  Corruptor(const NoiseSpec& spec, std::uint64_t seed) : spec_(spec), rng_(seed) {
    if (!spec.valid()) throw Error("Corruptor: invalid noise spec");
  }

  // Advances one step; input and output are flattened n_sensors x 3 frames.
  std::vector<double> apply(const std::vector<double>& frame, int n_sensors) {
    std::vector<double> out(frame.size());
    for (std::size_t i = 0; i < frame.size(); ++i)
      out[i] = frame[i] + spec_.gaussian_sigma * rng_.gaussian();
    if (spike_remaining_ == 0 && spec_.outlier_prob > 0.0 &&
        rng_.uniform() < spec_.outlier_prob) {
      spike_sensor_ = rng_.uniform_int(n_sensors);
      spike_offset_ = (rng_.uniform() < 0.5 ? -1.0 : 1.0) *
                      spec_.outlier_magnitude * spec_.gaussian_sigma;
      spike_remaining_ = spec_.outlier_duration;
    }
    if (spike_remaining_ > 0) {
      for (int c = 0; c < 3; ++c)
        out[static_cast<std::size_t>(spike_sensor_ * 3 + c)] += spike_offset_;
      --spike_remaining_;
    }
    return out;
  }

 private:
  NoiseSpec spec_;
  Rng rng_;
  int spike_sensor_ = 0;
  int spike_remaining_ = 0;
  double spike_offset_ = 0.0;
};

// Per-channel standardization statistics, frozen from the clean training
// split and persisted alongside datasets and models.
struct StandardStats {
  std::vector<double> mean;
  std::vector<double> stdev;

  bool matches(const StandardStats& o) const {
    return mean == o.mean && stdev == o.stdev;
  }
};

struct Sample {
  long t = 0;            // step index, 20 ms per step
  EulerAngles u;         // joint target (control input)
  Rotation y;            // ground-truth pose
  std::vector<double> x; // standardized readings, n_sensors x 3 flattened
};

struct GenerateConfig {
  int n_steps = 50000;
  double train_fraction = 0.70;
  double val_fraction = 0.15;
  WalkConfig walk;
};

struct GeneratedData {
  std::vector<Sample> samples;
  StandardStats stats;
  int n_sensors = 0;
  int n_train = 0, n_val = 0, n_test = 0;
};

// Full pipeline: trajectory -> clean fields -> standardization (statistics
// from the clean training split) -> corruption in standardized units.
inline GeneratedData generate_dataset(const SensorRig& rig, const JointLimits& limits,
                                      const NoiseSpec& noise, std::uint64_t seed,
                                      const GenerateConfig& cfg = {}) {
  if (!rig.valid()) throw Error("generate_dataset: invalid sensor rig");
  GeneratedData data;
  data.n_sensors = rig.n_sensors();
  const int channels = data.n_sensors * 3;

  const auto walk = random_walk(limits, cfg.n_steps, seed, cfg.walk);

  std::vector<std::vector<double>> raw;
  raw.reserve(walk.size());
  for (const auto& wp : walk) raw.push_back(read_sensors(rig, wp.y).flat());

  data.n_train = static_cast<int>(cfg.train_fraction * cfg.n_steps + 0.5);
  data.n_val = static_cast<int>(cfg.val_fraction * cfg.n_steps + 0.5);
  if (data.n_train < 1) data.n_train = 1;
  if (data.n_train + data.n_val > cfg.n_steps) data.n_val = cfg.n_steps - data.n_train;
  data.n_test = cfg.n_steps - data.n_train - data.n_val;

  data.stats.mean.assign(static_cast<std::size_t>(channels), 0.0);
  data.stats.stdev.assign(static_cast<std::size_t>(channels), 1.0);
  for (int c = 0; c < channels; ++c) {
    double m = 0.0;
    for (int t = 0; t < data.n_train; ++t) m += raw[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)];
    m /= data.n_train;
    double s2 = 0.0;
    for (int t = 0; t < data.n_train; ++t) {
      const double d = raw[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)] - m;
      s2 += d * d;
    }
    const double sd = std::sqrt(s2 / data.n_train);
    data.stats.mean[static_cast<std::size_t>(c)] = m;
    data.stats.stdev[static_cast<std::size_t>(c)] = sd > 1e-12 ? sd : 1.0;
  }

  Corruptor corruptor(noise, seed ^ 0x9e3779b97f4a7c15ULL);
  data.samples.reserve(walk.size());
  for (std::size_t t = 0; t < walk.size(); ++t) {
    std::vector<double> z(static_cast<std::size_t>(channels));
    for (int c = 0; c < channels; ++c)
      z[static_cast<std::size_t>(c)] =
          (raw[t][static_cast<std::size_t>(c)] - data.stats.mean[static_cast<std::size_t>(c)]) /
          data.stats.stdev[static_cast<std::size_t>(c)];
    Sample s;
    s.t = static_cast<long>(t);
    s.u = walk[t].u;
    s.y = walk[t].y;
    s.x = corruptor.apply(z, data.n_sensors);
    data.samples.push_back(std::move(s));
  }
  return data;
}

}  // namespace magpose
