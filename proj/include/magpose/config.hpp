#pragma once

#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "magpose/kv.hpp"
#include "magpose/sim.hpp"

namespace magpose {

inline constexpr const char* kConfigFormatLine = "# magpose-config-v1";

// Every knob of the pipeline with its default. A flat key = value file can
// override any field; command-line flags override the file.
struct RunConfig {
  std::uint64_t seed = 1;

  // dataset generation
  int n_steps = 50000;
  double train_fraction = 0.70;
  double val_fraction = 0.15;
  double noise_sigma = 0.05;  // standardized units
  double outlier_prob = 0.0;
  double outlier_magnitude = 10.0;
  int outlier_duration = 3;
  double walk_rate = 0.01;  // rad/step per axis
  double walk_lag = 0.2;    // slerp fraction per step
  JointLimits limits;
  SensorRig rig = SensorRig::default_rig();

  // lstm
  int lstm_hidden = 32;
  int lstm_window = 5;
  int lstm_batch = 64;
  int lstm_epochs = 30;
  double lstm_lr = 1e-3;

  // dvbf
  int dvbf_latent = 8;
  int dvbf_hidden = 32;
  int dvbf_seq_len = 32;
  int dvbf_batch = 16;
  int dvbf_epochs = 400;
  double dvbf_lr = 1e-3;
  double dvbf_alpha = 1e-3;

  // adam
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // spike experiment
  double spike_magnitude_sigmas = 10.0;
  int spike_duration = 3;
  int spike_sensor = 0;
  int spike_locations = 20;
};

namespace detail {

inline void limits_from_kv(const KvFile& kv, const std::string& key, double& lo, double& hi) {
  if (!kv.has(key)) return;
  const auto vs = kv.get_doubles(key);
  if (vs.size() != 2) throw ParseError("config: " + key + " expects 'lo hi'");
  lo = vs[0];
  hi = vs[1];
}

inline Vec3 vec3_from_kv(const KvFile& kv, const std::string& key) {
  const auto vs = kv.get_doubles(key);
  if (vs.size() != 3) throw ParseError("config: " + key + " expects three numbers");
  return {vs[0], vs[1], vs[2]};
}

}  // namespace detail

// Applies a parsed key=value file on top of the defaults. Unknown keys are
// rejected so typos fail loudly.
inline void apply_config_kv(RunConfig& cfg, const KvFile& kv) {
  for (const auto& [key, value] : kv.items()) {
    (void)value;
    if (key == "seed") cfg.seed = static_cast<std::uint64_t>(kv.get_int(key));
    else if (key == "n_steps") cfg.n_steps = static_cast<int>(kv.get_int(key));
    else if (key == "train_fraction") cfg.train_fraction = kv.get_double(key);
    else if (key == "val_fraction") cfg.val_fraction = kv.get_double(key);
    else if (key == "noise_sigma") cfg.noise_sigma = kv.get_double(key);
    else if (key == "outlier_prob") cfg.outlier_prob = kv.get_double(key);
    else if (key == "outlier_magnitude") cfg.outlier_magnitude = kv.get_double(key);
    else if (key == "outlier_duration") cfg.outlier_duration = static_cast<int>(kv.get_int(key));
    else if (key == "walk_rate") cfg.walk_rate = kv.get_double(key);
    else if (key == "walk_lag") cfg.walk_lag = kv.get_double(key);
    else if (key == "limits_x") detail::limits_from_kv(kv, key, cfg.limits.lo[0], cfg.limits.hi[0]);
    else if (key == "limits_y") detail::limits_from_kv(kv, key, cfg.limits.lo[1], cfg.limits.hi[1]);
    else if (key == "limits_z") detail::limits_from_kv(kv, key, cfg.limits.lo[2], cfg.limits.hi[2]);
    else if (key == "n_sensors") {
      // sensor positions must then be provided individually
      cfg.rig.sensor_positions.resize(static_cast<std::size_t>(kv.get_int(key)));
    } else if (key.rfind("rig_sensor_", 0) == 0) {
      const std::size_t idx = static_cast<std::size_t>(std::stoul(key.substr(11)));
      if (idx >= cfg.rig.sensor_positions.size()) cfg.rig.sensor_positions.resize(idx + 1);
      cfg.rig.sensor_positions[idx] = detail::vec3_from_kv(kv, key);
    } else if (key.rfind("rig_magnet_", 0) == 0 && key.size() > 15 &&
               key.substr(key.size() - 4) == "_pos") {
      const std::size_t idx = static_cast<std::size_t>(std::stoul(key.substr(11, key.size() - 15)));
      if (idx >= cfg.rig.magnets.size()) cfg.rig.magnets.resize(idx + 1);
      cfg.rig.magnets[idx].position = detail::vec3_from_kv(kv, key);
    } else if (key.rfind("rig_magnet_", 0) == 0 && key.size() > 18 &&
               key.substr(key.size() - 7) == "_moment") {
      const std::size_t idx = static_cast<std::size_t>(std::stoul(key.substr(11, key.size() - 18)));
      if (idx >= cfg.rig.magnets.size()) cfg.rig.magnets.resize(idx + 1);
      cfg.rig.magnets[idx].moment = detail::vec3_from_kv(kv, key);
    }
    else if (key == "lstm_hidden") cfg.lstm_hidden = static_cast<int>(kv.get_int(key));
    else if (key == "lstm_window") cfg.lstm_window = static_cast<int>(kv.get_int(key));
    else if (key == "lstm_batch") cfg.lstm_batch = static_cast<int>(kv.get_int(key));
    else if (key == "lstm_epochs") cfg.lstm_epochs = static_cast<int>(kv.get_int(key));
    else if (key == "lstm_lr") cfg.lstm_lr = kv.get_double(key);
    else if (key == "dvbf_latent") cfg.dvbf_latent = static_cast<int>(kv.get_int(key));
    else if (key == "dvbf_hidden") cfg.dvbf_hidden = static_cast<int>(kv.get_int(key));
    else if (key == "dvbf_seq_len") cfg.dvbf_seq_len = static_cast<int>(kv.get_int(key));
    else if (key == "dvbf_batch") cfg.dvbf_batch = static_cast<int>(kv.get_int(key));
    else if (key == "dvbf_epochs") cfg.dvbf_epochs = static_cast<int>(kv.get_int(key));
    else if (key == "dvbf_lr") cfg.dvbf_lr = kv.get_double(key);
    else if (key == "dvbf_alpha") cfg.dvbf_alpha = kv.get_double(key);
    else if (key == "adam_beta1") cfg.adam_beta1 = kv.get_double(key);
    else if (key == "adam_beta2") cfg.adam_beta2 = kv.get_double(key);
    else if (key == "adam_eps") cfg.adam_eps = kv.get_double(key);
    else if (key == "spike_magnitude_sigmas") cfg.spike_magnitude_sigmas = kv.get_double(key);
    else if (key == "spike_duration") cfg.spike_duration = static_cast<int>(kv.get_int(key));
    else if (key == "spike_sensor") cfg.spike_sensor = static_cast<int>(kv.get_int(key));
    else if (key == "spike_locations") cfg.spike_locations = static_cast<int>(kv.get_int(key));
    else throw ParseError("config: unknown key '" + key + "'");
  }
}

// Serializes the effective configuration; the output parses back losslessly.
inline KvFile config_to_kv(const RunConfig& cfg) {
  KvFile kv;
  kv.set_int("seed", static_cast<long long>(cfg.seed));
  kv.set_int("n_steps", cfg.n_steps);
  kv.set_double("train_fraction", cfg.train_fraction);
  kv.set_double("val_fraction", cfg.val_fraction);
  kv.set_double("noise_sigma", cfg.noise_sigma);
  kv.set_double("outlier_prob", cfg.outlier_prob);
  kv.set_double("outlier_magnitude", cfg.outlier_magnitude);
  kv.set_int("outlier_duration", cfg.outlier_duration);
  kv.set_double("walk_rate", cfg.walk_rate);
  kv.set_double("walk_lag", cfg.walk_lag);
  kv.set_doubles("limits_x", {cfg.limits.lo[0], cfg.limits.hi[0]});
  kv.set_doubles("limits_y", {cfg.limits.lo[1], cfg.limits.hi[1]});
  kv.set_doubles("limits_z", {cfg.limits.lo[2], cfg.limits.hi[2]});
  for (std::size_t i = 0; i < cfg.rig.sensor_positions.size(); ++i) {
    const Vec3& p = cfg.rig.sensor_positions[i];
    kv.set_doubles("rig_sensor_" + std::to_string(i), {p.x, p.y, p.z});
  }
  for (std::size_t i = 0; i < cfg.rig.magnets.size(); ++i) {
    const Magnet& m = cfg.rig.magnets[i];
    kv.set_doubles("rig_magnet_" + std::to_string(i) + "_pos",
                   {m.position.x, m.position.y, m.position.z});
    kv.set_doubles("rig_magnet_" + std::to_string(i) + "_moment",
                   {m.moment.x, m.moment.y, m.moment.z});
  }
  kv.set_int("lstm_hidden", cfg.lstm_hidden);
  kv.set_int("lstm_window", cfg.lstm_window);
  kv.set_int("lstm_batch", cfg.lstm_batch);
  kv.set_int("lstm_epochs", cfg.lstm_epochs);
  kv.set_double("lstm_lr", cfg.lstm_lr);
  kv.set_int("dvbf_latent", cfg.dvbf_latent);
  kv.set_int("dvbf_hidden", cfg.dvbf_hidden);
  kv.set_int("dvbf_seq_len", cfg.dvbf_seq_len);
  kv.set_int("dvbf_batch", cfg.dvbf_batch);
  kv.set_int("dvbf_epochs", cfg.dvbf_epochs);
  kv.set_double("dvbf_lr", cfg.dvbf_lr);
  kv.set_double("dvbf_alpha", cfg.dvbf_alpha);
  kv.set_double("adam_beta1", cfg.adam_beta1);
  kv.set_double("adam_beta2", cfg.adam_beta2);
  kv.set_double("adam_eps", cfg.adam_eps);
  kv.set_double("spike_magnitude_sigmas", cfg.spike_magnitude_sigmas);
  kv.set_int("spike_duration", cfg.spike_duration);
  kv.set_int("spike_sensor", cfg.spike_sensor);
  kv.set_int("spike_locations", cfg.spike_locations);
  return kv;
}

// Reads a config file; a leading "# ..." format line is treated as comment,
// so echoed config_used.txt files load back unchanged.
inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config file " + path);
  std::string content((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  std::istringstream joined("# config\n" + content);
  KvFile kv = KvFile::read(joined, "# config");
  RunConfig cfg;
  apply_config_kv(cfg, kv);
  return cfg;
}

}  // namespace magpose
