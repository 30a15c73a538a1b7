// Command-line front end: generate synthetic datasets, train and evaluate
// the two pose regressors, run the spike-robustness comparison, and stream
// poses through the online filter.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "magpose/config.hpp"
#include "magpose/dataset.hpp"
#include "magpose/dvbf.hpp"
#include "magpose/eval.hpp"
#include "magpose/lstm.hpp"
#include "magpose/sim.hpp"

namespace fs = std::filesystem;
using namespace magpose;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitVersion = 4;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

// Configuration problems are usage errors (exit 2), unlike data errors.
struct UsageError {
  std::string message;
};

RunConfig resolve_config(const CommonFlags& flags) {
  RunConfig cfg;
  if (!flags.config_path.empty()) {
    try {
      cfg = load_run_config(flags.config_path);
    } catch (const Error& e) {
      throw UsageError{e.what()};
    }
  }
  if (flags.seed) cfg.seed = *flags.seed;
  return cfg;
}

void echo_config(const RunConfig& cfg, const std::string& out_dir) {
  config_to_kv(cfg).write_file(out_dir + "/config_used.txt", kConfigFormatLine);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir + ": " + ec.message());
}

KvFile dataset_meta(const RunConfig& cfg, const GeneratedData& data) {
  KvFile kv;
  kv.set("kind", "dataset");
  kv.set_int("n_sensors", data.n_sensors);
  kv.set_int("seed", static_cast<long long>(cfg.seed));
  kv.set_int("n_steps", cfg.n_steps);
  kv.set_int("split_train", data.n_train);
  kv.set_int("split_val", data.n_val);
  kv.set_int("split_test", data.n_test);
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
  stats_to_kv(data.stats, kv);
  return kv;
}

void write_split(const std::string& path, const std::vector<Sample>& samples,
                 int n_sensors) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path);
  write_dataset_csv(os, samples, n_sensors);
}

int cmd_generate(const CommonFlags& flags, const std::string& out_dir,
                 std::optional<int> steps_override) {
  RunConfig cfg = resolve_config(flags);
  if (steps_override) cfg.n_steps = *steps_override;
  if (cfg.n_steps < 1) {
    std::cerr << "generate: n_steps must be >= 1\n";
    return kExitUsage;
  }
  ensure_dir(out_dir);

  NoiseSpec noise;
  noise.gaussian_sigma = cfg.noise_sigma;
  noise.outlier_prob = cfg.outlier_prob;
  noise.outlier_magnitude = cfg.outlier_magnitude;
  noise.outlier_duration = cfg.outlier_duration;

  GenerateConfig gen;
  gen.n_steps = cfg.n_steps;
  gen.train_fraction = cfg.train_fraction;
  gen.val_fraction = cfg.val_fraction;
  gen.walk.rate_per_step = cfg.walk_rate;
  gen.walk.lag_alpha = cfg.walk_lag;

  const GeneratedData data = generate_dataset(cfg.rig, cfg.limits, noise, cfg.seed, gen);

  const auto begin = data.samples.begin();
  const std::vector<Sample> train(begin, begin + data.n_train);
  const std::vector<Sample> val(begin + data.n_train, begin + data.n_train + data.n_val);
  const std::vector<Sample> test(begin + data.n_train + data.n_val, data.samples.end());

  write_split(out_dir + "/train.csv", train, data.n_sensors);
  write_split(out_dir + "/val.csv", val, data.n_sensors);
  write_split(out_dir + "/test.csv", test, data.n_sensors);
  dataset_meta(cfg, data).write_file(out_dir + "/meta.txt", kMetaFormatLine);
  echo_config(cfg, out_dir);
  std::cout << "generated " << data.samples.size() << " steps (" << data.n_train << "/"
            << data.n_val << "/" << data.n_test << ") into " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const CommonFlags& flags, const std::string& model_kind,
              const std::string& data_dir, const std::string& out_dir,
              std::optional<int> epochs_override) {
  RunConfig cfg = resolve_config(flags);
  ensure_dir(out_dir);
  std::vector<CsvWarning> warnings;
  const DatasetOnDisk data = load_dataset_dir(data_dir, &warnings);
  for (const auto& w : warnings) std::cerr << "row " << w.row << ": " << w.message << "\n";

  AdamConfig adam;
  adam.beta1 = cfg.adam_beta1;
  adam.beta2 = cfg.adam_beta2;
  adam.eps = cfg.adam_eps;

  std::ofstream log_os(out_dir + "/training_log.csv");
  if (!log_os) throw Error("cannot write training log");
  log_os << "# magpose-trainlog-v1\n";

  if (model_kind == "lstm") {
    LstmConfig mc;
    mc.n_sensors = data.n_sensors;
    mc.window = cfg.lstm_window;
    mc.hidden = cfg.lstm_hidden;
    TrainConfig tc;
    tc.epochs = epochs_override.value_or(cfg.lstm_epochs);
    tc.batch = cfg.lstm_batch;
    tc.seed = cfg.seed;
    tc.adam = adam;
    tc.adam.lr = cfg.lstm_lr;
    log_os << "epoch,train_mse_sixd,val_mse_sixd,val_euler_mse,val_euler_rmse,val_geodesic,"
              "wall_seconds\n";
    std::vector<LstmEpochLog> log;
    const LstmRegressor model =
        train_lstm(data.train, data.val, data.stats, mc, tc, &log, [&](const LstmEpochLog& e) {
          log_os << e.epoch << ',' << e.train_mse_sixd << ',' << e.val_mse_sixd << ','
                 << e.val_euler_mse << ',' << e.val_euler_rmse << ',' << e.val_geodesic << ','
                 << e.wall_seconds << "\n";
          log_os.flush();
        });
    std::ofstream os(out_dir + "/model.txt");
    if (!os) throw Error("cannot write model file");
    save_lstm(os, model);
    if (!log.empty())
      std::cout << "lstm trained: val geodesic " << log.back().val_geodesic << " rad after "
                << log.back().wall_seconds << " s\n";
  } else if (model_kind == "dvbf") {
    DvbfConfig mc;
    mc.n_sensors = data.n_sensors;
    mc.latent_dim = cfg.dvbf_latent;
    mc.enc_hidden = mc.trans_hidden = mc.dec_hidden = mc.init_hidden = cfg.dvbf_hidden;
    mc.alpha = cfg.dvbf_alpha;
    DvbfTrainConfig tc;
    tc.epochs = epochs_override.value_or(cfg.dvbf_epochs);
    tc.batch = cfg.dvbf_batch;
    tc.seq_len = cfg.dvbf_seq_len;
    tc.seed = cfg.seed;
    tc.adam = adam;
    tc.adam.lr = cfg.dvbf_lr;
    log_os << "epoch,train_loss,val_elbo,val_penalty,val_euler_mse,val_euler_rmse,"
              "val_geodesic,wall_seconds\n";
    std::vector<DvbfEpochLog> log;
    const DvbfModel model =
        train_dvbf(data.train, data.val, data.stats, mc, tc, &log, [&](const DvbfEpochLog& e) {
          log_os << e.epoch << ',' << e.train_loss << ',' << e.val_elbo << ',' << e.val_penalty
                 << ',' << e.val_euler_mse << ',' << e.val_euler_rmse << ',' << e.val_geodesic
                 << ',' << e.wall_seconds << "\n";
          log_os.flush();
        });
    std::ofstream os(out_dir + "/model.txt");
    if (!os) throw Error("cannot write model file");
    save_dvbf(os, model);
    if (!log.empty())
      std::cout << "dvbf trained: val geodesic " << log.back().val_geodesic << " rad after "
                << log.back().wall_seconds << " s\n";
  } else {
    std::cerr << "train: unknown model kind '" << model_kind << "'\n";
    return kExitUsage;
  }
  echo_config(cfg, out_dir);
  return kExitOk;
}

std::string model_kind_of(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open model file " + path);
  std::map<std::string, std::string> meta;
  ParamStore::load(is, meta);
  const auto it = meta.find("kind");
  if (it == meta.end()) throw ParseError("model file missing kind");
  return it->second;
}

std::unique_ptr<PoseEstimator> load_estimator(const std::string& path) {
  const std::string kind = model_kind_of(path);
  std::ifstream is(path);
  if (kind == "lstm") return std::make_unique<LstmEstimator>(load_lstm(is));
  if (kind == "dvbf") return std::make_unique<DvbfEstimator>(load_dvbf(is));
  throw ParseError("unknown model kind '" + kind + "'");
}

const std::vector<Sample>& pick_split(const DatasetOnDisk& data, const std::string& split) {
  if (split == "train") return data.train;
  if (split == "val") return data.val;
  if (split == "test") return data.test;
  throw Error("unknown split '" + split + "'");
}

int cmd_eval(const CommonFlags& flags, const std::string& model_path,
             const std::string& data_dir, const std::string& out_dir,
             const std::string& split, bool oracle) {
  RunConfig cfg = resolve_config(flags);
  ensure_dir(out_dir);
  std::vector<CsvWarning> warnings;
  const DatasetOnDisk data = load_dataset_dir(data_dir, &warnings);
  for (const auto& w : warnings) std::cerr << "row " << w.row << ": " << w.message << "\n";

  std::unique_ptr<PoseEstimator> estimator;
  if (oracle)
    estimator = std::make_unique<OracleEstimator>();
  else
    estimator = load_estimator(model_path);

  const EvalReport report = evaluate(*estimator, pick_split(data, split), data.stats);
  std::ofstream os(out_dir + "/report.csv");
  if (!os) throw Error("cannot write report.csv");
  write_eval_series_csv(os, report);
  KvFile summary = eval_summary_kv(report);
  summary.set("split", split);
  summary.write_file(out_dir + "/summary.txt", kReportFormatLine);
  echo_config(cfg, out_dir);
  std::cout << report.method << " on " << split << ": euler rmse " << report.euler_rmse_mean
            << " rad, mean geodesic " << report.mean_geodesic << " rad over " << report.n
            << " steps\n";
  return kExitOk;
}

int cmd_spike(const CommonFlags& flags, const std::string& lstm_path,
              const std::string& dvbf_path, const std::string& data_dir,
              const std::string& out_dir) {
  RunConfig cfg = resolve_config(flags);
  ensure_dir(out_dir);
  std::vector<CsvWarning> warnings;
  const DatasetOnDisk data = load_dataset_dir(data_dir, &warnings);
  for (const auto& w : warnings) std::cerr << "row " << w.row << ": " << w.message << "\n";

  std::ifstream lstm_is(lstm_path);
  if (!lstm_is) throw Error("cannot open " + lstm_path);
  LstmEstimator lstm_est(load_lstm(lstm_is));
  std::ifstream dvbf_is(dvbf_path);
  if (!dvbf_is) throw Error("cannot open " + dvbf_path);
  DvbfEstimator dvbf_est(load_dvbf(dvbf_is));

  const double sigma = data.meta.has("noise_sigma") ? data.meta.get_double("noise_sigma")
                                                    : cfg.noise_sigma;
  SpikeSpec spec;
  spec.magnitude = cfg.spike_magnitude_sigmas * sigma;
  spec.duration = cfg.spike_duration;
  spec.sensor = cfg.spike_sensor;
  spec.locations = cfg.spike_locations;

  const SpikeReport single = spike_experiment(lstm_est, dvbf_est, data.test, data.stats, spec);
  SpikeSpec all = spec;
  all.all_sensors = true;
  const SpikeReport unanimous = spike_experiment(lstm_est, dvbf_est, data.test, data.stats, all);

  std::ofstream os(out_dir + "/spike.csv");
  if (!os) throw Error("cannot write spike.csv");
  write_spike_series_csv(os, single);

  KvFile summary = spike_summary_kv(single);
  summary.set_double("all_sensors_mean_peak_lstm", unanimous.mean_peak_lstm);
  summary.set_double("all_sensors_mean_peak_dvbf", unanimous.mean_peak_dvbf);
  summary.set_double("all_sensors_dvbf_lstm_ratio", unanimous.ratio);
  summary.write_file(out_dir + "/spike_summary.txt", kReportFormatLine);
  echo_config(cfg, out_dir);
  std::cout << "spike: dvbf/lstm peak-deviation ratio " << single.ratio
            << " (all-sensor variant " << unanimous.ratio << ")\n";
  return kExitOk;
}

int cmd_filter(const std::string& model_path) {
  std::ifstream is(model_path);
  if (!is) throw Error("cannot open " + model_path);
  if (model_kind_of(model_path) != "dvbf")
    throw Error("filter: streaming requires a dvbf model");
  const DvbfModel model = load_dvbf(is);
  run_filter_stream(model, std::cin, std::cout, std::cerr);
  return kExitOk;
}

int cmd_report(const std::string& dir) {
  bool any = false;
  for (const char* name : {"summary.txt", "spike_summary.txt"}) {
    const std::string path = dir + "/" + name;
    if (!fs::exists(path)) continue;
    any = true;
    const KvFile kv = KvFile::read_file(path, kReportFormatLine);
    std::cout << "== " << name << "\n";
    for (const auto& [k, v] : kv.items()) std::cout << "  " << k << " = " << v << "\n";
  }
  if (!any) {
    std::cerr << "report: no summary files under " << dir << "\n";
    return kExitData;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"magnetic ball-and-socket joint pose estimation pipeline"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string out_dir, data_dir, model_path, lstm_path, dvbf_path, model_kind, split = "test";
  std::string report_dir;
  bool oracle = false;
  std::optional<int> steps_override, epochs_override;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", flags.config_path, "configuration file (key = value)");
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t s) { flags.seed = s; }, "override the seed");
  };

  auto* generate = app.add_subcommand("generate", "simulate a dataset and write CSV splits");
  add_common(generate);
  generate->add_option("--out", out_dir, "output directory")->required();
  generate->add_option_function<int>(
      "--steps", [&](int s) { steps_override = s; }, "override n_steps");

  auto* train = app.add_subcommand("train", "train a model on a generated dataset");
  add_common(train);
  train->add_option("--model", model_kind, "model kind: lstm or dvbf")->required();
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option_function<int>(
      "--epochs", [&](int e) { epochs_override = e; }, "override epoch count");

  auto* eval = app.add_subcommand("eval", "evaluate a model file on a dataset split");
  add_common(eval);
  eval->add_option("--model-file", model_path, "trained model file");
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--out", out_dir, "output directory")->required();
  eval->add_option("--split", split, "train, val, or test (default test)");
  eval->add_flag("--oracle", oracle, "debug: score the ground truth against itself");

  auto* spike = app.add_subcommand("spike", "run the spike-robustness comparison");
  add_common(spike);
  spike->add_option("--lstm", lstm_path, "trained lstm model file")->required();
  spike->add_option("--dvbf", dvbf_path, "trained dvbf model file")->required();
  spike->add_option("--data", data_dir, "dataset directory")->required();
  spike->add_option("--out", out_dir, "output directory")->required();

  auto* filter = app.add_subcommand("filter", "stream rows from stdin through the filter");
  filter->add_option("--model-file", model_path, "trained dvbf model file")->required();

  auto* report = app.add_subcommand("report", "print run summaries from an output directory");
  report->add_option("--dir", report_dir, "directory holding summary files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (generate->parsed()) return cmd_generate(flags, out_dir, steps_override);
    if (train->parsed()) return cmd_train(flags, model_kind, data_dir, out_dir, epochs_override);
    if (eval->parsed()) {
      if (!oracle && model_path.empty()) {
        std::cerr << "eval: --model-file is required unless --oracle is given\n";
        return kExitUsage;
      }
      return cmd_eval(flags, model_path, data_dir, out_dir, split, oracle);
    }
    if (spike->parsed()) return cmd_spike(flags, lstm_path, dvbf_path, data_dir, out_dir);
    if (filter->parsed()) return cmd_filter(model_path);
    if (report->parsed()) return cmd_report(report_dir);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.message << "\n";
    return kExitUsage;
  } catch (const VersionMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitVersion;
  } catch (const StatsMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
