#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "magpose/autodiff.hpp"
#include "magpose/errors.hpp"
#include "magpose/rng.hpp"

namespace magpose {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Named parameter tensors plus Adam state. Shapes are fixed at creation;
// iteration order is creation order, which persistence and binding rely on.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<double> m;  // first moment
    std::vector<double> v;  // second moment
  };

  std::vector<double>& create(const std::string& name, std::vector<int> shape) {
    if (index_.count(name)) throw Error("parameter already exists: " + name);
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    Entry e;
    e.name = name;
    e.shape = std::move(shape);
    e.value.assign(n, 0.0);
    e.grad.assign(n, 0.0);
    e.m.assign(n, 0.0);
    e.v.assign(n, 0.0);
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
    return entries_.back().value;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Entry& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return entries_[it->second];
  }
  const Entry& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return entries_[it->second];
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_)
      for (auto& g : e.grad) g = 0.0;
  }

  // Bias-corrected Adam update; gradients are zeroed afterwards.
  void adam_step(const AdamConfig& cfg) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count_));
    for (auto& e : entries_) {
      for (std::size_t i = 0; i < e.value.size(); ++i) {
        const double g = e.grad[i];
        e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g;
        e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = e.m[i] / bc1;
        const double vhat = e.v[i] / bc2;
        e.value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        e.grad[i] = 0.0;
      }
    }
  }

  std::int64_t step_count() const { return step_count_; }

  // ---- persistence (versioned text format, exact double round trip) ----

  static constexpr const char* kFormatLine = "# magpose-model-v1";

  void save(std::ostream& os, const std::map<std::string, std::string>& meta) const {
    os << kFormatLine << "\n";
    for (const auto& [k, v] : meta) os << k << " = " << v << "\n";
    os << "\n";
    char buf[40];
    for (const auto& e : entries_) {
      os << "param " << e.name << " " << e.shape.size();
      for (int d : e.shape) os << " " << d;
      os << "\n";
      for (std::size_t i = 0; i < e.value.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", e.value[i]);
        os << (i ? " " : "") << buf;
      }
      os << "\n";
    }
  }

  static ParamStore load(std::istream& is, std::map<std::string, std::string>& meta) {
    std::string line;
    if (!std::getline(is, line) || line != kFormatLine)
      throw VersionMismatch("model file: unsupported format line '" + line + "'");
    ParamStore store;
    // metadata block up to the first blank line
    while (std::getline(is, line)) {
      if (line.empty()) break;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError("model file: bad metadata line '" + line + "'");
      std::string k = line.substr(0, eq);
      std::string v = line.substr(eq + 1);
      trim(k);
      trim(v);
      meta[k] = v;
    }
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::istringstream hs(line);
      std::string tag, name;
      std::size_t ndim = 0;
      hs >> tag >> name >> ndim;
      if (tag != "param" || hs.fail())
        throw ParseError("model file: bad param header '" + line + "'");
      std::vector<int> shape(ndim);
      for (auto& d : shape) hs >> d;
      if (hs.fail()) throw ParseError("model file: bad shape in '" + line + "'");
      auto& value = store.create(name, shape);
      if (!std::getline(is, line)) throw ParseError("model file: missing values for " + name);
      std::istringstream vs(line);
      for (auto& x : value) vs >> x;
      if (vs.fail()) throw ParseError("model file: bad values for " + name);
    }
    return store;
  }

  static void trim(std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::int64_t step_count_ = 0;
};

inline std::vector<double> parse_doubles(const std::string& s) {
  std::istringstream is(s);
  std::vector<double> out;
  double v;
  while (is >> v) out.push_back(v);
  return out;
}

inline std::string doubles_to_string(const std::vector<double>& vs) {
  std::string out;
  char buf[40];
  for (std::size_t i = 0; i < vs.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", vs[i]);
    if (i) out += ' ';
    out += buf;
  }
  return out;
}

// Xavier-uniform weights; callers pass fan_in/fan_out of the layer.
inline void init_xavier(std::vector<double>& w, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& x : w) x = rng.uniform(-limit, limit);
}

// Places parameters on a tape as leaves, lazily per tensor, and moves tape
// adjoints back into ParamStore gradients after backward().
class Binding {
 public:
  Binding(Tape& tape, ParamStore& store) : tape_(tape), store_(store) {}

  const std::vector<Var>& get(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const auto& e = store_.at(name);
    std::vector<Var> vars;
    vars.reserve(e.value.size());
    for (double v : e.value) vars.push_back(tape_.leaf(v));
    return bound_.emplace(name, std::move(vars)).first->second;
  }

  // Accumulates (+=) so several backward passes can share one optimizer step.
  void add_grads() {
    for (const auto& [name, vars] : bound_) {
      auto& e = store_.at(name);
      for (std::size_t i = 0; i < vars.size(); ++i) e.grad[i] += tape_.grad(vars[i]);
    }
  }

  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  ParamStore& store_;
  std::unordered_map<std::string, std::vector<Var>> bound_;
};

// ---- gradient-check harness ----

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares reverse-mode gradients of a scalar loss against central finite
// differences over every parameter entry. `build` records the loss on a
// tape; `plain`, when given, evaluates the same loss without a tape (used to
// keep the 2 * n_params re-evaluations cheap). Relative error is
// |a - n| / max(|a|, |n|, floor).
inline GradCheckReport check_gradients(
    ParamStore& store, const std::function<Var(Tape&, Binding&)>& build,
    const std::function<double(const ParamStore&)>& plain = nullptr,
    double h = 1e-5, double floor = 1e-3) {
  Tape tape;
  Binding binding(tape, store);
  const Var loss = build(tape, binding);
  tape.backward(loss);
  store.zero_grads();
  binding.add_grads();

  const auto eval = [&](const ParamStore& s) -> double {
    if (plain) return plain(s);
    Tape t;
    ParamStore& mutable_s = const_cast<ParamStore&>(s);
    Binding b(t, mutable_s);
    return build(t, b).value();
  };

  GradCheckReport report;
  for (auto& e : store.entries()) {
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double saved = e.value[i];
      e.value[i] = saved + h;
      const double up = eval(store);
      e.value[i] = saved - h;
      const double down = eval(store);
      e.value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = e.grad[i];
      const double denom = std::fmax(std::fmax(std::fabs(analytic), std::fabs(numeric)), floor);
      const double rel = std::fabs(analytic - numeric) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = e.name;
        report.worst_index = i;
        report.analytic = analytic;
        report.numeric = numeric;
      }
    }
  }
  store.zero_grads();
  return report;
}

}  // namespace magpose
