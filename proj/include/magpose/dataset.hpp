#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "magpose/errors.hpp"
#include "magpose/kv.hpp"
#include "magpose/sim.hpp"

namespace magpose {

inline constexpr const char* kDatasetFormatLine = "# magpose-dataset-v1";
inline constexpr const char* kMetaFormatLine = "# magpose-meta-v1";

// CSV schema, one row per step:
//   t, u_rx,u_ry,u_rz, y00..y22 (row-major), x{s}_0,x{s}_1,x{s}_2 per sensor.
inline std::string dataset_header(int n_sensors) {
  std::string h = "t,u_rx,u_ry,u_rz";
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) h += ",y" + std::to_string(i) + std::to_string(j);
  for (int s = 0; s < n_sensors; ++s)
    for (int c = 0; c < 3; ++c) h += ",x" + std::to_string(s) + "_" + std::to_string(c);
  return h;
}

inline void append_csv_value(std::string& row, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  row += ',';
  row += buf;
}

inline void write_dataset_csv(std::ostream& os, const std::vector<Sample>& samples,
                              int n_sensors) {
  os << kDatasetFormatLine << "\n" << dataset_header(n_sensors) << "\n";
  std::string row;
  for (const Sample& s : samples) {
    row.clear();
    row += std::to_string(s.t);
    append_csv_value(row, s.u.rx);
    append_csv_value(row, s.u.ry);
    append_csv_value(row, s.u.rz);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) append_csv_value(row, s.y.m(i, j));
    for (double v : s.x) append_csv_value(row, v);
    os << row << "\n";
  }
}

struct CsvWarning {
  int row = 0;  // 1-based data row number
  std::string message;
};

// Reads a dataset CSV. Malformed rows are skipped and reported through
// `warnings` so callers can log and continue.
inline std::vector<Sample> read_dataset_csv(std::istream& is, int& n_sensors,
                                            std::vector<CsvWarning>* warnings = nullptr) {
  std::string line;
  if (!std::getline(is, line) || line != kDatasetFormatLine)
    throw VersionMismatch("dataset csv: unsupported format line");
  if (!std::getline(is, line)) throw ParseError("dataset csv: missing header row");
  int columns = 1;
  for (char ch : line) columns += ch == ',' ? 1 : 0;
  if (columns < 13 + 3 || (columns - 13) % 3 != 0)
    throw ParseError("dataset csv: unexpected column count in header");
  n_sensors = (columns - 13) / 3;

  std::vector<Sample> samples;
  std::vector<double> fields;
  fields.reserve(static_cast<std::size_t>(columns));
  int row_no = 0;
  while (std::getline(is, line)) {
    ++row_no;
    if (line.empty()) continue;
    fields.clear();
    const char* p = line.c_str();
    bool bad = false;
    while (true) {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p) {
        bad = true;
        break;
      }
      fields.push_back(v);
      p = end;
      if (*p == ',') {
        ++p;
      } else if (*p == '\0' || *p == '\r') {
        break;
      } else {
        bad = true;
        break;
      }
    }
    if (bad || static_cast<int>(fields.size()) != columns) {
      if (warnings) warnings->push_back({row_no, "malformed row, skipped"});
      continue;
    }
    Sample s;
    s.t = static_cast<long>(fields[0]);
    s.u.rx = fields[1];
    s.u.ry = fields[2];
    s.u.rz = fields[3];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) s.y.m(i, j) = fields[static_cast<std::size_t>(4 + i * 3 + j)];
    s.x.assign(fields.begin() + 13, fields.end());
    samples.push_back(std::move(s));
  }
  return samples;
}

// ---- sidecar metadata ----

inline void stats_to_kv(const StandardStats& stats, KvFile& kv) {
  kv.set_doubles("stats_mean", stats.mean);
  kv.set_doubles("stats_std", stats.stdev);
}

inline StandardStats stats_from_kv(const KvFile& kv) {
  StandardStats s;
  s.mean = kv.get_doubles("stats_mean");
  s.stdev = kv.get_doubles("stats_std");
  if (s.mean.size() != s.stdev.size())
    throw ParseError("standardization stats: mean/std length mismatch");
  return s;
}

struct DatasetOnDisk {
  std::vector<Sample> train, val, test;
  StandardStats stats;
  int n_sensors = 0;
  KvFile meta;
};

inline std::vector<Sample> read_dataset_file(const std::string& path, int& n_sensors,
                                             std::vector<CsvWarning>* warnings = nullptr) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  return read_dataset_csv(is, n_sensors, warnings);
}

// Loads the three split files plus meta.txt from a dataset directory.
inline DatasetOnDisk load_dataset_dir(const std::string& dir,
                                      std::vector<CsvWarning>* warnings = nullptr) {
  DatasetOnDisk d;
  d.meta = KvFile::read_file(dir + "/meta.txt", kMetaFormatLine);
  d.stats = stats_from_kv(d.meta);
  int ns_train = 0, ns_val = 0, ns_test = 0;
  d.train = read_dataset_file(dir + "/train.csv", ns_train, warnings);
  d.val = read_dataset_file(dir + "/val.csv", ns_val, warnings);
  d.test = read_dataset_file(dir + "/test.csv", ns_test, warnings);
  if (ns_train != ns_val || ns_train != ns_test)
    throw ParseError("dataset splits disagree on sensor count");
  d.n_sensors = ns_train;
  if (d.stats.mean.size() != static_cast<std::size_t>(d.n_sensors * 3))
    throw ParseError("standardization stats do not match sensor count");
  return d;
}

}  // namespace magpose
