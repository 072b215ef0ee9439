// Copyright 2026 The fdnfit Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

#include "fdnfit/acoustics.hpp"
#include "fdnfit/audio_io.hpp"
#include "fdnfit/fdn.hpp"
#include "fdnfit/optim.hpp"
#include "fdnfit/spectral.hpp"

namespace fdnfit {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

namespace detail {

inline json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json vector_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline const json& require(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw IoError(std::string("missing field \"") + key + "\"");
  return j.at(key);
}

inline double to_number(const json& v, const char* what) {
  if (!v.is_number()) throw IoError(std::string("field \"") + what + "\" must be a number");
  return v.get<double>();
}

inline Eigen::VectorXd json_to_vector(const json& a, const char* what) {
  if (!a.is_array()) throw IoError(std::string("field \"") + what + "\" must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = to_number(a[i], what);
  return v;
}

inline Eigen::MatrixXd json_to_matrix(const json& a, const char* what) {
  if (!a.is_array() || a.empty() || !a[0].is_array())
    throw IoError(std::string("field \"") + what + "\" must be a non-empty array of rows");
  const std::size_t cols = a[0].size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < a.size(); ++r) {
    if (!a[r].is_array() || a[r].size() != cols)
      throw IoError(std::string("field \"") + what + "\" has ragged rows");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = to_number(a[r][c], what);
  }
  return m;
}

inline void check_version(const json& j) {
  const json& v = require(j, "format_version");
  if (!v.is_number_integer() || v.get<int>() != kFormatVersion)
    throw IoError("unsupported format_version " + v.dump());
}

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace detail

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  write_text_atomically(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Learnable parameters together with the fixed structure they belong to.
struct ParamsDocument {
  FdnRawParams raw;
  DelayVector delays;
  double sample_rate = kSampleRate;
};

inline json to_json(const ParamsDocument& d) {
  json j;
  j["format_version"] = kFormatVersion;
  j["p_T"] = detail::vector_to_json(d.raw.p_T);
  j["p_U"] = detail::matrix_to_json(d.raw.p_U);
  j["p_gamma"] = detail::matrix_to_json(d.raw.p_gamma);
  j["b"] = detail::vector_to_json(d.raw.b);
  j["c"] = detail::vector_to_json(d.raw.c);
  j["g"] = d.raw.g;
  j["delays"] = d.delays.m;
  j["direct_delay"] = d.delays.direct;
  j["sample_rate"] = d.sample_rate;
  return j;
}

inline ParamsDocument params_from_json(const json& j) {
  detail::check_version(j);
  ParamsDocument d;
  d.raw.p_T = detail::json_to_vector(detail::require(j, "p_T"), "p_T");
  d.raw.p_U = detail::json_to_matrix(detail::require(j, "p_U"), "p_U");
  d.raw.p_gamma = detail::json_to_matrix(detail::require(j, "p_gamma"), "p_gamma");
  d.raw.b = detail::json_to_vector(detail::require(j, "b"), "b");
  d.raw.c = detail::json_to_vector(detail::require(j, "c"), "c");
  d.raw.g = detail::to_number(detail::require(j, "g"), "g");
  const json& delays = detail::require(j, "delays");
  if (!delays.is_array()) throw IoError("field \"delays\" must be an array");
  d.delays.m.clear();
  for (const auto& v : delays) {
    if (!v.is_number_integer()) throw IoError("delays must be integers");
    d.delays.m.push_back(v.get<long>());
  }
  const json& direct = detail::require(j, "direct_delay");
  if (!direct.is_number_integer()) throw IoError("direct_delay must be an integer");
  d.delays.direct = direct.get<long>();
  d.sample_rate = detail::to_number(detail::require(j, "sample_rate"), "sample_rate");
  try {
    d.delays.validate();
    d.raw.validate(d.delays.size(), GeqDesign::kStages);
  } catch (const Error& e) {
    throw IoError(std::string("invalid parameter document: ") + e.what());
  }
  return d;
}

inline ParamsDocument read_params(const std::filesystem::path& path) {
  try {
    return params_from_json(read_json_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline void write_params(const std::filesystem::path& path, const ParamsDocument& d) {
  write_json_file(path, to_json(d));
}

/// Realized system; shares the structural field names of the parameter file.
inline json to_json(const FdnSystem& s) {
  json j;
  j["format_version"] = kFormatVersion;
  j["U"] = detail::matrix_to_json(s.U);
  j["tone_gains_db"] = s.tone_gains_db;
  j["atten_gains_db"] = detail::matrix_to_json(s.atten_gains_db);
  j["b"] = detail::vector_to_json(s.b);
  j["c"] = detail::vector_to_json(s.c);
  j["g"] = s.g;
  j["delays"] = s.delays.m;
  j["direct_delay"] = s.delays.direct;
  j["sample_rate"] = s.geq.sample_rate;
  return j;
}

inline FdnSystem system_from_json(const json& j) {
  detail::check_version(j);
  FdnSystem s;
  s.U = detail::json_to_matrix(detail::require(j, "U"), "U");
  const Eigen::VectorXd tone = detail::json_to_vector(detail::require(j, "tone_gains_db"), "tone_gains_db");
  s.tone_gains_db.assign(tone.data(), tone.data() + tone.size());
  s.atten_gains_db = detail::json_to_matrix(detail::require(j, "atten_gains_db"), "atten_gains_db");
  s.b = detail::json_to_vector(detail::require(j, "b"), "b");
  s.c = detail::json_to_vector(detail::require(j, "c"), "c");
  s.g = detail::to_number(detail::require(j, "g"), "g");
  s.delays.m.clear();
  for (const auto& v : detail::require(j, "delays")) s.delays.m.push_back(v.get<long>());
  s.delays.direct = detail::require(j, "direct_delay").get<long>();
  s.geq.sample_rate = detail::to_number(detail::require(j, "sample_rate"), "sample_rate");
  try {
    s.validate();
  } catch (const Error& e) {
    throw IoError(std::string("invalid system document: ") + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Everything the command-line tool can be configured with.
struct CliConfig {
  FitConfig fit;
  double onset_db = -20.0;
};

inline json to_json(const CliConfig& c) {
  const FitConfig& f = c.fit;
  json j;
  j["format_version"] = kFormatVersion;
  j["max_steps"] = f.max_steps;
  j["lr"] = f.lr;
  json sched;
  switch (f.lr_schedule.kind) {
    case LrSchedule::Kind::Constant: sched["kind"] = "constant"; break;
    case LrSchedule::Kind::Cosine: sched["kind"] = "cosine"; break;
    case LrSchedule::Kind::Step:
      sched["kind"] = "step";
      sched["factor"] = f.lr_schedule.factor;
      sched["every"] = f.lr_schedule.every;
      break;
  }
  j["lr_schedule"] = sched;
  j["weight_decay"] = f.weight_decay;
  j["patience"] = f.patience;
  j["seed"] = f.seed;
  j["lambda_sparsity"] = f.loss_weights.lambda_sparsity;
  j["epsilon"] = f.loss_weights.epsilon;
  json set = json::array();
  for (const auto& s : f.spectral_set) set.push_back({{"n_fft", s.n_fft}, {"n_hop", s.n_hop}, {"n_mel", s.n_mel}});
  j["spectral_set"] = set;
  j["fft_length"] = f.fft_length;
  j["onset_db"] = c.onset_db;
  return j;
}

/// Fields absent from `j` keep their defaults. Unknown fields are rejected.
inline CliConfig config_from_json(const json& j) {
  detail::check_version(j);
  static const char* known[] = {"format_version", "max_steps", "lr", "lr_schedule", "weight_decay",
                                "patience", "seed", "lambda_sparsity", "epsilon", "spectral_set",
                                "fft_length", "onset_db"};
  for (const auto& [key, _] : j.items())
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) ==
        std::end(known))
      throw ConfigurationError("unknown configuration field \"" + key + "\"");
  CliConfig c;
  FitConfig& f = c.fit;
  auto uint_field = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_unsigned() && !(j[key].is_number_integer() && j[key].get<long long>() >= 0))
      throw ConfigurationError(std::string(key) + " must be a non-negative integer");
    dst = j[key].get<std::decay_t<decltype(dst)>>();
  };
  auto real_field = [&](const char* key, double& dst) {
    if (!j.contains(key)) return;
    if (!j[key].is_number()) throw ConfigurationError(std::string(key) + " must be a number");
    dst = j[key].get<double>();
  };
  uint_field("max_steps", f.max_steps);
  real_field("lr", f.lr);
  if (j.contains("lr_schedule")) {
    const json& s = j["lr_schedule"];
    const std::string kind = s.value("kind", "cosine");
    if (kind == "constant") f.lr_schedule.kind = LrSchedule::Kind::Constant;
    else if (kind == "cosine") f.lr_schedule.kind = LrSchedule::Kind::Cosine;
    else if (kind == "step") f.lr_schedule.kind = LrSchedule::Kind::Step;
    else throw ConfigurationError("unknown lr_schedule kind \"" + kind + "\"");
    f.lr_schedule.factor = s.value("factor", f.lr_schedule.factor);
    f.lr_schedule.every = s.value("every", f.lr_schedule.every);
  }
  real_field("weight_decay", f.weight_decay);
  uint_field("patience", f.patience);
  uint_field("seed", f.seed);
  real_field("lambda_sparsity", f.loss_weights.lambda_sparsity);
  real_field("epsilon", f.loss_weights.epsilon);
  if (j.contains("spectral_set")) {
    f.spectral_set.clear();
    for (const auto& s : j["spectral_set"])
      f.spectral_set.push_back({s.at("n_fft").get<std::size_t>(), s.at("n_hop").get<std::size_t>(),
                                s.at("n_mel").get<std::size_t>()});
  }
  uint_field("fft_length", f.fft_length);
  real_field("onset_db", c.onset_db);
  f.validate();
  if (!(c.onset_db < 0.0)) throw ConfigurationError("onset_db must be negative");
  return c;
}

// ---------------------------------------------------------------------------
// Loss records and trajectories
// ---------------------------------------------------------------------------

inline json to_json(const LossBreakdown& lb, const SpectralConfigSet& set) {
  json per = json::array();
  const auto sorted = sorted_by_fft_size(set);
  for (std::size_t r = 0; r < lb.spectral_per_resolution.size(); ++r) {
    json e = {{"L_Y", lb.spectral_per_resolution[r]}};
    if (r < sorted.size()) {
      e["n_fft"] = sorted[r].n_fft;
      e["n_hop"] = sorted[r].n_hop;
      e["n_mel"] = sorted[r].n_mel;
    }
    per.push_back(e);
  }
  return {{"L_Y", lb.spectral}, {"L_U", lb.sparsity}, {"total", lb.total}, {"per_resolution", per}};
}

inline std::string trajectory_csv(const std::vector<TrajectoryRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "step,L_Y,L_U,total,lr\n";
  for (const auto& r : rows)
    os << r.step << ',' << r.spectral << ',' << r.sparsity << ',' << r.total << ',' << r.lr << '\n';
  return os.str();
}

inline std::vector<TrajectoryRow> read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "step,L_Y,L_U,total,lr") throw IoError(path.string() + ": unexpected trajectory header");
  std::vector<TrajectoryRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    TrajectoryRow r;
    std::getline(ss, cell, ',');
    r.step = std::stoul(cell);
    std::getline(ss, cell, ',');
    r.spectral = std::stod(cell);
    std::getline(ss, cell, ',');
    r.sparsity = std::stod(cell);
    std::getline(ss, cell, ',');
    r.total = std::stod(cell);
    std::getline(ss, cell, ',');
    r.lr = std::stod(cell);
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Acoustic report
// ---------------------------------------------------------------------------

inline json to_json(const Correlation& c) {
  return {{"value", detail::number_or_null(c.value)},
          {"zero_variance", c.zero_variance},
          {"undefined", c.undefined}};
}

inline json to_json(const AcousticReport& r) {
  json bands = json::array();
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  auto clarity = [](const ClarityResult& c) {
    return c.infinite || !std::isfinite(c.db) ? json(nullptr) : json(c.db);
  };
  for (const auto& b : r.bands) {
    bands.push_back({{"center_hz", b.center_hz},
                     {"t30_ref_s", opt(b.t30_ref)},
                     {"t30_est_s", opt(b.t30_est)},
                     {"c50_ref_db", clarity(b.c50_ref)},
                     {"c50_est_db", clarity(b.c50_est)},
                     {"t30_valid", b.t30_valid()},
                     {"c50_valid", b.c50_valid()}});
  }
  return {{"format_version", kFormatVersion},
          {"bands", bands},
          {"aggregate",
           {{"t30_mape_percent", detail::number_or_null(r.t30_mape_percent)},
            {"c50_mae_db", detail::number_or_null(r.c50_mae_db)},
            {"t30_pcc", to_json(r.t30_pcc)},
            {"c50_pcc", to_json(r.c50_pcc)}}},
          {"flags", r.flags}};
}

/// One row per band plus an aggregate row; empty cells for undefined values.
inline std::string report_csv(const AcousticReport& r) {
  std::ostringstream os;
  os.precision(10);
  auto cell = [&os](double v) {
    if (std::isfinite(v)) os << v;
  };
  os << "band_hz,t30_ref_s,t30_est_s,c50_ref_db,c50_est_db,t30_mape_percent,c50_mae_db,t30_pcc,c50_pcc\n";
  for (const auto& b : r.bands) {
    os << b.center_hz << ',';
    cell(b.t30_ref.value_or(NAN));
    os << ',';
    cell(b.t30_est.value_or(NAN));
    os << ',';
    cell(b.c50_ref.infinite ? NAN : b.c50_ref.db);
    os << ',';
    cell(b.c50_est.infinite ? NAN : b.c50_est.db);
    os << ",,,,\n";
  }
  os << "aggregate,,,,,";
  cell(r.t30_mape_percent);
  os << ',';
  cell(r.c50_mae_db);
  os << ',';
  cell(r.t30_pcc.value);
  os << ',';
  cell(r.c50_pcc.value);
  os << '\n';
  return os.str();
}

}  // namespace fdnfit
