#pragma once

// File formats: per-matrix CSV, dataset and policy JSON, trace CSV/JSON.
//
// Matrix CSV: first line "rows,cols", then one comma-separated line per row,
// values printed with 17 significant digits.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "deepo/errors.hpp"
#include "deepo/lqt.hpp"
#include "deepo/opt.hpp"
#include "deepo/plant.hpp"
#include "deepo/policy.hpp"

namespace deepo::io {

using json = nlohmann::json;

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_matrix_csv(std::ostream& os, const Matrix& m) {
  os << m.rows() << ',' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      os << format_double(m(i, j));
    }
    os << '\n';
  }
}

inline Matrix read_matrix_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw InputError("matrix csv: missing header");
  long rows = -1, cols = -1;
  char comma = 0;
  std::istringstream hs(line);
  if (!(hs >> rows >> comma >> cols) || comma != ',' || rows < 0 || cols < 0) {
    throw InputError("matrix csv: header must be 'rows,cols'");
  }
  Matrix m(rows, cols);
  for (long i = 0; i < rows; ++i) {
    if (!std::getline(is, line)) throw InputError("matrix csv: fewer rows than declared");
    std::istringstream ls(line);
    std::string cell;
    long j = 0;
    while (std::getline(ls, cell, ',')) {
      if (j >= cols) throw InputError("matrix csv: too many columns");
      try {
        m(i, j++) = std::stod(cell);
      } catch (const std::exception&) {
        throw InputError("matrix csv: bad number '" + cell + "'");
      }
    }
    if (j != cols) throw InputError("matrix csv: too few columns");
  }
  return m;
}

inline void save_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path.string());
  write_matrix_csv(os, m);
}

inline Matrix load_matrix_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot read " + path.string());
  return read_matrix_csv(is);
}

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json vector_to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

/// Reads a row-major nested array. `cols` disambiguates empty matrices.
inline Matrix matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols,
                               const std::string& name) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw InputError(name + ": expected " + std::to_string(rows) + " rows");
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw InputError(name + ": expected " + std::to_string(cols) + " columns");
    }
    for (Eigen::Index k = 0; k < cols; ++k) {
      if (!row[static_cast<std::size_t>(k)].is_number()) throw InputError(name + ": non-numeric entry");
      m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
    }
  }
  return m;
}

/// Reads a nested array whose shape is taken from the data itself.
inline Matrix matrix_from_json(const json& j, const std::string& name) {
  if (!j.is_array()) throw InputError(name + ": expected a nested array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows == 0 ? 0 : static_cast<Eigen::Index>(j[0].size());
  return matrix_from_json(j, rows, cols, name);
}

inline Vector vector_from_json(const json& j, Eigen::Index size, const std::string& name) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != size) {
    throw InputError(name + ": expected " + std::to_string(size) + " entries");
  }
  Vector v(size);
  for (Eigen::Index i = 0; i < size; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) throw InputError(name + ": non-numeric entry");
    v(i) = j[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

// --- datasets ---------------------------------------------------------------

/// {n, m, T, X0, U0, X1, W0?} with row-major nested arrays.
inline json dataset_to_json(const OfflineDataset& ds) {
  json j;
  j["n"] = ds.n();
  j["m"] = ds.m();
  j["T"] = ds.t_len();
  j["X0"] = matrix_to_json(ds.x0_seq);
  j["U0"] = matrix_to_json(ds.u0_seq);
  j["X1"] = matrix_to_json(ds.x1_seq);
  if (ds.w0_seq) j["W0"] = matrix_to_json(*ds.w0_seq);
  return j;
}

inline OfflineDataset dataset_from_json(const json& j) {
  for (const char* key : {"n", "m", "T", "X0", "U0", "X1"}) {
    if (!j.contains(key)) throw InputError(std::string("dataset: missing key ") + key);
  }
  for (const auto& item : j.items()) {
    const std::string& k = item.key();
    if (k != "n" && k != "m" && k != "T" && k != "X0" && k != "U0" && k != "X1" && k != "W0") {
      throw InputError("dataset: unknown key " + k);
    }
  }
  const auto n = j.at("n").get<Eigen::Index>();
  const auto m = j.at("m").get<Eigen::Index>();
  const auto t = j.at("T").get<Eigen::Index>();
  OfflineDataset ds;
  ds.x0_seq = matrix_from_json(j.at("X0"), n, t, "X0");
  ds.u0_seq = matrix_from_json(j.at("U0"), m, t, "U0");
  ds.x1_seq = matrix_from_json(j.at("X1"), n, t, "X1");
  if (j.contains("W0")) ds.w0_seq = matrix_from_json(j.at("W0"), n, t, "W0");
  return ds;
}

inline void save_dataset_csv(const std::filesystem::path& dir, const OfflineDataset& ds) {
  std::filesystem::create_directories(dir);
  save_matrix_csv(dir / "X0.csv", ds.x0_seq);
  save_matrix_csv(dir / "U0.csv", ds.u0_seq);
  save_matrix_csv(dir / "X1.csv", ds.x1_seq);
  if (ds.w0_seq) save_matrix_csv(dir / "W0.csv", *ds.w0_seq);
}

inline OfflineDataset load_dataset_csv(const std::filesystem::path& dir) {
  OfflineDataset ds;
  ds.x0_seq = load_matrix_csv(dir / "X0.csv");
  ds.u0_seq = load_matrix_csv(dir / "U0.csv");
  ds.x1_seq = load_matrix_csv(dir / "X1.csv");
  if (std::filesystem::exists(dir / "W0.csv")) ds.w0_seq = load_matrix_csv(dir / "W0.csv");
  const Eigen::Index t = ds.x0_seq.cols();
  if (ds.u0_seq.cols() != t || ds.x1_seq.cols() != t || ds.x1_seq.rows() != ds.x0_seq.rows() ||
      (ds.w0_seq && (ds.w0_seq->cols() != t || ds.w0_seq->rows() != ds.x0_seq.rows()))) {
    throw DimensionError("dataset csv: inconsistent matrix shapes");
  }
  return ds;
}

// --- policies ---------------------------------------------------------------

inline json gain_policy_to_json(const GainPolicy& p) {
  return {{"n", p.n()}, {"m", p.m()}, {"K", matrix_to_json(p.k_gain)}, {"l", vector_to_json(p.l_ff)}};
}

inline GainPolicy gain_policy_from_json(const json& j) {
  if (!j.contains("K") || !j.contains("l")) throw InputError("gain policy: needs K and l");
  const Vector l = vector_from_json(j.at("l"), static_cast<Eigen::Index>(j.at("l").size()), "l");
  const Eigen::Index m = l.size();
  Eigen::Index n = 0;
  if (j.contains("n")) {
    n = j.at("n").get<Eigen::Index>();
  } else if (m > 0 && j.at("K").is_array() && !j.at("K").empty()) {
    n = static_cast<Eigen::Index>(j.at("K")[0].size());
  }
  if (j.contains("m") && j.at("m").get<Eigen::Index>() != m) throw DimensionError("gain policy: m mismatch");
  return {matrix_from_json(j.at("K"), m, n, "K"), l};
}

inline json covariance_policy_to_json(const CovariancePolicy& p) {
  return {{"n", p.n()}, {"m", p.dim() - p.n()}, {"V", matrix_to_json(p.v_mat)},
          {"h", vector_to_json(p.h_vec)}};
}

inline CovariancePolicy covariance_policy_from_json(const json& j) {
  if (!j.contains("V") || !j.contains("h")) throw InputError("covariance policy: needs V and h");
  const auto dim = static_cast<Eigen::Index>(j.at("h").size());
  Eigen::Index n = 0;
  if (j.contains("n")) {
    n = j.at("n").get<Eigen::Index>();
  } else if (dim > 0) {
    n = static_cast<Eigen::Index>(j.at("V")[0].size());
  }
  if (j.contains("m") && j.at("m").get<Eigen::Index>() + n != dim) {
    throw DimensionError("covariance policy: m + n does not match h");
  }
  return {matrix_from_json(j.at("V"), dim, n, "V"), vector_from_json(j.at("h"), dim, "h")};
}

// --- evaluations and traces -------------------------------------------------

inline json evaluation_to_json(const PolicyEvaluation& ev) {
  return {{"cost", ev.cost},
          {"rho", ev.rho},
          {"P_V", matrix_to_json(ev.p_v)},
          {"Y_V", matrix_to_json(ev.y_v)},
          {"E_V", matrix_to_json(ev.e_v)},
          {"g", vector_to_json(ev.g_xi)},
          {"G", vector_to_json(ev.g_cap)},
          {"Sigma_V", matrix_to_json(ev.sigma_v)},
          {"x_bar", vector_to_json(ev.x_bar)},
          {"Phi", matrix_to_json(ev.phi)}};
}

inline constexpr const char* kTraceHeader = "iter,cost,cost_gap,policy_error,grad_norm,rho";

inline void write_trace_csv(std::ostream& os, const IterateTrace& trace) {
  os << kTraceHeader << '\n';
  for (const IterateRecord& r : trace.records) {
    os << r.iter << ',' << format_double(r.cost) << ',' << format_double(r.cost_gap) << ','
       << format_double(r.policy_error) << ',' << format_double(r.grad_norm) << ','
       << format_double(r.rho) << '\n';
  }
}

inline json trace_to_json(const IterateTrace& trace) {
  json rows = json::array();
  for (const IterateRecord& r : trace.records) {
    rows.push_back({{"iter", r.iter},
                    {"cost", r.cost},
                    {"cost_gap", r.cost_gap},
                    {"policy_error", r.policy_error},
                    {"grad_norm", r.grad_norm},
                    {"rho", r.rho}});
  }
  json j{{"status", to_string(trace.status)},
         {"iterations", trace.iterations},
         {"optimal_cost", trace.reference.cost},
         {"cost_increases", trace.cost_increases},
         {"final_eta", trace.final_eta},
         {"records", std::move(rows)}};
  if (trace.failed_iteration) j["failed_iteration"] = *trace.failed_iteration;
  if (trace.true_optimal_cost) j["true_optimal_cost"] = *trace.true_optimal_cost;
  if (!trace.message.empty()) j["message"] = trace.message;
  return j;
}

}  // namespace deepo::io
