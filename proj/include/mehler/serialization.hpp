#pragma once

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mehler/feynman_kac.hpp"
#include "mehler/kernel.hpp"
#include "mehler/paths.hpp"
#include "mehler/riccati.hpp"

namespace mehler {

using json = nlohmann::json;

void atomic_write_file(const std::filesystem::path& path,
                       const std::string& contents);

inline json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Mat mat_from_json(const json& j, const std::string& name) {
  require(j.is_array() && !j.empty(), errc::config_error,
          name + " must be a nonempty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  require(j[0].is_array(), errc::config_error, name + " rows must be arrays");
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    require(j[i].is_array() && static_cast<Eigen::Index>(j[i].size()) == cols,
            errc::config_error, name + " rows must have equal length");
    for (Eigen::Index c = 0; c < cols; ++c) {
      require(j[i][c].is_number(), errc::config_error,
              name + " entries must be numbers");
      m(i, c) = j[i][c].get<double>();
    }
  }
  return m;
}

inline json vec_to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Vec vec_from_json(const json& j, const std::string& name) {
  require(j.is_array(), errc::config_error, name + " must be an array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    require(j[i].is_number(), errc::config_error,
            name + " entries must be numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

inline json kernel_to_json(const GaussianKernel& K) {
  return json{{"s", K.s},
              {"P", mat_to_json(K.P.m)},
              {"Q", mat_to_json(K.Q.m)},
              {"R", mat_to_json(K.R)},
              {"dim", K.dim()}};
}

inline GaussianKernel kernel_from_json(const json& j) {
  require(j.contains("s") && j.contains("P") && j.contains("Q") &&
              j.contains("R"),
          errc::config_error, "kernel record needs s, P, Q, R");
  GaussianKernel K = make_kernel(j.at("s").get<double>(),
                                 mat_from_json(j.at("P"), "P"),
                                 mat_from_json(j.at("Q"), "Q"),
                                 mat_from_json(j.at("R"), "R"));
  if (j.contains("dim"))
    require(j.at("dim").get<int>() == K.dim(), errc::config_error,
            "kernel dim field disagrees with matrices");
  return K;
}

inline json state_to_json(const EvolutionState& st) {
  return json{{"t", st.t},
              {"s", st.s},
              {"P", mat_to_json(st.P.m)},
              {"Q", mat_to_json(st.Q.m)},
              {"R", mat_to_json(st.R)}};
}

// CSV columns: t, s, then P, Q, R flattened row-major with headers like P_0_1.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const int n = traj.ops.n;
  os << "t,s";
  for (const char* block : {"P", "Q", "R"})
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) os << ',' << block << '_' << i << '_' << j;
  os << '\n';
  os.precision(17);
  for (const EvolutionState& st : traj.states) {
    os << st.t << ',' << st.s;
    for (const Mat* m : {&st.P.m, &st.Q.m, &st.R})
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) os << ',' << (*m)(i, j);
    os << '\n';
  }
}

inline void write_trajectory_csv(const std::string& path,
                                 const Trajectory& traj) {
  std::ostringstream os;
  write_trajectory_csv(os, traj);
  atomic_write_file(path, os.str());
}

inline json trajectory_to_json(const Trajectory& traj) {
  json states = json::array();
  for (const EvolutionState& st : traj.states) states.push_back(state_to_json(st));
  return json{{"states", std::move(states)},
              {"dim", traj.ops.n},
              {"alpha", traj.ops.alpha}};
}

// Long format: one row per (sample, grid time), preceded by header comments
// carrying dimension, grid, and seed.
inline void write_ensemble_csv(std::ostream& os, const PathEnsemble& ens) {
  const int n = ens.ops.n;
  os.precision(17);
  os << "# dim=" << n << " samples=" << ens.samples.size()
     << " seed=" << ens.seed << " acceptance_rate=" << ens.acceptance_rate
     << "\n# grid=";
  for (size_t i = 0; i < ens.grid.times.size(); ++i)
    os << (i ? "," : "") << ens.grid.times[i];
  os << "\n# start=";
  for (Eigen::Index i = 0; i < ens.x.size(); ++i)
    os << (i ? "," : "") << ens.x[i];
  os << "\nsample,time_index,t,log_weight";
  for (int c = 0; c < n; ++c) os << ",y_" << c;
  os << '\n';
  for (size_t j = 0; j < ens.samples.size(); ++j) {
    const PathSample& ps = ens.samples[j];
    for (size_t i = 0; i < ps.values.size(); ++i) {
      os << j << ',' << i << ',' << ens.grid.times[i] << ',' << ps.log_weight;
      for (Eigen::Index c = 0; c < n; ++c) os << ',' << ps.values[i][c];
      os << '\n';
    }
  }
}

inline void write_ensemble_csv(const std::string& path,
                               const PathEnsemble& ens) {
  std::ostringstream os;
  write_ensemble_csv(os, ens);
  atomic_write_file(path, os.str());
}

inline json cylinder_to_json(const CylinderEstimate& ce) {
  return json{{"estimate", ce.estimate},
              {"stderr", ce.stderr_},
              {"n_effective", ce.n_effective}};
}

inline json fk_to_json(const FKEstimate& est) {
  return json{{"estimate", est.value},
              {"stderr", est.stderr_},
              {"N", est.N},
              {"grid",
               json{{"T", est.grid.T}, {"steps", est.grid.step_count()}}},
              {"seed", est.seed},
              {"overflow_fraction", est.overflow_fraction}};
}

// Writes via a temporary in the same directory plus rename, so readers never
// observe a half-written file.
inline void atomic_write_file(const std::filesystem::path& path,
                              const std::string& contents) {
  namespace fs = std::filesystem;
  const fs::path dir = path.parent_path().empty() ? fs::path(".")
                                                  : path.parent_path();
  fs::create_directories(dir);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    require(os.good(), errc::invalid_argument,
            "cannot open " + tmp.string() + " for writing");
    os << contents;
    os.flush();
    require(os.good(), errc::invalid_argument, "write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace mehler
