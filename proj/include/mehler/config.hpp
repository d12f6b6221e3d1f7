#pragma once

#include <cstdint>
#include <cstdlib>
#include <string>
#include <string_view>
#include <utility>

#include "mehler/serialization.hpp"

namespace mehler {

inline constexpr const char* k_library_version = "1.0.0";

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

// Operator spec: {"dense": [[...]]}, {"diag": [...]}, {"power_law": {"p": x}}
// (eigenvalues k^{-p}, k = 1..dim), or {"zero": true}.
inline Mat operator_matrix_from_spec(const json& spec, int n,
                                     const std::string& name) {
  require(spec.is_object(), errc::config_error,
          name + ": operator spec must be an object");
  if (spec.contains("dense")) {
    Mat m = mat_from_json(spec.at("dense"), name);
    require(m.rows() == n && m.cols() == n, errc::config_error,
            name + ": dense block must be " + std::to_string(n) + "x" +
                std::to_string(n));
    return m;
  }
  if (spec.contains("diag")) {
    const Vec d = vec_from_json(spec.at("diag"), name + ".diag");
    require(d.size() == n, errc::config_error,
            name + ": diag needs " + std::to_string(n) + " entries");
    Mat m = Mat::Zero(n, n);
    m.diagonal() = d;
    return m;
  }
  if (spec.contains("power_law")) {
    const json& pl = spec.at("power_law");
    require(pl.is_object() && pl.contains("p") && pl.at("p").is_number(),
            errc::config_error, name + ": power_law needs a numeric p");
    return diagonal_matrix(power_law_spectrum(pl.at("p").get<double>(), n));
  }
  if (spec.contains("zero")) return Mat::Zero(n, n);
  fail(errc::config_error,
       name + ": expected one of dense | diag | power_law | zero");
}

inline Region region_from_json(const json& j, int n, const std::string& name) {
  if (j.is_string() && j.get<std::string>() == "whole_space")
    return WholeSpace{};
  require(j.is_object(), errc::config_error, name + ": region must be an "
                                                    "object or \"whole_space\"");
  if (j.contains("whole_space")) return WholeSpace{};
  if (j.contains("box")) {
    const json& b = j.at("box");
    Box box{vec_from_json(b.at("lo"), name + ".lo"),
            vec_from_json(b.at("hi"), name + ".hi")};
    require(box.lo.size() == n && box.hi.size() == n, errc::config_error,
            name + ": box bounds must have dimension " + std::to_string(n));
    require((box.lo.array() <= box.hi.array()).all(), errc::config_error,
            name + ": box needs lo <= hi");
    return box;
  }
  if (j.contains("ball")) {
    const json& b = j.at("ball");
    Ball ball{vec_from_json(b.at("center"), name + ".center"),
              b.at("radius").get<double>()};
    require(ball.center.size() == n && ball.radius >= 0.0, errc::config_error,
            name + ": ball needs a dim-" + std::to_string(n) +
                " center and radius >= 0");
    return ball;
  }
  fail(errc::config_error, name + ": expected box | ball | whole_space");
}

inline InitialMeasure initial_measure_from_json(const json& j, int n,
                                                const std::string& name) {
  require(j.is_object(), errc::config_error, name + " must be an object");
  if (j.contains("gaussian")) {
    const json& g = j.at("gaussian");
    Vec mean = g.contains("mean") ? vec_from_json(g.at("mean"), name + ".mean")
                                  : Vec(Vec::Zero(n));
    const Mat cov = g.contains("cov")
                        ? operator_matrix_from_spec(g.at("cov"), n, name + ".cov")
                        : Mat(Mat::Zero(n, n));
    require(mean.size() == n, errc::config_error,
            name + ".mean must have dimension " + std::to_string(n));
    return make_gaussian_measure(std::move(mean), cov);
  }
  if (j.contains("points")) {
    std::vector<Vec> pts;
    for (const json& p : j.at("points"))
      pts.push_back(vec_from_json(p, name + ".points"));
    std::vector<double> ws;
    if (j.contains("weights"))
      for (const json& w : j.at("weights")) ws.push_back(w.get<double>());
    else
      ws.assign(pts.size(), 1.0);
    for (const Vec& p : pts)
      require(p.size() == n, errc::config_error,
              name + ".points must have dimension " + std::to_string(n));
    return make_point_mixture(std::move(pts), std::move(ws));
  }
  fail(errc::config_error, name + ": expected gaussian | points");
}

inline Potential potential_from_json(const json& j, int n,
                                     const std::string& name) {
  require(j.is_object(), errc::config_error, name + " must be an object");
  Potential V;
  if (j.contains("quadratic")) {
    const json& q = j.at("quadratic");
    const Mat Cv = operator_matrix_from_spec(q.at("Cv"), n, name + ".Cv");
    V = make_quadratic_potential(Cv, q.value("c0", 0.0));
  } else if (j.contains("bounded_cosine")) {
    const json& c = j.at("bounded_cosine");
    Vec k = vec_from_json(c.at("k"), name + ".k");
    require(k.size() == n, errc::config_error,
            name + ".k must have dimension " + std::to_string(n));
    V = make_cosine_potential(c.at("v0").get<double>(), std::move(k));
  } else {
    fail(errc::config_error,
         name + ": expected quadratic | bounded_cosine (tabulated potentials "
                "are host-registered only)");
  }
  if (j.contains("growth")) {
    const json& g = j.at("growth");
    GrowthDeclaration gd = V.growth;
    gd.c1 = g.value("c1", gd.c1);
    gd.c2 = g.value("c2", gd.c2);
    gd.r = g.value("r", gd.r);
    require(gd.r >= 0.0 && gd.r <= 2.0, errc::config_error,
            name + ".growth.r must lie in [0, 2]");
    V.growth = gd;
  }
  return V;
}

inline TimeGrid grid_from_json(const json& j, const std::string& name) {
  require(j.is_object(), errc::config_error, name + " must be an object");
  if (j.contains("times")) {
    std::vector<double> times;
    for (const json& t : j.at("times")) times.push_back(t.get<double>());
    return make_time_grid(std::move(times));
  }
  require(j.contains("T") && j.contains("steps"), errc::config_error,
          name + ": expected {T, steps} or {times}");
  return TimeGrid::uniform(j.at("T").get<double>(), j.at("steps").get<int>());
}

struct ExperimentConfig {
  json raw;  // the effective config (seed override applied), echoed in reports
  int dim = 0;
  OperatorSet ops;
  uint64_t seed = 0;
  int threads = 1;
  std::string out_dir = ".";

  bool has_block(const std::string& key) const { return raw.contains(key); }

  const json& block(const std::string& key) const {
    require(raw.contains(key), errc::config_error,
            "config block \"" + key + "\" is required for this command");
    return raw.at(key);
  }

  double tolerance(const std::string& key, double fallback) const {
    if (!raw.contains("tolerances")) return fallback;
    return raw.at("tolerances").value(key, fallback);
  }

  // Hash of the canonical (sorted-key) dump, excluding the output location.
  uint64_t hash() const {
    json canon = raw;
    canon.erase("out_dir");
    return fnv1a64(canon.dump());
  }
};

inline ExperimentConfig parse_config(json j) {
  require(j.is_object(), errc::config_error, "config root must be an object");
  require(j.contains("dim") && j.at("dim").is_number_integer(),
          errc::config_error, "config needs an integer \"dim\"");
  ExperimentConfig cfg;
  cfg.dim = j.at("dim").get<int>();
  require(cfg.dim >= 1, errc::config_error, "dim must be >= 1");

  const json ops_block = j.value("operators", json::object());
  const json zero = json{{"zero", true}};
  Mat B = operator_matrix_from_spec(ops_block.value("B", zero), cfg.dim, "B");
  Mat C = operator_matrix_from_spec(ops_block.value("C", zero), cfg.dim, "C");
  Mat D = operator_matrix_from_spec(ops_block.value("D", zero), cfg.dim, "D");
  const double alpha = ops_block.value("alpha", 0.0);
  try {
    cfg.ops = validate_operator_set(B, C, D, alpha);
  } catch (const Error& e) {
    fail(errc::config_error, std::string("operators: ") + e.what());
  }

  cfg.seed = j.value("seed", uint64_t{0});
  cfg.threads = j.value("threads", 1);
  require(cfg.threads >= 1, errc::config_error, "threads must be >= 1");
  if (j.contains("out_dir")) {
    cfg.out_dir = j.at("out_dir").get<std::string>();
  } else if (const char* env = std::getenv("MEHLER_OUT_DIR")) {
    cfg.out_dir = env;
  }
  j["out_dir"] = cfg.out_dir;
  cfg.raw = std::move(j);
  return cfg;
}

// Parses a config file, anchoring syntax errors to line:column.
inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), errc::config_error, "cannot open config " + path);
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    size_t line = 1, col = 1;
    for (size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    fail(errc::config_error, path + ":" + std::to_string(line) + ":" +
                                 std::to_string(col) + ": " + e.what());
  }
  return parse_config(j);
}

inline json versions_json() {
  return json{{"library", k_library_version},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                            std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"compiler", __VERSION__}};
}

// Report envelope: identical config + seed produce byte-identical reports
// except for the wall-clock field.
inline json make_report(const std::string& command,
                        const ExperimentConfig& cfg, json results,
                        double wall_ms) {
  return json{{"command", command},
              {"config_hash", hex64(cfg.hash())},
              {"config", cfg.raw},
              {"results", std::move(results)},
              {"versions", versions_json()},
              {"wall_clock_ms", wall_ms}};
}

}  // namespace mehler
