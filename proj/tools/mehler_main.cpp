// Command-line front end: each subcommand reads a JSON config, runs one
// workflow, writes machine-readable outputs under out_dir, and exits with
// 0 = success, 1 = tolerance/statistical check failed, 2 = config/usage
// error, 3 = numerical failure.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mehler/mehler.hpp"

namespace {

using namespace mehler;
namespace fs = std::filesystem;

struct CommonArgs {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("config", args.config_path, "JSON config file")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed, "override the config seed");
  cmd->add_option("--out", args.out, "override the output directory");
}

ExperimentConfig load(const CommonArgs& args) {
  ExperimentConfig cfg = load_config_file(args.config_path);
  if (args.seed) {
    cfg.seed = *args.seed;
    cfg.raw["seed"] = *args.seed;  // the hash covers the effective seed
  }
  if (args.out) {
    cfg.out_dir = *args.out;
    cfg.raw["out_dir"] = *args.out;
  }
  return cfg;
}

void emit(const ExperimentConfig& cfg, const std::string& fname,
          const json& j) {
  atomic_write_file((fs::path(cfg.out_dir) / fname).string(), j.dump(2) + "\n");
}

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - t0)
      .count();
}

Vec clamped_gaussian(NormalStream& stream, int n, double radius) {
  Vec v(n);
  stream.fill_normal(v);
  const double norm = v.norm();
  if (norm > radius) v *= radius / norm;
  return v;
}

// Probes the Fourier-domain flow identity at seeded (x, y) pairs with
// |x|, |y| <= 3 at a selection of trajectory times. Reports the residual
// normalized by 1 + |G(x, y)|.
json residual_scan(const Trajectory& traj, int n_times, int probes,
                   uint64_t probe_seed, double& worst) {
  const int n = traj.ops.n;
  const int m = static_cast<int>(traj.states.size());
  json out = json::array();
  worst = 0.0;
  for (int k = 0; k < n_times; ++k) {
    const int idx =
        n_times == 1 ? m - 1 : static_cast<int>(std::llround(
                                   k * double(m - 1) / double(n_times - 1)));
    const EvolutionState& st = traj.states[idx];
    NormalStream stream(probe_seed, static_cast<uint64_t>(k), 0);
    double max_res = 0.0;
    for (int p = 0; p < probes; ++p) {
      const Vec x = clamped_gaussian(stream, n, 3.0);
      const Vec y = clamped_gaussian(stream, n, 3.0);
      const cplx res = pde_residual_fourier(st, traj.ops, x, y);
      const double scale =
          1.0 + std::abs(characteristic_functional(kernel_at(st), x, y));
      max_res = std::max(max_res, std::abs(res) / scale);
    }
    worst = std::max(worst, max_res);
    out.push_back(
        {{"t", st.t}, {"max_abs_residual", max_res}, {"probe_points", probes}});
  }
  return out;
}

// max over the four kernel components of ||a - b||_F / max(1, ||b||_F)
double state_rel_diff(const EvolutionState& a, const EvolutionState& b) {
  auto rel = [](double diff, double ref) {
    return diff / std::max(1.0, ref);
  };
  double worst = rel(std::abs(a.s - b.s), std::abs(b.s));
  worst = std::max(worst, rel((a.P.m - b.P.m).norm(), b.P.m.norm()));
  worst = std::max(worst, rel((a.Q.m - b.Q.m).norm(), b.Q.m.norm()));
  worst = std::max(worst, rel((a.R - b.R).norm(), b.R.norm()));
  return worst;
}

bool closed_form_available(const OperatorSet& ops) {
  return ops.c_is_zero() || ops.d_is_zero();
}

EvolutionState closed_form_state(const OperatorSet& ops, double t) {
  return ops.c_is_zero() ? closed_form_C0(ops, t) : closed_form_D0(ops, t);
}

IntegrationControl control_from(const json& block) {
  IntegrationControl ctl;
  ctl.steps = block.value("steps", 0);
  ctl.adaptive = block.value("adaptive", false);
  ctl.rel_tol = block.value("rel_tol", 1e-10);
  return ctl;
}

// ---------------------------------------------------------------- evolve --

int cmd_evolve(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const json& block = cfg.block("evolve");
  require(block.contains("T"), errc::config_error, "evolve needs T");
  const double T = block.at("T").get<double>();

  const Trajectory traj = integrate(cfg.ops, T, control_from(block));

  write_trajectory_csv((fs::path(cfg.out_dir) / "trajectory.csv").string(),
                       traj);
  emit(cfg, "kernel.json", kernel_to_json(kernel_at(traj.back())));

  const int probes = block.value("residual_probes", 20);
  const int probe_times = block.value("residual_times", 9);
  double worst_res = 0.0;
  json res_json =
      residual_scan(traj, probe_times, probes, cfg.seed ^ 0x9e3779b9ull,
                    worst_res);
  emit(cfg, "residual.json", res_json);
  const double res_tol = cfg.tolerance("residual", 1e-7);
  const bool res_pass = worst_res <= res_tol;

  json results{{"final_t", traj.back().t},
               {"final_s", traj.back().s},
               {"steps_stored", traj.states.size()},
               {"residual",
                {{"max", worst_res}, {"tolerance", res_tol}, {"pass", res_pass}}}};

  bool cf_pass = true;
  if (block.value("compare_closed_form", closed_form_available(cfg.ops))) {
    require(closed_form_available(cfg.ops), errc::config_error,
            "compare_closed_form needs C = 0 or D = 0");
    double worst = 0.0;
    const size_t stride = std::max<size_t>(1, traj.states.size() / 20);
    for (size_t i = stride; i < traj.states.size(); i += stride) {
      const EvolutionState& st = traj.states[i];
      worst = std::max(worst,
                       state_rel_diff(st, closed_form_state(cfg.ops, st.t)));
    }
    worst = std::max(worst, state_rel_diff(traj.back(), closed_form_state(
                                                            cfg.ops, T)));
    const double tol = cfg.tolerance("closed_form", 1e-8);
    cf_pass = worst <= tol;
    results["closed_form"] = {
        {"max_rel_diff", worst}, {"tolerance", tol}, {"pass", cf_pass}};
  }

  emit(cfg, "evolve_report.json",
       make_report("evolve", cfg, results, ms_since(t0)));
  return (res_pass && cf_pass) ? 0 : 1;
}

// ----------------------------------------------------------- closed-form --

int cmd_closed_form(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const json& block = cfg.block("closed_form");
  require(closed_form_available(cfg.ops), errc::config_error,
          "closed forms need C = 0 or D = 0");
  std::vector<double> times;
  if (block.contains("times"))
    for (const json& t : block.at("times")) times.push_back(t.get<double>());
  else if (block.contains("t"))
    times.push_back(block.at("t").get<double>());
  require(!times.empty(), errc::config_error, "closed_form needs t or times");

  json states = json::array();
  for (double t : times) {
    require(t >= 0.0, errc::config_error, "times must be >= 0");
    states.push_back(state_to_json(closed_form_state(cfg.ops, t)));
  }
  const std::string family = cfg.ops.c_is_zero() ? "C0" : "D0";
  emit(cfg, "closed_form.json", json{{"family", family}, {"states", states}});
  emit(cfg, "kernel.json",
       kernel_to_json(kernel_at(closed_form_state(cfg.ops, times.back()))));
  emit(cfg, "closed_form_report.json",
       make_report("closed-form", cfg,
                   json{{"family", family}, {"times", times}}, ms_since(t0)));
  return 0;
}

// ----------------------------------------------------------------- verify --

int cmd_verify(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const json block = cfg.has_block("verify") ? cfg.block("verify")
                                             : json::object();
  const double T = block.value("T", 1.0);
  const bool inject_fault = block.value("inject_fault", false);
  json checks = json::array();
  bool all_pass = true;

  auto record = [&](const std::string& name, bool pass, json detail) {
    detail["name"] = name;
    detail["pass"] = pass;
    checks.push_back(std::move(detail));
    all_pass = all_pass && pass;
  };

  // 1. integrator vs closed form, when a closed-form family applies
  const Trajectory traj = integrate(cfg.ops, T, control_from(block));
  if (closed_form_available(cfg.ops)) {
    double worst = 0.0;
    for (double frac : {0.25, 0.5, 0.75, 1.0}) {
      const double t = frac * T;
      worst = std::max(worst, state_rel_diff(traj.at_time(t),
                                             closed_form_state(cfg.ops, t)));
    }
    const double tol = cfg.tolerance("closed_form", 1e-8);
    record("closed_form_agreement", worst <= tol,
           {{"max_rel_diff", worst}, {"tolerance", tol}});
  }

  // 2. semigroup property: compose(later, earlier) over u + v = T.
  {
    const double u = 0.4 * T, v = 0.6 * T;
    auto at = [&](double t) {
      return closed_form_available(cfg.ops)
                 ? closed_form_state(cfg.ops, t)
                 : integrate(cfg.ops, t, control_from(block)).back();
    };
    GaussianKernel Ku = kernel_at(at(u));
    const GaussianKernel Kv = kernel_at(at(v));
    const GaussianKernel Kuv = kernel_at(at(u + v));
    if (inject_fault) Ku.Q.m += 0.01 * Mat::Identity(cfg.dim, cfg.dim);

    const GaussianKernel composed = compose(Kv, Ku);
    EvolutionState a{u + v, composed.s, composed.P, composed.Q, composed.R};
    EvolutionState b{u + v, Kuv.s, Kuv.P, Kuv.Q, Kuv.R};
    const double dev = state_rel_diff(a, b);
    const double tol = cfg.tolerance("semigroup", 1e-8);

    // The reversed order is reported for reference only; it differs whenever
    // the factors do not commute.
    double reversed_dev = std::numeric_limits<double>::quiet_NaN();
    try {
      const GaussianKernel rev = compose(Ku, Kv);
      EvolutionState r{u + v, rev.s, rev.P, rev.Q, rev.R};
      reversed_dev = state_rel_diff(r, b);
    } catch (const Error&) {
      // reversed composition can lose positivity; leave NaN
    }
    record("semigroup_composition", dev <= tol,
           {{"u", u},
            {"v", v},
            {"rel_diff", dev},
            {"tolerance", tol},
            {"reversed_order_rel_diff", reversed_dev},
            {"fault_injected", inject_fault}});
  }

  // 3. Fourier-domain flow identity + perturbed negative control
  {
    double worst = 0.0;
    residual_scan(traj, 5, 20, cfg.seed ^ 0x517cc1b7ull, worst);
    const double tol = cfg.tolerance("residual", 1e-7);
    record("pde_residual", worst <= tol,
           {{"max_normalized_residual", worst}, {"tolerance", tol}});

    if (!cfg.ops.c_is_zero()) {
      // freeze the on-flow derivatives, then displace Q: the identity must
      // visibly break
      const EvolutionState& st = traj.back();
      const FlowDerivatives frozen = rhs(st, cfg.ops);
      EvolutionState bad = st;
      bad.Q.m += 0.01 * Mat::Identity(cfg.dim, cfg.dim);
      NormalStream stream(cfg.seed ^ 0xabcdull, 0, 0);
      double max_bad = 0.0;
      for (int p = 0; p < 20; ++p) {
        const Vec x = clamped_gaussian(stream, cfg.dim, 3.0);
        const Vec y = clamped_gaussian(stream, cfg.dim, 3.0);
        const cplx res = pde_residual_fourier(bad, frozen, cfg.ops, x, y);
        const double scale =
            1.0 + std::abs(characteristic_functional(kernel_at(bad), x, y));
        max_bad = std::max(max_bad, std::abs(res) / scale);
      }
      record("residual_negative_control", max_bad > 1e-3,
             {{"perturbed_residual", max_bad}, {"must_exceed", 1e-3}});
    }
  }

  // 4. generator recovery round trip
  {
    const double h = block.value("recovery_h", 0.04);
    const int levels = block.value("recovery_levels", 6);
    auto flow = [&](double t) {
      return closed_form_available(cfg.ops)
                 ? closed_form_state(cfg.ops, t)
                 : integrate(cfg.ops, t, IntegrationControl{2000, false, 1e-10})
                       .back();
    };
    const OperatorSet rec = recover_generators(flow, h, levels);
    auto rel = [](const Mat& got, const Mat& truth) {
      return (got - truth).norm() / std::max(1.0, truth.norm());
    };
    const double eb = rel(rec.B.m, cfg.ops.B.m);
    const double ec = rel(rec.C.m, cfg.ops.C.m);
    const double ed = rel(rec.D, cfg.ops.D);
    const double ea = std::abs(rec.alpha - cfg.ops.alpha);
    const double worst = std::max({eb, ec, ed, ea});
    const double tol = cfg.tolerance("recovery", 1e-4);
    record("generator_recovery", worst <= tol,
           {{"B", eb}, {"C", ec}, {"D", ed}, {"alpha", ea}, {"tolerance", tol}});
  }

  // 5. second-moment diagnostic along the flow from a standard Gaussian
  {
    const InitialMeasure mu0 = make_gaussian_measure(
        Vec::Zero(cfg.dim), Mat::Identity(cfg.dim, cfg.dim));
    const MomentReport rep = moment_diagnostic(traj, mu0);
    record("moment_diagnostic", rep.finite,
           {{"sup_second_moment", rep.sup}, {"finite", rep.finite}});
  }

  emit(cfg, "verify_report.json",
       make_report("verify", cfg, json{{"checks", checks}, {"pass", all_pass}},
                   ms_since(t0)));
  for (const json& c : checks)
    std::cout << (c.at("pass").get<bool>() ? "[PASS] " : "[FAIL] ")
              << c.at("name").get<std::string>() << "\n";
  return all_pass ? 0 : 1;
}

// ----------------------------------------------------------------- sample --

int cmd_sample(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const json& block = cfg.block("sample");
  const Vec x = block.contains("x")
                    ? vec_from_json(block.at("x"), "sample.x")
                    : Vec(Vec::Zero(cfg.dim));
  require(x.size() == cfg.dim, errc::config_error,
          "sample.x must have dimension dim");
  const TimeGrid grid = grid_from_json(cfg.block("grid"), "grid");
  const int64_t N = block.value("N", int64_t{1000});

  PathEnsemble ens;
  if (block.contains("condition")) {
    const json& c = block.at("condition");
    EndpointCondition terminal;
    if (c.contains("point"))
      terminal = vec_from_json(c.at("point"), "condition.point");
    else if (c.contains("gaussian"))
      terminal = std::get<GaussianMeasure>(
          initial_measure_from_json(c, cfg.dim, "condition"));
    else
      terminal = region_from_json(c, cfg.dim, "condition");
    ens = condition_endpoint(cfg.ops, x, grid, N, cfg.seed, terminal,
                             cfg.threads);
  } else {
    ens = sample_paths(cfg.ops, x, grid, N, cfg.seed, cfg.threads);
  }

  write_ensemble_csv((fs::path(cfg.out_dir) / "ensemble.csv").string(), ens);

  // terminal-slice summary
  Vec mean = Vec::Zero(cfg.dim);
  for (const PathSample& s : ens.samples) mean += s.values.back();
  mean /= double(ens.samples.size());

  json results{{"N", ens.samples.size()},
               {"acceptance_rate", ens.acceptance_rate},
               {"terminal_mean", vec_to_json(mean)}};

  int exit_code = 0;
  if (block.value("gaussianity_check", false)) {
    require(block.contains("condition"), errc::config_error,
            "gaussianity_check is meant for conditioned ensembles");
    std::vector<LinearFunctional> fns;
    const int m = grid.step_count();
    for (int idx : {m / 3, 2 * m / 3}) {
      if (idx <= 0 || idx >= m) continue;
      for (int d = 0; d < std::min(2, cfg.dim); ++d)
        fns.push_back({grid.times[idx], Vec(Vec::Unit(cfg.dim, d))});
    }
    const GaussianityReport rep = gaussianity_check(ens, fns);
    json checks = json::array();
    for (const FunctionalCheck& c : rep.checks)
      checks.push_back(
          {{"label", c.label}, {"worst_z", c.worst_z}, {"pass", c.pass}});
    results["gaussianity"] = {{"pass", rep.pass},
                              {"insufficient_n", rep.insufficient_n},
                              {"worst_z", rep.worst_z},
                              {"checks", checks}};
    if (!rep.pass) exit_code = 1;
  }

  emit(cfg, "sample_report.json",
       make_report("sample", cfg, results, ms_since(t0)));
  return exit_code;
}

// --------------------------------------------------------------- cylinder --

int cmd_cylinder(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const json& block = cfg.block("cylinder");
  const Vec x = block.contains("x")
                    ? vec_from_json(block.at("x"), "cylinder.x")
                    : Vec(Vec::Zero(cfg.dim));
  require(x.size() == cfg.dim, errc::config_error,
          "cylinder.x must have dimension dim");
  const TimeGrid grid = grid_from_json(cfg.block("grid"), "grid");
  const int64_t N = block.value("N", int64_t{10000});

  CylinderSpec spec;
  if (block.contains("constraints"))
    for (const json& c : block.at("constraints"))
      spec.constraints.emplace_back(
          c.at("t").get<double>(),
          region_from_json(c, cfg.dim, "cylinder.constraints"));
  spec.terminal = block.contains("terminal")
                      ? region_from_json(block.at("terminal"), cfg.dim,
                                         "cylinder.terminal")
                      : Region{WholeSpace{}};

  const PathEnsemble ens =
      sample_paths(cfg.ops, x, grid, N, cfg.seed, cfg.threads);
  const CylinderEstimate est = cylinder_mass(ens, spec);
  emit(cfg, "cylinder.json", cylinder_to_json(est));

  json results{{"estimate", est.estimate},
               {"stderr", est.stderr_},
               {"n_effective", est.n_effective}};
  int exit_code = 0;
  if (block.contains("expected")) {
    const double expected = block.at("expected").get<double>();
    const double sigma = block.value("sigma", 3.0);
    const double dev = std::abs(est.estimate - expected);
    const bool pass = dev <= sigma * est.stderr_;
    results["check"] = {{"expected", expected},
                        {"deviation", dev},
                        {"sigma", sigma},
                        {"pass", pass}};
    if (!pass) exit_code = 1;
  }
  emit(cfg, "cylinder_report.json",
       make_report("cylinder", cfg, results, ms_since(t0)));
  return exit_code;
}

// --------------------------------------------------------------------- fk --

int cmd_fk(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const json& block = cfg.block("fk");
  const Potential V =
      potential_from_json(block.at("potential"), cfg.dim, "fk.potential");
  require(block.contains("t"), errc::config_error, "fk needs a horizon t");
  const double t = block.at("t").get<double>();
  const TimeGrid grid =
      block.contains("grid")
          ? grid_from_json(block.at("grid"), "fk.grid")
          : TimeGrid::uniform(t, block.value("steps", 1000));
  const int64_t N = block.value("N", int64_t{100000});
  const bool weighted_base = block.value("weighted_base", false);

  json results;
  int exit_code = 0;

  if (block.contains("nu0")) {
    const InitialMeasure nu0 =
        initial_measure_from_json(block.at("nu0"), cfg.dim, "fk.nu0");
    std::vector<TestFunction> fns{ConstantOne{}};
    json labels = json::array();
    labels.push_back("mass");
    if (block.contains("frequencies")) {
      for (const json& f : block.at("frequencies")) {
        Vec y = vec_from_json(f, "fk.frequencies");
        labels.push_back("re_" + std::to_string(labels.size()));
        fns.push_back(FourierRe{y});
        labels.push_back("im_" + std::to_string(labels.size()));
        fns.push_back(FourierIm{std::move(y)});
      }
    }
    const std::vector<FKEstimate> ests = fk_evolve(
        cfg.ops, V, nu0, t, fns, N, grid, cfg.seed, cfg.threads, weighted_base);
    json arr = json::array();
    for (size_t i = 0; i < ests.size(); ++i) {
      json e = fk_to_json(ests[i]);
      e["label"] = labels[i];
      arr.push_back(std::move(e));
    }
    emit(cfg, "fk.json", arr);
    results["estimates"] = arr;
  } else {
    const Vec x = block.contains("x") ? vec_from_json(block.at("x"), "fk.x")
                                      : Vec(Vec::Zero(cfg.dim));
    require(x.size() == cfg.dim, errc::config_error,
            "fk.x must have dimension dim");
    const Region A = block.contains("region")
                         ? region_from_json(block.at("region"), cfg.dim,
                                            "fk.region")
                         : Region{WholeSpace{}};
    const FKEstimate est = fk_kernel_mass(cfg.ops, V, x, t, A, N, grid,
                                          cfg.seed, cfg.threads, weighted_base);
    emit(cfg, "fk.json", fk_to_json(est));
    results["estimate"] = est.value;
    results["stderr"] = est.stderr_;
    results["overflow_fraction"] = est.overflow_fraction;

    // Quadratic potentials admit an exact reference: absorbing the
    // potential into the flow gives mass s(t) exp(-(P(t)x, x)/2).
    const auto* q = std::get_if<QuadraticPotential>(&V.kind);
    const bool whole = std::holds_alternative<WholeSpace>(A);
    if (block.value("cross_check", q != nullptr && whole && !weighted_base)) {
      require(q != nullptr && whole && !weighted_base, errc::config_error,
              "cross_check needs a quadratic potential over whole space");
      const OperatorSet absorbed =
          validate_operator_set(cfg.ops.B.m, q->Cv.m, cfg.ops.D, q->c0);
      const EvolutionState ref_state =
          absorbed.d_is_zero()
              ? closed_form_D0(absorbed, t)
              : integrate(absorbed, t, IntegrationControl{}).back();
      const double expected = kernel_mass(kernel_at(ref_state), x);
      const double sigma = block.value("sigma", 3.0);
      const double dev = std::abs(est.value - expected);
      const bool pass = dev <= sigma * est.stderr_;
      results["cross_check"] = {{"expected", expected},
                                {"deviation", dev},
                                {"stderr", est.stderr_},
                                {"sigma", sigma},
                                {"relative_stderr", est.stderr_ / expected},
                                {"pass", pass}};
      if (!pass) exit_code = 1;
    }
  }

  if (block.value("validate_potential", true)) {
    const PotentialReport rep =
        validate_potential(V, cfg.dim, 2000, cfg.seed ^ 0x5bd1e995ull);
    results["potential_validation"] = {
        {"probes", rep.probes},
        {"envelope_violations", rep.envelope_violations},
        {"growth_violations", rep.growth_violations},
        {"refuted", rep.refuted}};
  }

  emit(cfg, "fk_report.json", make_report("fk", cfg, results, ms_since(t0)));
  return exit_code;
}

// ---------------------------------------------------------------- recover --

int cmd_recover(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const json block = cfg.has_block("recover") ? cfg.block("recover")
                                              : json::object();
  const double h = block.value("h", 0.04);
  const int levels = block.value("levels", 6);

  auto flow = [&](double t) {
    return closed_form_available(cfg.ops)
               ? closed_form_state(cfg.ops, t)
               : integrate(cfg.ops, t, IntegrationControl{2000, false, 1e-10})
                     .back();
  };
  const OperatorSet rec = recover_generators(flow, h, levels);

  auto rel = [](const Mat& got, const Mat& truth) {
    return (got - truth).norm() / std::max(1.0, truth.norm());
  };
  const double eb = rel(rec.B.m, cfg.ops.B.m);
  const double ec = rel(rec.C.m, cfg.ops.C.m);
  const double ed = rel(rec.D, cfg.ops.D);
  const double ea = std::abs(rec.alpha - cfg.ops.alpha);
  const double worst = std::max({eb, ec, ed, ea});
  const double tol = cfg.tolerance("recovery", 1e-4);

  emit(cfg, "recover.json",
       json{{"B", mat_to_json(rec.B.m)},
            {"C", mat_to_json(rec.C.m)},
            {"D", mat_to_json(rec.D)},
            {"alpha", rec.alpha},
            {"round_trip_errors",
             {{"B", eb}, {"C", ec}, {"D", ed}, {"alpha", ea}}},
            {"tolerance", tol}});
  emit(cfg, "recover_report.json",
       make_report("recover", cfg,
                   json{{"max_error", worst}, {"tolerance", tol},
                        {"pass", worst <= tol}},
                   ms_since(t0)));
  return worst <= tol ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian kernel semigroups for parabolic measure flows"};
  app.require_subcommand(1);

  CommonArgs args;
  int (*run)(const ExperimentConfig&) = nullptr;

  auto wire = [&](const char* name, const char* desc,
                  int (*fn)(const ExperimentConfig&)) {
    CLI::App* cmd = app.add_subcommand(name, desc);
    add_common(cmd, args);
    cmd->callback([&run, fn] { run = fn; });
  };
  wire("evolve", "integrate the kernel flow, write trajectory + residuals",
       &cmd_evolve);
  wire("closed-form", "evaluate the C = 0 / D = 0 closed forms", &cmd_closed_form);
  wire("verify", "run the internal consistency suite", &cmd_verify);
  wire("sample", "draw (optionally conditioned) paths", &cmd_sample);
  wire("cylinder", "estimate a cylinder-set mass with error bars",
       &cmd_cylinder);
  wire("fk", "Feynman-Kac functional estimates", &cmd_fk);
  wire("recover", "recover generators from the flow near t = 0", &cmd_recover);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    return run(load(args));
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return (e.code() == errc::config_error ||
            e.code() == errc::invalid_argument)
               ? 2
               : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
