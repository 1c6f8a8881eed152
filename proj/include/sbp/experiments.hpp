#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <json.hpp>

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbp/config.hpp"
#include "sbp/dynamics.hpp"
#include "sbp/kernel.hpp"
#include "sbp/propagator.hpp"
#include "sbp/scattering.hpp"
#include "sbp/snapshot_io.hpp"
#include "sbp/spectral.hpp"

namespace sbp {

using json = nlohmann::ordered_json;

inline constexpr const char* verdict_schema = "sbp-verdict/1";

enum ExitCode : int { exit_pass = 0, exit_threshold = 1, exit_usage = 2, exit_abort = 3 };

/// Bad invocation (unknown preset, locked output directory, ...).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---- verdicts --------------------------------------------------------------

struct Check {
  std::string name;
  double value = 0.0;
  double min = -std::numeric_limits<double>::infinity();
  double max = std::numeric_limits<double>::infinity();
  bool pass = false;
};

inline Check check_at_most(const std::string& name, double value, double limit) {
  return {name, value, -std::numeric_limits<double>::infinity(), limit, value <= limit};
}
inline Check check_within(const std::string& name, double value, double lo, double hi) {
  return {name, value, lo, hi, value >= lo && value <= hi};
}
inline Check check_true(const std::string& name, bool ok) { return {name, ok ? 1.0 : 0.0, 1.0, 1.0, ok}; }

inline json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

struct Verdict {
  std::string command;
  std::string preset;
  int criterion = 0;
  std::vector<Check> checks;
  json details = json::object();
  std::string abort_message;

  [[nodiscard]] bool pass() const {
    if (!abort_message.empty()) return false;
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }

  [[nodiscard]] const Check* find(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }

  [[nodiscard]] json to_json() const {
    json j;
    j["schema"] = verdict_schema;
    j["command"] = command;
    j["preset"] = preset;
    j["criterion"] = criterion;
    j["pass"] = pass();
    if (!abort_message.empty()) j["aborted"] = abort_message;
    json cs = json::array();
    for (const auto& c : checks)
      cs.push_back({{"name", c.name}, {"value", number(c.value)}, {"min", number(c.min)}, {"max", number(c.max)},
                    {"pass", c.pass}});
    j["checks"] = cs;
    j["details"] = details;
    return j;
  }
};

// ---- output directory ------------------------------------------------------

/// Exclusive owner of an output directory for the duration of a run.
class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path p) : path_(std::move(p)) {
    std::filesystem::create_directories(path_);
    lock_ = path_ / ".lock";
    int fd = ::open(lock_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      throw UsageError("output directory " + path_.string() + " is locked by another run (remove " + lock_.string() +
                       " if no run is active)");
    std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd, pid.data(), pid.size()) < 0) { /* best effort */ }
    ::close(fd);
  }
  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;
  ~OutputDir() {
    std::error_code ec;
    std::filesystem::remove(lock_, ec);
  }

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  [[nodiscard]] std::string file(const std::string& name) const { return (path_ / name).string(); }

  void write_text(const std::string& name, const std::string& text) const {
    std::ofstream os(file(name), std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + file(name));
    os << text;
  }

 private:
  std::filesystem::path path_;
  std::filesystem::path lock_;
};

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_line(std::initializer_list<double> vs) {
  std::string s;
  for (double v : vs) {
    if (!s.empty()) s += ',';
    s += fmt(v);
  }
  return s + '\n';
}

// ---- experiment context ----------------------------------------------------

/// Preset keys plus command-line overrides. Overrides apply to every
/// simulation section read through sim().
struct ExperimentContext {
  std::string command;
  std::string preset;
  KeyValues kv;
  KeyValues overrides;

  [[nodiscard]] double threshold(const std::string& name) const { return kv.get_double("threshold." + name); }

  /// SimConfig from the keys under `prefix`, with overrides on top.
  [[nodiscard]] SimConfig sim(const std::string& prefix) const {
    KeyValues s = kv.section(prefix);
    for (const auto& k : overrides.keys()) s.set(k, overrides.raw(k));
    return SimConfig::from_keys(s);
  }
};

// ---- shared helpers --------------------------------------------------------

/// Random low modes (|mode| <= max_mode per axis) under a Gaussian envelope.
inline ComplexField random_smooth_field(const GridSpec& g, std::uint64_t seed, double sigma, int max_mode = 5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  ComplexField u(g, Space::frequency);
  for_each_index(g.dim, g.n, [&](std::size_t idx, int i, int j, int k) {
    int m = std::max({std::abs(g.mode(i)), std::abs(g.mode(j)), g.dim == 3 ? std::abs(g.mode(k)) : 0});
    double re = nd(rng), im = nd(rng);
    if (m <= max_mode) u[idx] = cplx{re, im};
  });
  ComplexField v = ifft(u);
  RVector r2 = radius_squared(g);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= std::exp(-0.5 * r2[i] / (sigma * sigma));
  return v;
}

inline ComplexField centered_gaussian(const GridSpec& g, double a) {
  ComplexField u(g, Space::physical);
  RVector r2 = radius_squared(g);
  for (std::size_t i = 0; i < r2.size(); ++i) u[i] = std::exp(-a * r2[i]);
  return u;
}

/// O(N^2) linear convolution with the point-sampled kernel (oracle).
inline RVector direct_kernel_sum(const Lattice& lat, const RVector& rho, double t = 0.5) {
  const int n = lat.n, d = lat.dim;
  std::vector<std::array<int, 3>> idx(rho.size());
  for_each_index(d, n, [&](std::size_t f, int i, int j, int k) { idx[f] = {i, j, k}; });
  RVector out(rho.size(), 0.0);
  const double w = std::pow(lat.spacing, d);
  for (std::size_t a = 0; a < rho.size(); ++a) {
    double s = 0.0;
    for (std::size_t b = 0; b < rho.size(); ++b) {
      double r2 = 0.0;
      for (int c = 0; c < d; ++c) {
        double dx = (idx[a][c] - idx[b][c]) * lat.spacing;
        r2 += dx * dx;
      }
      s += kernel_t_value(std::sqrt(r2), t) * rho[b];
    }
    out[a] = s * w;
  }
  return out;
}

struct SimulateOptions {
  bool track = false;
  int rhs_every = 0;
  bool j_norm = true;
  RunOptions run;
  Observer extra;
};

struct Simulation {
  RunResult result;
  std::unique_ptr<ScatteringTracker> tracker;
};

/// dynamics::run with an optional scattering tracker; the tracker state travels
/// with checkpoints.
inline Simulation simulate(const SimConfig& cfg, SimulateOptions so = {}) {
  Simulation sim;
  if (so.track) {
    TrackerOptions to;
    to.eps = cfg.eps;
    to.gamma = cfg.gamma_value();
    to.couplings = {cfg.kernel_coupling, cfg.power_coupling};
    to.keep_times = default_keep_times(cfg.t_end);
    to.rhs_every = so.rhs_every;
    to.j_norm = so.j_norm;
    sim.tracker = std::make_unique<ScatteringTracker>(resolve_grid(cfg), to);
    auto* tr = sim.tracker.get();
    so.run.save_extra = [tr](const std::string& d) { tr->save(d + "/tracker"); };
    so.run.load_extra = [tr](const std::string& d) { tr->load(d + "/tracker"); };
  }
  auto* tr = sim.tracker.get();
  Observer extra = so.extra;
  sim.result = run(cfg, [tr, extra](const SnapshotView& s) {
    if (tr) tr->observe(s);
    if (extra) extra(s);
  }, so.run);
  return sim;
}

inline void write_run_outputs(const OutputDir& out, const Simulation& sim, const std::string& prefix = "") {
  const auto& r = sim.result;
  write_series_csv(out.file(prefix + "series.csv"), r.series);
  write_snapshot(out.file(prefix + "final.sbpf"), r.final_u, r.t_final);
  out.write_text(prefix + "config.cfg", r.config.echo() + "resolved_box = " + fmt(r.grid.box_length) + "\n");
  if (sim.tracker) sim.tracker->write_csv(out.file(prefix + "diagnostics.csv"));
}

inline double max_relative_mass_drift(const std::vector<SeriesRow>& s) {
  double d = 0.0;
  for (const auto& r : s) d = std::max(d, std::abs(r.mass - s.front().mass) / s.front().mass);
  return d;
}

inline json box_json(const RunResult& r) {
  return {{"box_length", r.grid.box_length},
          {"required_length", r.box.required_length},
          {"mass_radius", r.box.mass_radius},
          {"velocity", r.box.velocity},
          {"n", r.grid.n},
          {"dim", r.grid.dim}};
}

// ---- verify-ops ------------------------------------------------------------

/// Operator identities (suite = operators) or free-flow exactness (suite = free_flow).
inline Verdict exp_verify_ops(const ExperimentContext& ctx, const OutputDir& out) {
  Verdict v;
  const std::string suite = ctx.kv.get_string("suite", "operators");
  if (suite == "free_flow") {
    double thr = ctx.threshold("free_flow");
    const int dim = static_cast<int>(ctx.kv.get_int("free.dim", 2));
    auto g = GridSpec::make(dim, static_cast<int>(ctx.kv.get_int("free.n")), ctx.kv.get_double("free.box"));
    const double t = ctx.kv.get_double("free.t"), dt = ctx.kv.get_double("free.dt");
    // e^{it Delta} e^{-|x|^2/4} = (1 + it)^{-d/2} e^{-|x|^2 / (4(1 + it))}
    auto u = centered_gaussian(g, 0.25);
    StrangStepper st(g, dt, {0.0, 0.0});
    st.advance(u, std::llround(t / dt));
    ComplexField exact(g, Space::physical);
    RVector r2 = radius_squared(g);
    const cplx a{1.0, t};
    for (std::size_t i = 0; i < r2.size(); ++i) exact[i] = std::exp(-r2[i] / (4.0 * a)) * std::pow(a, -0.5 * dim);
    double dev = relative_l2(u, exact);
    v.checks.push_back(check_at_most("free_flow_rel_l2", dev, thr));
    v.details["free_flow"] = {{"n", g.n}, {"box", g.box_length}, {"t", t}, {"dt", dt}, {"rel_l2", dev}};
    out.write_text("free_flow.csv", "t,rel_l2\n" + csv_line({t, dev}));
    return v;
  }
  if (suite != "operators") throw ConfigError(ctx.kv.where("suite") + ": unknown suite '" + suite + "'");

  const double thr_j = ctx.threshold("j_route"), thr_p = ctx.threshold("j_power"), thr_m = ctx.threshold("mdfm");
  const std::uint64_t s = static_cast<std::uint64_t>(
      ctx.overrides.has("seed") ? ctx.overrides.get_int("seed") : ctx.kv.get_int("seed", 7));
  std::string csv = "identity,t,deviation\n";

  auto gj = GridSpec::make(2, static_cast<int>(ctx.kv.get_int("j.n")), ctx.kv.get_double("j.box"));
  auto uj = random_smooth_field(gj, s, ctx.kv.get_double("j.sigma"));
  double worst_j = 0.0;
  json jt = json::array();
  for (double t : ctx.kv.get_list("j.times")) {
    double dev = vector_relative_l2(galilean_J(uj, t), galilean_J_gauge(uj, t));
    worst_j = std::max(worst_j, dev);
    jt.push_back({{"t", t}, {"deviation", dev}});
    csv += "j_route," + fmt(t) + "," + fmt(dev) + "\n";
  }
  v.checks.push_back(check_at_most("j_route_rel", worst_j, thr_j));

  auto gp = GridSpec::make(2, static_cast<int>(ctx.kv.get_int("jpow.n")), ctx.kv.get_double("jpow.box"));
  const double tp = ctx.kv.get_double("jpow.t"), gamma = ctx.kv.get_double("jpow.gamma", default_gamma(2));
  auto up = centered_gaussian(gp, ctx.kv.get_double("jpow.a"));
  auto jr = J_power_check(up, tp, gamma);
  v.checks.push_back(check_at_most("j_power_rel", jr.deviation, thr_p));
  csv += "j_power," + fmt(tp) + "," + fmt(jr.deviation) + "\n";

  auto gm = GridSpec::make(2, static_cast<int>(ctx.kv.get_int("mdfm.n")), ctx.kv.get_double("mdfm.box"));
  const double tm = ctx.kv.get_double("mdfm.t");
  auto um = centered_gaussian(gm, ctx.kv.get_double("mdfm.a"));
  auto mr = mdfm_factorization_check(um, tm);
  v.checks.push_back(check_at_most("mdfm_rel", mr.deviation, thr_m));
  csv += "mdfm," + fmt(tm) + "," + fmt(mr.deviation) + "\n";

  v.details["seed"] = s;
  v.details["j_route"] = jt;
  v.details["j_power"] = {{"n", gp.n}, {"box", gp.box_length}, {"t", tp}, {"gamma", gamma},
                          {"deviation", jr.deviation}, {"norm", jr.norm_primary}, {"norm_check", jr.norm_check}};
  v.details["mdfm"] = {{"n", gm.n}, {"box", gm.box_length}, {"t", tm}, {"deviation", mr.deviation},
                       {"half_box_mass", mr.half_box_mass}};
  out.write_text("identities.csv", csv);
  return v;
}

// ---- run -------------------------------------------------------------------

inline double peak_energy_drift(SimConfig cfg, double dt, double t_end) {
  cfg.dt = dt;
  cfg.t_end = t_end;
  cfg.snapshot_stride = 1;
  auto r = run(cfg);
  double e0 = r.series.front().energy, peak = 0.0;
  for (const auto& row : r.series) peak = std::max(peak, std::abs(row.energy - e0));
  return peak / std::abs(e0);
}

/// Worst relative error of the finite-difference variation of the energy
/// against 2 Re <-Delta u + V u, v> over a few random directions.
inline double variational_oracle_error(const GridSpec& g, std::uint64_t seed, double amp, Couplings c = {}) {
  auto km = build_multiplier(Lattice::physical(g));
  auto scaled = [&](ComplexField f) {
    double s = amp / max_abs(f);
    for (auto& x : f.values) x *= s;
    return f;
  };
  const double sigma = 0.15 * g.box_length;
  auto u = scaled(random_smooth_field(g, seed, sigma, 4));
  auto grad = energy_gradient(u, km, c);
  double worst = 0.0;
  for (std::uint64_t k = 1; k <= 3; ++k) {
    auto dir = scaled(random_smooth_field(g, seed + 1000 * k, sigma, 4));
    const double eta = 1e-4;
    ComplexField up = u, um = u;
    for (std::size_t i = 0; i < u.size(); ++i) {
      up[i] += eta * dir[i];
      um[i] -= eta * dir[i];
    }
    double fd = (conserved_quantities(up, km, c).energy - conserved_quantities(um, km, c).energy) / (2.0 * eta);
    double an = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) an += 2.0 * (std::conj(grad[i]) * dir[i]).real();
    an *= g.cell_volume();
    worst = std::max(worst, std::abs(fd - an) / std::abs(an));
  }
  return worst;
}

inline bool files_identical(const std::string& a, const std::string& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  return sa == sb;
}

/// dynamics.run plus the optional checks a preset asks for: mass drift,
/// variational oracle and energy-drift order (conservation), and repeat /
/// restart byte identity (determinism).
inline Verdict exp_run(const ExperimentContext& ctx, const OutputDir& out, const std::string& sim_prefix,
                       const std::string& resume_from = "") {
  Verdict v;
  const bool conservation = ctx.kv.get_bool("check.conservation", false);
  const bool determinism = ctx.kv.get_bool("check.determinism", false);
  double thr_mass = 0, thr_var = 0, lo = 0, hi = 0;
  if (conservation) {
    thr_mass = ctx.threshold("mass_drift");
    thr_var = ctx.threshold("variational");
    lo = ctx.threshold("energy_order_min");
    hi = ctx.threshold("energy_order_max");
  }
  const int ckpt_every = static_cast<int>(ctx.kv.get_int("checkpoint_every", 0));
  const bool track = ctx.kv.get_bool("track", false);
  SimConfig cfg = ctx.sim(sim_prefix);

  double e_dt = 0, e_t = 0;
  std::uint64_t var_seed = 0;
  double var_amp = 0;
  if (conservation) {
    e_dt = ctx.kv.get_double("energy.dt");
    e_t = ctx.kv.get_double("energy.t_end");
    var_seed = static_cast<std::uint64_t>(ctx.kv.get_int("variational.seed"));
    var_amp = ctx.kv.get_double("variational.amplitude");
  }
  double restart_at = 0.5;
  if (determinism) restart_at = ctx.kv.get_double("determinism.restart_fraction", 0.5);

  if (conservation) {
    // the oracle gates the energy numbers
    double var = variational_oracle_error(resolve_grid(cfg), var_seed, var_amp, {cfg.kernel_coupling, cfg.power_coupling});
    v.checks.push_back(check_at_most("variational_oracle_rel", var, thr_var));
    v.details["variational_oracle_rel"] = var;
  }

  SimulateOptions so;
  so.track = track || determinism;
  if (ckpt_every > 0) {
    so.run.checkpoint_dir = out.file("checkpoint");
    so.run.checkpoint_every = ckpt_every;
  }
  so.run.resume_from = resume_from;
  auto sim = simulate(cfg, so);
  write_run_outputs(out, sim);
  v.details["box"] = box_json(sim.result);
  v.details["steps"] = sim.result.steps;
  v.details["t_final"] = sim.result.t_final;
  v.details["snapshots"] = sim.result.series.size();
  double drift = max_relative_mass_drift(sim.result.series);
  v.details["mass_drift_rel"] = drift;

  if (conservation) {
    v.checks.push_back(check_at_most("mass_drift_rel", drift, thr_mass));
    double e1 = peak_energy_drift(cfg, e_dt, e_t), e2 = peak_energy_drift(cfg, 0.5 * e_dt, e_t);
    double ratio = e1 / e2;
    v.checks.push_back(check_within("energy_drift_ratio", ratio, lo, hi));
    v.details["energy"] = {{"dt", e_dt}, {"t_end", e_t}, {"peak_drift_dt", e1}, {"peak_drift_half_dt", e2},
                           {"ratio", ratio}};
    out.write_text("energy_order.csv", "dt,peak_rel_drift\n" + csv_line({e_dt, e1}) + csv_line({0.5 * e_dt, e2}));
  }

  if (determinism) {
    const std::vector<std::string> files{"series.csv", "final.sbpf", "diagnostics.csv", "config.cfg"};
    // repeat
    auto again = simulate(cfg, SimulateOptions{true, 0, true, {}, {}});
    write_run_outputs(out, again, "repeat_");
    bool same = true;
    for (const auto& f : files) same = same && files_identical(out.file(f), out.file("repeat_" + f));
    v.checks.push_back(check_true("repeat_byte_identical", same));
    // interrupt at a snapshot, then resume from the checkpoint
    const long long stride = cfg.snapshot_stride;
    long long stop = std::max<long long>(stride, (std::llround(restart_at * cfg.total_steps()) / stride) * stride);
    SimulateOptions first;
    first.track = true;
    first.run.checkpoint_dir = out.file("restart_checkpoint");
    first.run.checkpoint_every = 1;
    first.run.stop_after_steps = stop;
    (void)simulate(cfg, first);
    SimulateOptions second;
    second.track = true;
    second.run.resume_from = out.file("restart_checkpoint");
    auto resumed = simulate(cfg, second);
    write_run_outputs(out, resumed, "restart_");
    bool same_r = true;
    for (const auto& f : files) same_r = same_r && files_identical(out.file(f), out.file("restart_" + f));
    v.checks.push_back(check_true("restart_byte_identical", same_r));
    v.details["restart_step"] = stop;
  }
  return v;
}

// ---- kernel-check ----------------------------------------------------------

inline Verdict exp_kernel_check(const ExperimentContext& ctx, const OutputDir& out) {
  Verdict v;
  const double thr_direct = ctx.threshold("direct_sum"), thr_band = ctx.threshold("multiplier_band");
  const double thr_lp = ctx.threshold("lp_box_change"), thr_trend = ctx.threshold("l2_trend");

  // padded FFT vs direct sum
  const int dn = static_cast<int>(ctx.kv.get_int("direct.n"));
  const double dbox = ctx.kv.get_double("direct.box");
  const auto seed = static_cast<std::uint64_t>(ctx.kv.get_int("seed", 7));
  Lattice dl{2, dn, dbox / dn};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  RVector rho(dl.size());
  for (auto& x : rho) x = ud(rng);
  RVector fast = convolve(build_multiplier(dl), rho), slow = direct_kernel_sum(dl, rho);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < rho.size(); ++i) {
    num = std::max(num, std::abs(fast[i] - slow[i]));
    den = std::max(den, std::abs(slow[i]));
  }
  v.checks.push_back(check_at_most("direct_sum_rel", num / den, thr_direct));
  v.details["direct_sum"] = {{"n", dn}, {"box", dbox}, {"rel_max", num / den}};

  // sampled vs analytic multiplier in a band
  const int bn = static_cast<int>(ctx.kv.get_int("band.n"));
  const double bbox = ctx.kv.get_double("band.box");
  Lattice bl{2, bn, bbox / bn};
  auto ms = build_multiplier(bl), ma = build_multiplier(bl, 0.5, MultiplierMode::analytic);
  const double lo = ctx.kv.get_double("band.xi_min"), hi = ctx.kv.get_double("band.xi_max_fraction") * ms.xi_max();
  double band = multiplier_deviation(ms, ma, lo, hi);
  v.checks.push_back(check_at_most("multiplier_band_rel", band, thr_band));
  v.details["multiplier_band"] = {{"n", bn}, {"box", bbox}, {"xi_min", lo}, {"xi_max", hi}, {"rel_max", band}};
  export_multiplier_csv(ms, out.file("multiplier_sampled.csv"));
  export_multiplier_csv(ma, out.file("multiplier_analytic.csv"));

  // box norms
  const int cells = static_cast<int>(ctx.kv.get_int("lemma.cells_per_unit", 16));
  auto lp = lemma1_report(2, ctx.kv.get_double("lemma.p"), ctx.kv.get_list("lemma.boxes"), cells);
  auto l2 = lemma1_report(2, 2.0, ctx.kv.get_list("lemma.l2_boxes"), cells);
  v.checks.push_back(check_at_most("lp_box_rel_change", lp.rows.back().rel_change, thr_lp));
  bool increasing = true;
  double worst = 0.0;
  for (std::size_t i = 1; i < l2.rows.size(); ++i) increasing = increasing && l2.rows[i].norm > l2.rows[i - 1].norm;
  for (double r : l2.log_slope_ratio) worst = std::max(worst, std::abs(r - 1.0));
  v.checks.push_back(check_true("l2_box_increasing", increasing));
  v.checks.push_back(check_at_most("l2_log_trend_dev", worst, thr_trend));
  std::string csv = "p,box,norm,rel_change\n";
  json rows = json::array();
  for (const auto* rep : {&lp, &l2})
    for (const auto& r : rep->rows) {
      csv += csv_line({rep->p, r.box_length, r.norm, r.rel_change});
      rows.push_back({{"p", rep->p}, {"box", r.box_length}, {"norm", r.norm}, {"rel_change", r.rel_change}});
    }
  out.write_text("box_norms.csv", csv);
  v.details["box_norms"] = rows;
  v.details["l2_log_slope_ratio"] = l2.log_slope_ratio;
  return v;
}

// ---- decay -----------------------------------------------------------------

inline Verdict exp_decay(const ExperimentContext& ctx, const OutputDir& out, const std::vector<int>& dims) {
  Verdict v;
  std::map<int, std::pair<double, double>> limits;
  for (int d : dims) {
    std::string p = "d" + std::to_string(d) + ".";
    limits[d] = {ctx.threshold(p + "slope_min"), ctx.threshold(p + "slope_max")};
  }
  const double fit_from = ctx.kv.get_double("fit.t_min", 1.0);
  for (int d : dims) {
    std::string p = "d" + std::to_string(d) + ".";
    SimConfig cfg = ctx.sim(p);
    if (cfg.dim != d) throw ConfigError("section " + p + " must have dim = " + std::to_string(d));
    Simulation sim = simulate(cfg);
    write_run_outputs(out, sim, p);
    std::vector<std::pair<double, double>> pts;
    std::string csv = "t,linf\n";
    for (const auto& r : sim.result.series)
      if (r.t >= fit_from - 1e-9) {
        pts.emplace_back(r.t, r.linf);
        csv += csv_line({r.t, r.linf});
      }
    out.write_text(p + "decay.csv", csv);
    DecayFit f = decay_fit(pts);
    v.checks.push_back(check_within(p + "slope", f.slope, limits[d].first, limits[d].second));
    v.details[p + "fit"] = {{"slope", f.slope}, {"intercept", f.intercept}, {"slope_stderr", f.slope_stderr},
                            {"band_lo", f.band_lo}, {"band_hi", f.band_hi}, {"points", f.points},
                            {"expected", -0.5 * d}};
    v.details[p + "box"] = box_json(sim.result);
    v.details[p + "mass_drift_rel"] = max_relative_mass_drift(sim.result.series);
  }
  return v;
}

// ---- scattering ------------------------------------------------------------

inline bool strictly_decreasing(const std::vector<double>& xs) {
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (!(xs[i] < xs[i - 1])) return false;
  return !xs.empty();
}

inline Verdict exp_scattering(const ExperimentContext& ctx, const OutputDir& out) {
  Verdict v;
  SimConfig cfg = ctx.sim("sim.");
  auto dyadic = ctx.kv.get_list("dyadic");
  if (dyadic.empty()) throw ConfigError("scattering preset needs 'dyadic'");
  if (cfg.t_end < 2.0 * dyadic.back() - 1e-9) throw ConfigError("t_end must reach twice the last dyadic time");
  SimulateOptions so;
  so.track = true;
  so.rhs_every = static_cast<int>(ctx.kv.get_int("rhs_every", 0));
  so.j_norm = ctx.kv.get_bool("j_norm", true);
  Simulation sim = simulate(cfg, so);
  write_run_outputs(out, sim);
  auto& tr = *sim.tracker;
  WExtraction w = extract_W(tr);
  write_snapshot(out.file("W.sbpf"), w.W, w.t_end);
  write_snapshot(out.file("W0.sbpf"), w.W0, w.t_end);

  // dyadic differences at 2T
  std::vector<double> gd, fd;
  std::string csv = "T,g_diff,f_diff\n";
  bool g_below_f = true;
  for (double T : dyadic) {
    const DiagnosticsRecord* rec = nullptr;
    for (const auto& r : tr.records())
      if (std::abs(r.t - 2.0 * T) < 1e-9 * T) rec = &r;
    if (!rec || !std::isfinite(rec->g_dyadic)) throw ConfigError("dyadic time " + fmt(T) + " not on the snapshot grid");
    gd.push_back(rec->g_dyadic);
    fd.push_back(rec->f_dyadic);
    g_below_f = g_below_f && rec->g_dyadic < rec->f_dyadic;
    csv += csv_line({T, rec->g_dyadic, rec->f_dyadic});
  }
  out.write_text("dyadic.csv", csv);
  v.checks.push_back(check_true("g_dyadic_decreasing", strictly_decreasing(gd)));
  v.checks.push_back(check_true("g_dyadic_below_f_dyadic", g_below_f));

  // asymptotic formula
  const Couplings c{cfg.kernel_coupling, cfg.power_coupling};
  std::vector<double> dev;
  std::string acsv = "t,scaled_deviation\n";
  json kept = json::array();
  for (double T : dyadic) {
    const KeptSnapshot* k = tr.find_kept(T);
    if (!k) throw ConfigError("dyadic time " + fmt(T) + " was not retained");
    auto ua = asymptotic_field(w.W, T, tr.kernels().K(), c);
    double d = asymptotic_deviation(k->u, ua, T);
    dev.push_back(d);
    acsv += csv_line({T, d});
    std::string name = "u_t" + fmt(T) + ".sbpf";
    write_snapshot(out.file(name), k->u, T);
    kept.push_back({{"t", T}, {"file", name}});
  }
  out.write_text("asymptotic.csv", acsv);
  v.checks.push_back(check_true("asymptotic_deviation_decreasing", strictly_decreasing(dev)));

  std::string wcsv = "t,g_minus_W0_linf\n";
  for (const auto& r : w.table) wcsv += csv_line({r.t, r.distance});
  out.write_text("w_convergence.csv", wcsv);

  json m;
  m["t_end"] = w.t_end;
  m["kept"] = kept;
  out.write_text("manifest.json", m.dump(2) + "\n");
  v.details["box"] = box_json(sim.result);
  v.details["g_dyadic"] = gd;
  v.details["f_dyadic"] = fd;
  v.details["asymptotic_deviation"] = dev;
  v.details["W"] = {{"t_end", w.t_end}, {"fitted_exponent", number(w.fitted_exponent)}, {"cauchy", w.cauchy},
                    {"aitken_fallback_fraction", w.aitken_fallbacks}, {"linf", max_abs(w.W)}};
  return v;
}

// ---- residual --------------------------------------------------------------

inline Verdict exp_residual(const ExperimentContext& ctx, const OutputDir& out) {
  Verdict v;
  const double lo = ctx.threshold("ratio_min"), hi = ctx.threshold("ratio_max"), rel = ctx.threshold("relative");
  SimConfig cfg = ctx.sim("sim.");
  const double t0 = ctx.kv.get_double("residual.t0");
  auto spacings = ctx.kv.get_list("residual.spacings");
  if (spacings.size() != 2) throw ConfigError(ctx.kv.where("residual.spacings") + ": expected two spacings");
  if (cfg.t_end < t0 + spacings[0] - 1e-9) throw ConfigError("t_end must reach t0 + the coarse spacing");
  auto key = [](double t) { return std::llround(t * 1e6); };
  std::map<long long, ComplexField> wanted;
  for (double d : spacings)
    for (double t : {t0 - d, t0, t0 + d}) wanted[key(t)] = ComplexField();
  SimulateOptions so;
  so.extra = [&](const SnapshotView& s) {
    auto it = wanted.find(key(s.t));
    if (it != wanted.end()) it->second = s.u_hat;
  };
  Simulation sim = simulate(cfg, so);
  write_run_outputs(out, sim);
  for (auto& [k, f] : wanted)
    if (f.values.empty()) throw ConfigError("residual time " + fmt(k * 1e-6) + " is not on the snapshot grid");
  FrequencyKernels ker(sim.result.grid);
  const Couplings c{cfg.kernel_coupling, cfg.power_coupling};
  std::vector<ResidualReport> reps;
  std::string csv = "spacing,residual,largest_term,kernel,power,I1,I2,I3,I4\n";
  for (double d : spacings) {
    std::vector<ProfileSnapshot> sn;
    for (double t : {t0 - d, t0, t0 + d}) sn.push_back(profile(wanted.at(key(t)), t));
    auto r = profile_ode_residual(sn, ker, c);
    reps.push_back(r);
    csv += csv_line({d, r.residual, r.largest_term, r.term_norms[0], r.term_norms[1], r.term_norms[2],
                     r.term_norms[3], r.term_norms[4], r.term_norms[5]});
  }
  out.write_text("residual.csv", csv);
  double ratio = reps[0].residual / reps[1].residual;
  double frac = reps[1].residual / reps[1].largest_term;
  v.checks.push_back(check_within("residual_ratio", ratio, lo, hi));
  v.checks.push_back(check_at_most("residual_fraction_of_largest_term", frac, rel));
  v.details["box"] = box_json(sim.result);
  v.details["t0"] = t0;
  v.details["residuals"] = {reps[0].residual, reps[1].residual};
  v.details["largest_term"] = reps[1].largest_term;
  v.details["I2_two_way_deviation"] = rhs_terms(wanted.at(key(t0)), t0, ker, c).I2_rearranged_deviation;
  return v;
}

// ---- compare ---------------------------------------------------------------

/// Re-evaluates the asymptotic formula against the snapshots stored by a
/// scattering run.
inline Verdict exp_compare(const std::string& run_dir, const OutputDir& out) {
  Verdict v;
  namespace fs = std::filesystem;
  auto kv = KeyValues::parse_file((fs::path(run_dir) / "config.cfg").string());
  KeyValues sim;
  for (const auto& k : kv.keys())
    if (k != "resolved_box") sim.set(k, kv.raw(k));
  SimConfig cfg = SimConfig::from_keys(sim);
  auto W = read_snapshot((fs::path(run_dir) / "W.sbpf").string()).field;
  std::ifstream is((fs::path(run_dir) / "manifest.json").string());
  if (!is) throw UsageError("no manifest.json in " + run_dir + " (not a scattering run)");
  json m = json::parse(is);
  FrequencyKernels ker(W.grid);
  const Couplings c{cfg.kernel_coupling, cfg.power_coupling};
  std::vector<double> dev;
  std::string csv = "t,scaled_deviation,scaled_linf_approx\n";
  for (const auto& k : m["kept"]) {
    double t = k["t"].get<double>();
    auto u = read_snapshot((fs::path(run_dir) / k["file"].get<std::string>()).string()).field;
    auto ua = asymptotic_field(W, t, ker.K(), c);
    double d = asymptotic_deviation(u, ua, t);
    dev.push_back(d);
    csv += csv_line({t, d, std::pow(t, 0.5 * cfg.dim) * max_abs(ua)});
  }
  out.write_text("compare.csv", csv);
  v.checks.push_back(check_true("asymptotic_deviation_decreasing", strictly_decreasing(dev)));
  v.details["run"] = run_dir;
  v.details["asymptotic_deviation"] = dev;
  return v;
}

// ---- dispatch --------------------------------------------------------------

inline std::string preset_dir() {
  if (const char* e = std::getenv("SBP_PRESET_DIR")) return e;
#ifdef SBP_DEFAULT_PRESET_DIR
  return SBP_DEFAULT_PRESET_DIR;
#else
  return "presets";
#endif
}

inline std::filesystem::path output_root() {
  if (const char* e = std::getenv("SBP_OUT_ROOT")) return e;
  return "sbp_out";
}

inline KeyValues load_preset(const std::string& name) {
  std::filesystem::path p = name;
  if (!std::filesystem::exists(p)) p = std::filesystem::path(preset_dir()) / (name + ".cfg");
  if (!std::filesystem::exists(p)) throw UsageError("unknown preset '" + name + "' (looked in " + preset_dir() + ")");
  return KeyValues::parse_file(p.string());
}

inline std::string preset_name(const std::string& name) { return std::filesystem::path(name).stem().string(); }

struct Invocation {
  std::string command;
  std::string preset;       // preset name or path
  std::string config;       // plain SimConfig file (run only)
  std::string out;          // output directory (default: output_root()/preset)
  KeyValues overrides;      // simulation keys from flags
  std::vector<int> dims;    // decay: restrict to these dimensions
  std::string run_dir;      // compare: scattering run to read
  std::string resume;       // run: checkpoint to resume from
};

inline const char* default_preset(const std::string& command) {
  if (command == "run") return "run";
  if (command == "verify-ops") return "c1";
  if (command == "kernel-check") return "c4";
  if (command == "decay") return "c5";
  if (command == "scattering") return "c6";
  if (command == "residual") return "c7";
  return "";
}

/// Runs one command and writes verdict.json. Numerical aborts are recorded in
/// the verdict and rethrown so the caller can choose the exit status.
inline Verdict execute(const Invocation& inv) {
  ExperimentContext ctx;
  ctx.command = inv.command;
  ctx.overrides = inv.overrides;
  std::string sim_prefix = "sim.";
  if (inv.command == "compare") {
    ctx.preset = "compare";
  } else if (!inv.config.empty()) {
    if (inv.command != "run") throw UsageError("--config applies to 'run' only; use --preset for " + inv.command);
    ctx.kv = KeyValues::parse_file(inv.config);
    ctx.preset = preset_name(inv.config);
    sim_prefix = "";
  } else {
    std::string name = inv.preset.empty() ? default_preset(inv.command) : inv.preset;
    ctx.kv = load_preset(name);
    ctx.preset = preset_name(name);
    std::string cmd = ctx.kv.get_string("command", inv.command);
    if (cmd != inv.command)
      throw UsageError("preset '" + ctx.preset + "' belongs to '" + cmd + "', not '" + inv.command + "'");
  }
  int criterion = static_cast<int>(ctx.kv.get_int("criterion", 0));
  (void)ctx.kv.get_string("description", "");

  std::filesystem::path dir = inv.out.empty() ? output_root() / ctx.preset : std::filesystem::path(inv.out);
  OutputDir out(dir);
  Verdict v;
  auto finish = [&](Verdict& r) {
    r.command = inv.command;
    r.preset = ctx.preset;
    r.criterion = criterion;
    out.write_text("verdict.json", r.to_json().dump(2) + "\n");
  };
  try {
    if (inv.command == "run") {
      v = exp_run(ctx, out, sim_prefix, inv.resume);
    } else if (inv.command == "verify-ops") {
      v = exp_verify_ops(ctx, out);
    } else if (inv.command == "kernel-check") {
      v = exp_kernel_check(ctx, out);
    } else if (inv.command == "decay") {
      std::vector<int> dims = inv.dims;
      if (dims.empty())
        for (int d : {2, 3})
          if (ctx.kv.has("d" + std::to_string(d) + ".dim")) dims.push_back(d);
      v = exp_decay(ctx, out, dims);
    } else if (inv.command == "scattering") {
      v = exp_scattering(ctx, out);
    } else if (inv.command == "residual") {
      v = exp_residual(ctx, out);
    } else if (inv.command == "compare") {
      if (inv.run_dir.empty()) throw UsageError("compare needs --run <scattering output directory>");
      v = exp_compare(inv.run_dir, out);
    } else {
      throw UsageError("unknown command '" + inv.command + "'");
    }
  } catch (const NumericalAbort& e) {
    v.abort_message = e.what();
    finish(v);
    throw;
  }
  if (inv.command != "compare" && inv.command != "decay") {
    auto unused = ctx.kv.unused();
    if (!unused.empty()) v.details["unused_keys"] = unused;
  }
  finish(v);
  return v;
}

}  // namespace sbp
