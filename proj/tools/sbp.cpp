#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "sbp/sbp.hpp"

namespace {

struct SimFlags {
  std::string dim, n, box, eps, gamma, dt, t_end, seed, stride;
  std::vector<std::string> set;
};

void add_sim_flags(CLI::App* app, SimFlags& f) {
  app->add_option("--dim", f.dim, "spatial dimension (2 or 3)");
  app->add_option("--n", f.n, "grid points per axis");
  app->add_option("--box", f.box, "box side length or 'auto'");
  app->add_option("--eps", f.eps, "initial H^{gamma,gamma} norm");
  app->add_option("--gamma", f.gamma, "regularity index or 'default'");
  app->add_option("--dt", f.dt, "time step");
  app->add_option("--t-end", f.t_end, "final time");
  app->add_option("--seed", f.seed, "seed for randomized data");
  app->add_option("--stride", f.stride, "steps between snapshots");
  app->add_option("--set", f.set, "extra simulation key=value (repeatable)");
}

sbp::KeyValues overrides_of(const SimFlags& f) {
  sbp::KeyValues kv;
  auto put = [&](const char* key, const std::string& v) {
    if (!v.empty()) kv.set(key, v);
  };
  put("dim", f.dim);
  put("n", f.n);
  put("box", f.box);
  put("eps", f.eps);
  put("gamma", f.gamma);
  put("dt", f.dt);
  put("t_end", f.t_end);
  put("seed", f.seed);
  put("snapshot_stride", f.stride);
  for (const auto& s : f.set) {
    auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw sbp::UsageError("--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  return kv;
}

void print_summary(const sbp::Verdict& v, const std::string& dir) {
  for (const auto& c : v.checks)
    std::printf("%-36s %-5s %.6g\n", c.name.c_str(), c.pass ? "ok" : "FAIL", c.value);
  std::printf("%s %s -> %s (%s)\n", v.command.c_str(), v.preset.c_str(), v.pass() ? "PASS" : "FAIL", dir.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spectral solver and scattering diagnostics for a Hartree equation with a focusing power term"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  sbp::Invocation inv;
  SimFlags flags;
  std::string decay_dims;
  bool json_out = false;
  app.add_flag("--json", json_out, "print the verdict JSON instead of a summary");

  auto common = [&](CLI::App* sc, bool sim) {
    sc->add_option("--preset", inv.preset, "preset name or path");
    sc->add_option("--out", inv.out, "output directory");
    if (sim) add_sim_flags(sc, flags);
  };
  auto* run = app.add_subcommand("run", "integrate one trajectory and write series and snapshots");
  common(run, true);
  run->add_option("--config", inv.config, "plain simulation config file (instead of a preset)");
  run->add_option("--resume", inv.resume, "checkpoint directory to resume from");
  auto* ops = app.add_subcommand("verify-ops", "check propagator and Galilean identities");
  common(ops, false);
  ops->add_option("--seed", flags.seed, "seed for the random test field");
  auto* ker = app.add_subcommand("kernel-check", "check the nonlocal kernel multiplier and box norms");
  common(ker, false);
  auto* dec = app.add_subcommand("decay", "fit the L-infinity decay exponent");
  common(dec, true);
  dec->add_option("--dims", decay_dims, "dimensions to run: 2, 3 or 2,3");
  auto* sca = app.add_subcommand("scattering", "track the profile, extract W and test the asymptotic formula");
  common(sca, true);
  auto* res = app.add_subcommand("residual", "residual of the profile equation at two time spacings");
  common(res, true);
  auto* cmp = app.add_subcommand("compare", "re-evaluate the asymptotic formula for a scattering output");
  cmp->add_option("--run", inv.run_dir, "scattering output directory")->required();
  cmp->add_option("--out", inv.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : sbp::exit_usage;
  }

  try {
    for (auto* sc : app.get_subcommands()) inv.command = sc->get_name();
    inv.overrides = overrides_of(flags);
    if (!decay_dims.empty()) {
      for (char ch : decay_dims) {
        if (ch == '2' || ch == '3') inv.dims.push_back(ch - '0');
        else if (ch != ',') throw sbp::UsageError("--dims expects 2, 3 or 2,3");
      }
    }
    if (inv.command == "compare" && inv.out.empty()) inv.out = inv.run_dir + "/compare";
    auto v = sbp::execute(inv);
    std::string dir = inv.out.empty() ? (sbp::output_root() / v.preset).string() : inv.out;
    if (json_out)
      std::cout << v.to_json().dump(2) << '\n';
    else
      print_summary(v, dir);
    return v.pass() ? sbp::exit_pass : sbp::exit_threshold;
  } catch (const sbp::NumericalAbort& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return sbp::exit_abort;
  } catch (const sbp::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return sbp::exit_usage;
  } catch (const sbp::UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return sbp::exit_usage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return sbp::exit_abort;
  }
}
