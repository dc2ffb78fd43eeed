// Command-line front end: JSON scenario configs in, CSV/JSON results out.
// Exit codes: 0 success, 2 validation error, 3 numerical-contract failure.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "weakcorr/run_config.hpp"
#include "weakcorr/runner.hpp"
#include "weakcorr/version.hpp"

namespace {

struct CliArgs {
  std::string config_path;
  std::string model = "two-level";
  double omega = 1.0;
  int truncation = 24;
  double epsilon = 0.0;
  std::string state = "ground";
  double kT = 1.0;
  double tau = 0.0;
  double t1 = 0.0, t2 = 0.3, t1p = 0.8, t3 = 1.8707963267948966;
  double g = 0.02;
  long long trajectories = 100000;
  std::uint64_t seed = 1;
  double alpha = 2.0, beta = -0.5;
  std::string kt_sweep, tau_sweep, g_sweep, epsilon_sweep;
  std::string output_path;
  std::string format = "csv";
  bool with_mc = false;
  std::vector<std::string> slots;  // time:observable:exponent
};

weakcorr::SweepConfig parse_sweep_range(const std::string& text, const std::string& name) {
  weakcorr::SweepConfig sw;
  sw.parameter = name;
  const auto c1 = text.find(':');
  const auto c2 = text.find(':', c1 + 1);
  if (c1 == std::string::npos || c2 == std::string::npos) {
    throw weakcorr::InvalidInputError("sweep range must be start:stop:points");
  }
  sw.start = std::stod(text.substr(0, c1));
  sw.stop = std::stod(text.substr(c1 + 1, c2 - c1 - 1));
  sw.points = std::stoi(text.substr(c2 + 1));
  if (sw.points < 1) throw weakcorr::InvalidInputError("sweep points must be >= 1");
  return sw;
}

weakcorr::RunConfig assemble(const CliArgs& a, weakcorr::Command cmd, bool measurement_used) {
  using namespace weakcorr;
  RunConfig c;
  c.command = cmd;
  c.model.kind = model_kind_from_string(a.model);
  c.model.omega = a.omega;
  c.model.truncation = a.truncation;
  c.model.detuning_epsilon = a.epsilon;
  if (a.epsilon != 0.0 && c.model.kind == ModelKind::PlanarTrap) {
    c.model.kind = ModelKind::DetunedPlanarTrap;
  }
  c.state.type = a.state;
  c.state.kT = a.kT;
  c.times = TimesConfig{a.t1, a.t2, a.t1p, a.t3, a.tau};
  if (measurement_used) {
    c.measurement = MeasurementCfgConfig{a.g, a.trajectories, a.seed, true};
  }
  c.freq.alpha = a.alpha;
  c.freq.beta = a.beta;
  c.lg_epsilon = a.epsilon;
  c.output.path = a.output_path;
  if (a.format == "json") {
    c.output.format = OutputFormat::Json;
  } else if (a.format == "csv") {
    c.output.format = OutputFormat::Csv;
  } else {
    throw InvalidInputError("--format must be csv or json");
  }
  for (const auto& s : a.slots) {
    const auto c1 = s.find(':');
    const auto c2 = s.find(':', c1 + 1);
    if (c1 == std::string::npos) {
      throw InvalidInputError("--slot must be time:observable[:exponent]");
    }
    ScheduleEntryConfig e;
    e.time = std::stod(s.substr(0, c1));
    e.observable = c2 == std::string::npos ? s.substr(c1 + 1)
                                           : s.substr(c1 + 1, c2 - c1 - 1);
    e.exponent = c2 == std::string::npos ? 1 : std::stoi(s.substr(c2 + 1));
    c.schedule.push_back(e);
  }
  return c;
}

int run(const weakcorr::RunConfig& config) {
  weakcorr::run_to_output(config, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace weakcorr;
  CLI::App app{"weakcorr: weak-measurement correlators, conservation jumps and "
               "Leggett-Garg tests for exactly solvable models"};
  app.set_version_flag("--version", std::string(version_string));

  CliArgs a;
  bool print_schema = false;
  app.add_flag("--print-schema", print_schema, "print the JSON config schema and exit");

  auto add_common = [&](CLI::App* sub, bool with_times = true) {
    sub->add_option("--config", a.config_path, "JSON config file (overrides other flags)");
    sub->add_option("--model", a.model,
                    "model kind: two-level | oscillator | planar | detuned-planar");
    sub->add_option("--omega", a.omega, "level spacing / trap frequency (dimensionless)");
    sub->add_option("--truncation", a.truncation, "Fock cutoff per mode");
    sub->add_option("--epsilon", a.epsilon, "trap detuning (w_x = w(1+eps))");
    sub->add_option("--state", a.state, "ground | thermal");
    sub->add_option("--kT", a.kT, "temperature in units of hbar*omega (thermal state)");
    sub->add_option("--output", a.output_path, "output file path (default: stdout)");
    sub->add_option("--format", a.format, "csv | json");
    if (with_times) {
      sub->add_option("--tau", a.tau, "probe delay (energy-jump commands)");
      sub->add_option("--t1", a.t1, "first conserved-quantity time");
      sub->add_option("--t2", a.t2, "x measurement time");
      sub->add_option("--t1p", a.t1p, "second conserved-quantity time");
      sub->add_option("--t3", a.t3, "y measurement time");
    }
  };

  auto* jump_cmd = app.add_subcommand(
      "jump",
      "Conserved-quantity jump across a weak measurement.\n"
      "CSV columns: kT, jump, mean_energy (sweep: first column is the swept parameter)");
  add_common(jump_cmd);
  jump_cmd->add_option("--kT-sweep", a.kt_sweep, "sweep kT as start:stop:points");
  jump_cmd->add_option("--tau-sweep", a.tau_sweep, "sweep tau as start:stop:points");

  auto* corr_cmd = app.add_subcommand(
      "correlator",
      "Weak-measurement quasiprobability moment for a schedule.\n"
      "CSV columns: weak_moment");
  add_common(corr_cmd);
  corr_cmd->add_option("--slot", a.slots, "schedule entry time:observable[:exponent]");

  auto* freq_cmd = app.add_subcommand(
      "freq",
      "Frequency-domain angular-momentum correlator coefficient.\n"
      "CSV columns: alpha, beta, eta, numeric_re, numeric_im, analytic_re, analytic_im");
  add_common(freq_cmd, false);
  freq_cmd->add_option("--alpha", a.alpha, "first position frequency");
  freq_cmd->add_option("--beta", a.beta, "second position frequency");

  auto* lg_cmd = app.add_subcommand(
      "lg",
      "Leggett-Garg CBS inequalities for the planar trap.\n"
      "CSV columns: lhs1, lhs2, rhs, violated1, violated2, margin1, margin2");
  add_common(lg_cmd);
  lg_cmd->add_flag("--with-mc", a.with_mc, "append a Monte Carlo confirmation (JSON output)");
  lg_cmd->add_option("--g", a.g, "measurement strength for --with-mc");
  lg_cmd->add_option("--trajectories", a.trajectories, "trajectories for --with-mc");
  lg_cmd->add_option("--seed", a.seed, "RNG seed for --with-mc");

  auto* kraus_cmd = app.add_subcommand(
      "kraus-sim",
      "Finite-strength Kraus Monte Carlo vs the exact engine.\n"
      "CSV columns: g, mc_moment, mc_stderr, exact_moment, bias");
  add_common(kraus_cmd);
  kraus_cmd->add_option("--slot", a.slots, "schedule entry time:observable[:exponent]");
  kraus_cmd->add_option("--g", a.g, "measurement strength");
  kraus_cmd->add_option("--g-sweep", a.g_sweep, "sweep g as start:stop:points");
  kraus_cmd->add_option("--trajectories", a.trajectories, "trajectory count");
  kraus_cmd->add_option("--seed", a.seed, "RNG seed");

  auto* clock_cmd = app.add_subcommand(
      "clock-sim",
      "Clock-detector oracle vs the exact engine.\n"
      "CSV columns: g, detector_moment, scaled_moment, engine_moment");
  add_common(clock_cmd);
  clock_cmd->add_option("--slot", a.slots, "kick entry time:observable");
  clock_cmd->add_option("--g", a.g, "kick strength");

  auto* sweep_cmd = app.add_subcommand(
      "sweep",
      "Iterate one declared parameter (kT, g, epsilon, tau), one CSV row per point.\n"
      "Columns depend on the parameter; see the README");
  add_common(sweep_cmd);
  sweep_cmd->add_option("--parameter", a.kt_sweep, "unused placeholder");
  sweep_cmd->add_option("--slot", a.slots, "schedule entry for g sweeps");
  sweep_cmd->add_option("--g", a.g, "measurement strength");
  sweep_cmd->add_option("--trajectories", a.trajectories, "trajectory count for g sweeps");
  sweep_cmd->add_option("--seed", a.seed, "RNG seed");
  std::string sweep_spec;
  sweep_cmd->add_option("--range", sweep_spec, "parameter:start:stop:points, e.g. kT:0.1:5:50");

  app.require_subcommand(0, 1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (print_schema) {
      std::cout << config_schema_document() << "\n";
      return 0;
    }
    if (app.get_subcommands().empty()) {
      std::cerr << app.help() << "\n";
      return 2;
    }
    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();

    RunConfig config;
    if (!a.config_path.empty()) {
      std::ifstream f(a.config_path);
      if (!f) throw InvalidInputError("cannot read config file '" + a.config_path + "'");
      json j = json::parse(f, nullptr, true);
      config = run_config_from_json(j);
      if (!a.output_path.empty()) config.output.path = a.output_path;
    } else if (name == "jump") {
      if (!a.kt_sweep.empty() || !a.tau_sweep.empty()) {
        config = assemble(a, Command::Sweep, false);
        config.sweep = a.kt_sweep.empty() ? parse_sweep_range(a.tau_sweep, "tau")
                                          : parse_sweep_range(a.kt_sweep, "kT");
      } else {
        config = assemble(a, Command::Jump, false);
      }
    } else if (name == "correlator") {
      config = assemble(a, Command::Correlator, false);
    } else if (name == "freq") {
      config = assemble(a, Command::Freq, false);
    } else if (name == "lg") {
      config = assemble(a, Command::Lg, a.with_mc);
      if (a.with_mc) config.output.format = OutputFormat::Json;
    } else if (name == "kraus-sim") {
      if (!a.g_sweep.empty()) {
        config = assemble(a, Command::Sweep, true);
        config.sweep = parse_sweep_range(a.g_sweep, "g");
      } else {
        config = assemble(a, Command::KrausSim, true);
      }
    } else if (name == "clock-sim") {
      config = assemble(a, Command::ClockSim, true);
    } else if (name == "sweep") {
      config = assemble(a, Command::Sweep, true);
      if (sweep_spec.empty()) {
        throw InvalidInputError("sweep: --range parameter:start:stop:points required");
      }
      const auto c1 = sweep_spec.find(':');
      if (c1 == std::string::npos) {
        throw InvalidInputError("sweep: --range parameter:start:stop:points required");
      }
      config.sweep = parse_sweep_range(sweep_spec.substr(c1 + 1), sweep_spec.substr(0, c1));
      if (config.sweep->parameter != "kT" && config.sweep->parameter != "g" &&
          config.sweep->parameter != "epsilon" && config.sweep->parameter != "tau") {
        throw InvalidInputError("sweep parameter must be kT, g, epsilon or tau");
      }
    } else {
      throw InvalidInputError("unknown command '" + name + "'");
    }
    return run(config);
  } catch (const InvalidInputError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalContractError& e) {
    std::cerr << "numerical contract failure: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
