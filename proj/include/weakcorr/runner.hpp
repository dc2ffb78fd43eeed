#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "weakcorr/clock_detector.hpp"
#include "weakcorr/correlator.hpp"
#include "weakcorr/csv.hpp"
#include "weakcorr/leggett_garg.hpp"
#include "weakcorr/measurement.hpp"
#include "weakcorr/run_config.hpp"
#include "weakcorr/spectral.hpp"
#include "weakcorr/version.hpp"

namespace weakcorr {

namespace detail {

inline std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

inline State make_state(const RunConfig& c, const ModelBundle& b) {
  if (c.state.type == "thermal") return thermal_state(b.hamiltonian, c.state.kT);
  return ground_state(b);
}

inline json metadata_json(const RunConfig& c) {
  json m;
  m["artifact_version"] = version_string;
  m["config_hash"] = config_hash(c);
  m["seed"] = c.measurement ? c.measurement->seed : 0;
  m["truncation"] = c.model.truncation;
  m["tolerances"] = {{"construction", construction_tol}, {"propagated", propagated_tol}};
  m["timestamp"] = iso_timestamp();
  return m;
}

inline void write_metadata(CsvWriter& w, const RunConfig& c) {
  w.metadata("artifact_version", version_string);
  w.metadata("config_hash", config_hash(c));
  w.metadata("seed", std::to_string(c.measurement ? c.measurement->seed : 0));
  w.metadata("truncation", std::to_string(c.model.truncation));
  w.metadata("tolerances", "construction=1e-12,propagated=1e-10");
  w.metadata("timestamp", iso_timestamp());
}

struct JumpRow {
  double jump = 0.0;
  double mean_energy = 0.0;
};

/// Jump and mean energy for the configured model. Two-level and oscillator
/// probe the energy jump across an X measurement at time 0 (second X at tau);
/// the trap probes the angular-momentum jump across X(t2), read by Y(t3).
inline JumpRow jump_point(const ModelSpec& spec, const std::string& state_type, double kT,
                          double tau, const TimesConfig& times) {
  ModelBundle b = build(spec);
  const State rho =
      state_type == "thermal" ? thermal_state(b.hamiltonian, kT) : ground_state(b);
  JumpRow row;
  row.mean_energy = expectation(b.hamiltonian, rho);
  if (spec.kind == ModelKind::PlanarTrap || spec.kind == ModelKind::DetunedPlanarTrap) {
    const JumpReport rep =
        jump(b.observable("Lz"), ScheduledObservable{times.t2, b.observable("X"), 1},
             ScheduledObservable{times.t3, b.observable("Y"), 1}, rho, b.hamiltonian);
    row.jump = rep.jump_value;
  } else {
    const JumpReport rep =
        jump(b.observable("H"), ScheduledObservable{0.0, b.observable("X"), 1},
             ScheduledObservable{tau, b.observable("X"), 1}, rho, b.hamiltonian);
    row.jump = rep.jump_value;
  }
  return row;
}

inline Operator resolve_observable(const ModelBundle& b, const std::string& name) {
  return b.observable(name);
}

inline std::vector<ScheduledObservable> resolve_schedule(const RunConfig& c,
                                                         const ModelBundle& b) {
  if (c.schedule.empty()) {
    throw InvalidInputError("schedule must be non-empty");
  }
  std::vector<ScheduledObservable> out;
  for (const auto& e : c.schedule) {
    out.push_back(ScheduledObservable{e.time, resolve_observable(b, e.observable), e.exponent});
  }
  return out;
}

}  // namespace detail

/// Execute the configured pipeline, writing the result document to `out`.
/// Validation failures throw InvalidInputError; numerical-contract failures
/// throw NumericalContractError (the CLI maps these to exit codes 2 and 3).
inline void run_pipeline(const RunConfig& c, std::ostream& out) {
  switch (c.command) {
    case Command::Jump: {
      const detail::JumpRow row = detail::jump_point(c.model, c.state.type, c.state.kT,
                                                     c.times.tau, c.times);
      if (c.output.format == OutputFormat::Json) {
        json j;
        j["metadata"] = detail::metadata_json(c);
        j["results"] = {{"jump", row.jump}, {"mean_energy", row.mean_energy}};
        out << j.dump(2) << "\n";
      } else {
        CsvWriter w(out);
        detail::write_metadata(w, c);
        w.header({"kT", "jump", "mean_energy"});
        w.row({c.state.type == "thermal" ? c.state.kT : 0.0, row.jump, row.mean_energy});
      }
      return;
    }
    case Command::Correlator: {
      ModelBundle b = build(c.model);
      const State rho = detail::make_state(c, b);
      CorrelatorRequest req{detail::resolve_schedule(c, b), rho, b.hamiltonian};
      const double value = weak_moment(req);
      if (c.output.format == OutputFormat::Json) {
        json j;
        j["metadata"] = detail::metadata_json(c);
        j["results"] = {{"weak_moment", value}};
        out << j.dump(2) << "\n";
      } else {
        CsvWriter w(out);
        detail::write_metadata(w, c);
        w.header({"weak_moment"});
        w.row({value});
      }
      return;
    }
    case Command::Freq: {
      ModelSpec spec = c.model;
      if (spec.kind != ModelKind::PlanarTrap) spec.kind = ModelKind::PlanarTrap;
      ModelBundle b = build(spec);
      const State rho = ground_state(b);
      const cplx analytic = lz_freq_analytic(c.freq.alpha, c.freq.beta, spec.omega);
      LzPlateauTable table(b, rho);
      std::vector<FreqResult> numeric;
      for (double eta : c.freq.eta) {
        numeric.push_back(
            lz_freq_numeric(c.freq.alpha, c.freq.beta, b, rho, eta, 1e-10, &table));
      }
      if (c.output.format == OutputFormat::Json) {
        json j;
        j["metadata"] = detail::metadata_json(c);
        json rows = json::array();
        for (const auto& r : numeric) {
          rows.push_back({{"eta", r.regularization_eta},
                          {"numeric_re", r.coefficient.real()},
                          {"numeric_im", r.coefficient.imag()}});
        }
        j["results"] = {{"alpha", c.freq.alpha},
                        {"beta", c.freq.beta},
                        {"analytic_re", analytic.real()},
                        {"analytic_im", analytic.imag()},
                        {"numeric", rows}};
        out << j.dump(2) << "\n";
      } else {
        CsvWriter w(out);
        detail::write_metadata(w, c);
        w.header({"alpha", "beta", "eta", "numeric_re", "numeric_im", "analytic_re",
                  "analytic_im"});
        for (const auto& r : numeric) {
          w.row({c.freq.alpha, c.freq.beta, r.regularization_eta, r.coefficient.real(),
                 r.coefficient.imag(), analytic.real(), analytic.imag()});
        }
      }
      return;
    }
    case Command::Lg: {
      ModelSpec spec = c.model;
      if (spec.kind != ModelKind::PlanarTrap && spec.kind != ModelKind::DetunedPlanarTrap) {
        spec.kind = ModelKind::PlanarTrap;
      }
      if (c.lg_epsilon != 0.0) {
        spec.kind = ModelKind::DetunedPlanarTrap;
        spec.detuning_epsilon = c.lg_epsilon;
      }
      ModelBundle b = build(spec);
      const State rho = detail::make_state(c, b);
      LGScenario sc = make_lz_scenario(spec, rho, c.times.t1, c.times.t2, c.times.t1p,
                                       c.times.t3);
      const LGReport rep = evaluate_lg(sc);
      json results = {{"lhs1", rep.lhs1},       {"lhs2", rep.lhs2},
                      {"rhs", rep.rhs},         {"violated1", rep.violated1},
                      {"violated2", rep.violated2}, {"margin1", rep.margin1},
                      {"margin2", rep.margin2}, {"state", c.state.type}};
      if (c.measurement) {
        MeasurementConfig mc{c.measurement->g, c.measurement->trajectories,
                             c.measurement->seed, c.measurement->deconvolve};
        SequenceOptions so;
        so.rb_last = true;
        so.antithetic_slots = 3;
        const LGMonteCarloReport mrep = lg_monte_carlo(sc, mc, so);
        results["monte_carlo"] = {{"rhs", mrep.central.rhs},
                                  {"rhs_se", mrep.rhs_se},
                                  {"lhs1", mrep.central.lhs1},
                                  {"lhs1_se", mrep.lhs1_se},
                                  {"lhs2", mrep.central.lhs2},
                                  {"lhs2_se", mrep.lhs2_se},
                                  {"trajectories", mrep.n_trajectories}};
      }
      if (c.output.format == OutputFormat::Json) {
        json j;
        j["metadata"] = detail::metadata_json(c);
        j["results"] = results;
        out << j.dump(2) << "\n";
      } else {
        CsvWriter w(out);
        detail::write_metadata(w, c);
        w.header({"lhs1", "lhs2", "rhs", "violated1", "violated2", "margin1", "margin2"});
        w.row({rep.lhs1, rep.lhs2, rep.rhs, rep.violated1 ? 1.0 : 0.0,
               rep.violated2 ? 1.0 : 0.0, rep.margin1, rep.margin2});
      }
      return;
    }
    case Command::KrausSim: {
      if (!c.measurement) throw InvalidInputError("kraus-sim requires a measurement section");
      ModelBundle b = build(c.model);
      const State rho = detail::make_state(c, b);
      const auto schedule = detail::resolve_schedule(c, b);
      MeasurementConfig mc{c.measurement->g, c.measurement->trajectories, c.measurement->seed,
                           c.measurement->deconvolve};
      SequenceOptions so;
      so.rb_last = true;
      TrajectoryBatch batch = run_sequence(rho, schedule, b.hamiltonian, mc, so);
      std::vector<int> powers;
      for (const auto& s : schedule) powers.push_back(s.exponent);
      const DeconvolvedMoment moment = deconvolve_moments(batch, mc, powers);
      CorrelatorRequest req{schedule, rho, b.hamiltonian};
      const double exact = weak_moment(req);
      if (c.output.format == OutputFormat::Json) {
        json j;
        j["metadata"] = detail::metadata_json(c);
        j["results"] = {{"mc_moment", moment.value},
                        {"mc_stderr", moment.stderr},
                        {"exact_moment", exact},
                        {"bias", moment.value - exact},
                        {"g", mc.g},
                        {"trajectories", mc.n_trajectories}};
        out << j.dump(2) << "\n";
      } else {
        CsvWriter w(out);
        detail::write_metadata(w, c);
        w.header({"g", "mc_moment", "mc_stderr", "exact_moment", "bias"});
        w.row({mc.g, moment.value, moment.stderr, exact, moment.value - exact});
      }
      return;
    }
    case Command::ClockSim: {
      if (!c.measurement) throw InvalidInputError("clock-sim requires a measurement section");
      ModelBundle b = build(c.model);
      const State rho = detail::make_state(c, b);
      const auto schedule = detail::resolve_schedule(c, b);
      if (schedule.size() > 4) throw InvalidInputError("clock-sim supports at most 4 kicks");
      std::vector<ClockKick> kicks;
      for (const auto& s : schedule) {
        if (s.exponent != 1) {
          throw InvalidInputError("clock-sim: kicks read first powers only");
        }
        kicks.push_back(ClockKick{s.time, s.observable, c.measurement->g});
      }
      const ClockRunResult res = sequential_clock_run(rho, kicks, b.hamiltonian);
      CorrelatorRequest req{schedule, rho, b.hamiltonian};
      const double exact = weak_moment(req);
      const double gk = std::pow(c.measurement->g, static_cast<double>(kicks.size()));
      const double scaled = res.cumulative_moments.back() / gk;
      if (c.output.format == OutputFormat::Json) {
        json j;
        j["metadata"] = detail::metadata_json(c);
        j["results"] = {{"detector_moment", res.cumulative_moments.back()},
                        {"scaled_moment", scaled},
                        {"engine_moment", exact},
                        {"relative_error",
                         exact != 0.0 ? std::abs(scaled - exact) / std::abs(exact) : scaled},
                        {"g", c.measurement->g}};
        out << j.dump(2) << "\n";
      } else {
        CsvWriter w(out);
        detail::write_metadata(w, c);
        w.header({"g", "detector_moment", "scaled_moment", "engine_moment"});
        w.row({c.measurement->g, res.cumulative_moments.back(), scaled, exact});
      }
      return;
    }
    case Command::Sweep: {
      if (!c.sweep) throw InvalidInputError("sweep requires a sweep section");
      const SweepConfig& sw = *c.sweep;
      CsvWriter w(out);
      detail::write_metadata(w, c);
      auto value_at = [&](int i) {
        return sw.points == 1
                   ? sw.start
                   : sw.start + (sw.stop - sw.start) * i / static_cast<double>(sw.points - 1);
      };
      if (sw.parameter == "kT" || sw.parameter == "tau") {
        w.header({sw.parameter, "jump", "mean_energy"});
        for (int i = 0; i < sw.points; ++i) {
          const double v = value_at(i);
          const double kT = sw.parameter == "kT" ? v : c.state.kT;
          const double tau = sw.parameter == "tau" ? v : c.times.tau;
          const detail::JumpRow row =
              detail::jump_point(c.model, sw.parameter == "kT" ? "thermal" : c.state.type, kT,
                                 tau, c.times);
          w.row({v, row.jump, row.mean_energy});
        }
      } else if (sw.parameter == "epsilon") {
        w.header({"epsilon", "lhs1", "lhs2", "rhs", "margin1", "margin2", "violated1",
                  "violated2"});
        for (int i = 0; i < sw.points; ++i) {
          const double eps = value_at(i);
          ModelSpec spec = c.model;
          spec.kind = eps == 0.0 ? ModelKind::PlanarTrap : ModelKind::DetunedPlanarTrap;
          spec.detuning_epsilon = eps;
          ModelBundle b = build(spec);
          LGScenario sc = make_lz_scenario(spec, detail::make_state(c, b), c.times.t1,
                                           c.times.t2, c.times.t1p, c.times.t3);
          const LGReport rep = evaluate_lg(sc);
          w.row({eps, rep.lhs1, rep.lhs2, rep.rhs, rep.margin1, rep.margin2,
                 rep.violated1 ? 1.0 : 0.0, rep.violated2 ? 1.0 : 0.0});
        }
      } else {  // g
        if (!c.measurement) throw InvalidInputError("g sweep requires a measurement section");
        if (c.schedule.empty()) throw InvalidInputError("schedule must be non-empty");
        w.header({"g", "mc_moment", "mc_stderr", "exact_moment", "bias"});
        ModelBundle b = build(c.model);
        const State rho = detail::make_state(c, b);
        const auto schedule = detail::resolve_schedule(c, b);
        CorrelatorRequest req{schedule, rho, b.hamiltonian};
        const double exact = weak_moment(req);
        for (int i = 0; i < sw.points; ++i) {
          const double g = value_at(i);
          MeasurementConfig mc{g, c.measurement->trajectories, c.measurement->seed,
                               c.measurement->deconvolve};
          SequenceOptions so;
          so.rb_last = true;
          TrajectoryBatch batch = run_sequence(rho, schedule, b.hamiltonian, mc, so);
          std::vector<int> powers;
          for (const auto& s : schedule) powers.push_back(s.exponent);
          const DeconvolvedMoment m = deconvolve_moments(batch, mc, powers);
          w.row({g, m.value, m.stderr, exact, m.value - exact});
        }
      }
      return;
    }
  }
  throw InvalidInputError("unknown command");
}

/// Run and route output to the configured path (or the provided stream).
inline void run_to_output(const RunConfig& c, std::ostream& fallback) {
  if (c.output.path.empty()) {
    run_pipeline(c, fallback);
    return;
  }
  std::ofstream f(c.output.path, std::ios::binary);
  if (!f) throw InvalidInputError("cannot open output path '" + c.output.path + "'");
  run_pipeline(c, f);
}

}  // namespace weakcorr
