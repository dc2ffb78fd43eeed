#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "weakcorr/core.hpp"
#include "weakcorr/models.hpp"

namespace weakcorr {

using json = nlohmann::ordered_json;

inline constexpr const char* config_schema_version = "1";

enum class Command { Jump, Correlator, Freq, Lg, KrausSim, ClockSim, Sweep };
enum class OutputFormat { Csv, Json };

struct StateConfig {
  std::string type = "ground";  // ground | thermal
  double kT = 1.0;
};

struct ScheduleEntryConfig {
  double time = 0.0;
  std::string observable = "X";
  int exponent = 1;
};

struct TimesConfig {
  double t1 = 0.0;
  double t2 = 0.3;
  double t1p = 0.8;
  double t3 = 1.8707963267948966;
  double tau = 0.0;
};

struct MeasurementCfgConfig {
  double g = 0.02;
  long long trajectories = 100000;
  std::uint64_t seed = 1;
  bool deconvolve = true;
};

struct FreqConfig {
  double alpha = 2.0;
  double beta = -0.5;
  std::vector<double> eta = {1e-2, 3e-3, 1e-3};
};

struct SweepConfig {
  std::string parameter = "kT";  // kT | g | epsilon | tau
  double start = 0.1;
  double stop = 5.0;
  int points = 50;
};

struct OutputConfig {
  std::string path;  // empty: stdout
  OutputFormat format = OutputFormat::Csv;
};

struct RunConfig {
  Command command = Command::Jump;
  ModelSpec model;
  StateConfig state;
  std::vector<ScheduleEntryConfig> schedule;
  TimesConfig times;
  std::optional<MeasurementCfgConfig> measurement;
  FreqConfig freq;
  std::optional<SweepConfig> sweep;
  OutputConfig output;
  double lg_epsilon = 0.0;  // detuning for the lg command
};

inline std::string to_string(Command c) {
  switch (c) {
    case Command::Jump: return "jump";
    case Command::Correlator: return "correlator";
    case Command::Freq: return "freq";
    case Command::Lg: return "lg";
    case Command::KrausSim: return "kraus-sim";
    case Command::ClockSim: return "clock-sim";
    case Command::Sweep: return "sweep";
  }
  return "?";
}

inline Command command_from_string(const std::string& s) {
  if (s == "jump") return Command::Jump;
  if (s == "correlator") return Command::Correlator;
  if (s == "freq") return Command::Freq;
  if (s == "lg") return Command::Lg;
  if (s == "kraus-sim") return Command::KrausSim;
  if (s == "clock-sim") return Command::ClockSim;
  if (s == "sweep") return Command::Sweep;
  throw InvalidInputError("unknown command '" + s + "'");
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "two-level") return ModelKind::TwoLevel;
  if (s == "oscillator") return ModelKind::Oscillator1D;
  if (s == "planar") return ModelKind::PlanarTrap;
  if (s == "detuned-planar") return ModelKind::DetunedPlanarTrap;
  throw InvalidInputError("unknown model kind '" + s + "'");
}

namespace detail {

inline void require_keys(const json& j, const std::vector<std::string>& allowed,
                         const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const auto& a : allowed) {
      if (key == a) ok = true;
    }
    if (!ok) throw InvalidInputError("config: unknown key '" + key + "' in " + where);
  }
}

}  // namespace detail

inline json to_json(const RunConfig& c) {
  json j;
  j["schema_version"] = config_schema_version;
  j["command"] = to_string(c.command);
  j["model"] = {{"kind", to_string(c.model.kind)},
                {"omega", c.model.omega},
                {"truncation", c.model.truncation},
                {"detuning_epsilon", c.model.detuning_epsilon}};
  j["state"] = {{"type", c.state.type}, {"kT", c.state.kT}};
  j["schedule"] = json::array();
  for (const auto& s : c.schedule) {
    j["schedule"].push_back(
        {{"time", s.time}, {"observable", s.observable}, {"exponent", s.exponent}});
  }
  j["times"] = {{"t1", c.times.t1},
                {"t2", c.times.t2},
                {"t1p", c.times.t1p},
                {"t3", c.times.t3},
                {"tau", c.times.tau}};
  if (c.measurement) {
    j["measurement"] = {{"g", c.measurement->g},
                        {"trajectories", c.measurement->trajectories},
                        {"seed", c.measurement->seed},
                        {"deconvolve", c.measurement->deconvolve}};
  }
  j["freq"] = {{"alpha", c.freq.alpha}, {"beta", c.freq.beta}, {"eta", c.freq.eta}};
  if (c.sweep) {
    j["sweep"] = {{"parameter", c.sweep->parameter},
                  {"start", c.sweep->start},
                  {"stop", c.sweep->stop},
                  {"points", c.sweep->points}};
  }
  j["output"] = {{"path", c.output.path},
                 {"format", c.output.format == OutputFormat::Csv ? "csv" : "json"}};
  j["lg_epsilon"] = c.lg_epsilon;
  return j;
}

inline RunConfig run_config_from_json(const json& j) {
  detail::require_keys(j,
                       {"schema_version", "command", "model", "state", "schedule", "times",
                        "measurement", "freq", "sweep", "output", "lg_epsilon"},
                       "top level");
  RunConfig c;
  if (j.contains("schema_version") &&
      j["schema_version"].get<std::string>() != config_schema_version) {
    throw InvalidInputError("config: unsupported schema_version");
  }
  if (!j.contains("command")) throw InvalidInputError("config: missing 'command'");
  c.command = command_from_string(j["command"].get<std::string>());
  if (j.contains("model")) {
    const auto& m = j["model"];
    detail::require_keys(m, {"kind", "omega", "truncation", "detuning_epsilon"}, "model");
    if (m.contains("kind")) c.model.kind = model_kind_from_string(m["kind"].get<std::string>());
    if (m.contains("omega")) c.model.omega = m["omega"].get<double>();
    if (m.contains("truncation")) c.model.truncation = m["truncation"].get<int>();
    if (m.contains("detuning_epsilon")) {
      c.model.detuning_epsilon = m["detuning_epsilon"].get<double>();
    }
  }
  if (j.contains("state")) {
    const auto& s = j["state"];
    detail::require_keys(s, {"type", "kT"}, "state");
    if (s.contains("type")) c.state.type = s["type"].get<std::string>();
    if (c.state.type != "ground" && c.state.type != "thermal") {
      throw InvalidInputError("config: state.type must be 'ground' or 'thermal'");
    }
    if (s.contains("kT")) c.state.kT = s["kT"].get<double>();
  }
  if (j.contains("schedule")) {
    for (const auto& e : j["schedule"]) {
      detail::require_keys(e, {"time", "observable", "exponent"}, "schedule entry");
      ScheduleEntryConfig se;
      if (e.contains("time")) se.time = e["time"].get<double>();
      if (e.contains("observable")) se.observable = e["observable"].get<std::string>();
      if (e.contains("exponent")) se.exponent = e["exponent"].get<int>();
      c.schedule.push_back(se);
    }
  }
  if (j.contains("times")) {
    const auto& t = j["times"];
    detail::require_keys(t, {"t1", "t2", "t1p", "t3", "tau"}, "times");
    if (t.contains("t1")) c.times.t1 = t["t1"].get<double>();
    if (t.contains("t2")) c.times.t2 = t["t2"].get<double>();
    if (t.contains("t1p")) c.times.t1p = t["t1p"].get<double>();
    if (t.contains("t3")) c.times.t3 = t["t3"].get<double>();
    if (t.contains("tau")) c.times.tau = t["tau"].get<double>();
  }
  if (j.contains("measurement")) {
    const auto& m = j["measurement"];
    detail::require_keys(m, {"g", "trajectories", "seed", "deconvolve"}, "measurement");
    MeasurementCfgConfig mc;
    if (m.contains("g")) mc.g = m["g"].get<double>();
    if (m.contains("trajectories")) mc.trajectories = m["trajectories"].get<long long>();
    if (m.contains("seed")) mc.seed = m["seed"].get<std::uint64_t>();
    if (m.contains("deconvolve")) mc.deconvolve = m["deconvolve"].get<bool>();
    c.measurement = mc;
  }
  if (j.contains("freq")) {
    const auto& f = j["freq"];
    detail::require_keys(f, {"alpha", "beta", "eta"}, "freq");
    if (f.contains("alpha")) c.freq.alpha = f["alpha"].get<double>();
    if (f.contains("beta")) c.freq.beta = f["beta"].get<double>();
    if (f.contains("eta")) c.freq.eta = f["eta"].get<std::vector<double>>();
  }
  if (j.contains("sweep")) {
    const auto& s = j["sweep"];
    detail::require_keys(s, {"parameter", "start", "stop", "points"}, "sweep");
    SweepConfig sc;
    if (s.contains("parameter")) sc.parameter = s["parameter"].get<std::string>();
    if (sc.parameter != "kT" && sc.parameter != "g" && sc.parameter != "epsilon" &&
        sc.parameter != "tau") {
      throw InvalidInputError("config: sweep.parameter must be kT, g, epsilon or tau");
    }
    if (s.contains("start")) sc.start = s["start"].get<double>();
    if (s.contains("stop")) sc.stop = s["stop"].get<double>();
    if (s.contains("points")) sc.points = s["points"].get<int>();
    if (sc.points < 1) throw InvalidInputError("config: sweep.points must be >= 1");
    c.sweep = sc;
  }
  if (j.contains("output")) {
    const auto& o = j["output"];
    detail::require_keys(o, {"path", "format"}, "output");
    if (o.contains("path")) c.output.path = o["path"].get<std::string>();
    if (o.contains("format")) {
      const std::string f = o["format"].get<std::string>();
      if (f == "csv") {
        c.output.format = OutputFormat::Csv;
      } else if (f == "json") {
        c.output.format = OutputFormat::Json;
      } else {
        throw InvalidInputError("config: output.format must be 'csv' or 'json'");
      }
    }
  }
  if (j.contains("lg_epsilon")) c.lg_epsilon = j["lg_epsilon"].get<double>();
  return c;
}

/// FNV-1a 64-bit over the canonical config dump, excluding the output routing
/// so that the hash identifies the scientific content of a run.
inline std::string config_hash(const RunConfig& c) {
  json j = to_json(c);
  j.erase("output");
  const std::string dump = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

/// JSON-schema document for RunConfig (published interface, version 1).
inline const char* config_schema_document() {
  return R"SCHEMA({
  "$schema": "http://json-schema.org/draft-07/schema#",
  "$id": "weakcorr-config-v1",
  "title": "weakcorr run configuration",
  "type": "object",
  "required": ["command"],
  "additionalProperties": false,
  "properties": {
    "schema_version": {"type": "string", "const": "1"},
    "command": {"enum": ["jump", "correlator", "freq", "lg", "kraus-sim", "clock-sim", "sweep"]},
    "model": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "kind": {"enum": ["two-level", "oscillator", "planar", "detuned-planar"]},
        "omega": {"type": "number", "exclusiveMinimum": 0},
        "truncation": {"type": "integer", "minimum": 8},
        "detuning_epsilon": {"type": "number", "exclusiveMinimum": -0.5, "exclusiveMaximum": 0.5}
      }
    },
    "state": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "type": {"enum": ["ground", "thermal"]},
        "kT": {"type": "number", "minimum": 0}
      }
    },
    "schedule": {
      "type": "array",
      "items": {
        "type": "object",
        "additionalProperties": false,
        "properties": {
          "time": {"type": "number"},
          "observable": {"type": "string"},
          "exponent": {"type": "integer", "minimum": 1}
        }
      }
    },
    "times": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "t1": {"type": "number"}, "t2": {"type": "number"},
        "t1p": {"type": "number"}, "t3": {"type": "number"}, "tau": {"type": "number"}
      }
    },
    "measurement": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "g": {"type": "number", "exclusiveMinimum": 0},
        "trajectories": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "deconvolve": {"type": "boolean"}
      }
    },
    "freq": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "alpha": {"type": "number"}, "beta": {"type": "number"},
        "eta": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}}
      }
    },
    "sweep": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "parameter": {"enum": ["kT", "g", "epsilon", "tau"]},
        "start": {"type": "number"}, "stop": {"type": "number"},
        "points": {"type": "integer", "minimum": 1}
      }
    },
    "output": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "path": {"type": "string"},
        "format": {"enum": ["csv", "json"]}
      }
    },
    "lg_epsilon": {"type": "number"}
  }
})SCHEMA";
}

}  // namespace weakcorr
