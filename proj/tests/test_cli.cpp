#define CATCH_CONFIG_MAIN
#include <catch2/catch.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#ifndef WEAKCORR_CLI_PATH
#error "WEAKCORR_CLI_PATH must be defined"
#endif

namespace {

struct CommandResult {
  int exit_code;
  std::string stdout_text;
  std::string stderr_text;
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

CommandResult run_cli(const std::string& args) {
  const std::string out_path = "/tmp/weakcorr_cli_test_stdout.txt";
  const std::string err_path = "/tmp/weakcorr_cli_test_stderr.txt";
  const std::string cmd =
      std::string(WEAKCORR_CLI_PATH) + " " + args + " >" + out_path + " 2>" + err_path;
  const int status = std::system(cmd.c_str());
  CommandResult res;
  res.exit_code = WEXITSTATUS(status);
  res.stdout_text = slurp(out_path);
  res.stderr_text = slurp(err_path);
  return res;
}

std::vector<std::string> body_lines(const std::string& csv) {
  std::vector<std::string> lines;
  std::istringstream ss(csv);
  std::string line;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    lines.push_back(line);
  }
  return lines;
}

std::vector<double> parse_row(const std::string& line) {
  std::vector<double> vals;
  std::istringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) vals.push_back(std::stod(field));
  return vals;
}

std::string strip_timestamp(const std::string& text) {
  std::istringstream ss(text);
  std::ostringstream out;
  std::string line;
  while (std::getline(ss, line)) {
    if (line.rfind("# timestamp=", 0) == 0) continue;
    out << line << "\n";
  }
  return out.str();
}

}  // namespace

TEST_CASE("empty schedule is a validation error with a clear message") {
  const CommandResult res = run_cli("correlator --model two-level");
  REQUIRE(res.exit_code == 2);
  REQUIRE(res.stderr_text.find("schedule must be non-empty") != std::string::npos);
}

TEST_CASE("unknown subcommand exits with the validation code") {
  const CommandResult res = run_cli("frobnicate");
  REQUIRE(res.exit_code == 2);
}

TEST_CASE("kT sweep emits the jump and mean-energy table") {
  const std::string out = "/tmp/weakcorr_cli_sweep.csv";
  const CommandResult res = run_cli("jump --model two-level --kT-sweep 0.5:2.5:5 --tau 0 --output " + out);
  REQUIRE(res.exit_code == 0);
  const std::string text = slurp(out);
  REQUIRE(text.find("kT,jump,mean_energy") != std::string::npos);
  const auto rows = body_lines(text);
  REQUIRE(rows.size() == 6);  // header + 5 points
  // spot-check kT = 1 (second point of 0.5:2.5:5): jump = -(1/2) tanh(1/2kT),
  // mean energy = 1/(exp(1/kT) + 1)
  const auto vals = parse_row(rows[2]);
  REQUIRE(vals[0] == Approx(1.0).margin(1e-12));
  REQUIRE(vals[1] == Approx(-0.5 * std::tanh(0.5)).margin(1e-10));
  REQUIRE(vals[2] == Approx(1.0 / (std::exp(1.0) + 1.0)).margin(1e-10));
}

TEST_CASE("identical config and seed give byte-identical outputs modulo timestamp") {
  const std::string out1 = "/tmp/weakcorr_cli_det1.csv";
  const std::string out2 = "/tmp/weakcorr_cli_det2.csv";
  const std::string args = "kraus-sim --model two-level --state thermal --kT 1 "
                           "--slot -1e-6:H --slot 0:X --slot 0.9:X --g 0.05 "
                           "--trajectories 20000 --seed 99 --output ";
  REQUIRE(run_cli(args + out1).exit_code == 0);
  REQUIRE(run_cli(args + out2).exit_code == 0);
  REQUIRE(strip_timestamp(slurp(out1)) == strip_timestamp(slurp(out2)));
  REQUIRE(slurp(out1).find("# seed=99") != std::string::npos);
}

TEST_CASE("lg command reports the double violation for the exact trap") {
  const CommandResult res =
      run_cli("lg --model planar --epsilon 0 --truncation 8 --t3 1.8707963267948966 "
              "--format json");
  REQUIRE(res.exit_code == 0);
  const auto j = nlohmann::json::parse(res.stdout_text);
  REQUIRE(j["results"]["violated1"].get<bool>());
  REQUIRE(j["results"]["violated2"].get<bool>());
  REQUIRE(std::abs(j["results"]["lhs1"].get<double>()) < 1e-10);
  REQUIRE(j["results"]["rhs"].get<double>() == Approx(1.0 / 16.0).margin(1e-10));
  REQUIRE(j["metadata"].contains("config_hash"));
  REQUIRE(j["metadata"].contains("artifact_version"));
}

TEST_CASE("freq command reports analytic and numeric coefficients") {
  const CommandResult res =
      run_cli("freq --alpha 2.0 --beta -0.5 --truncation 8 --format json");
  REQUIRE(res.exit_code == 0);
  const auto j = nlohmann::json::parse(res.stdout_text);
  REQUIRE(j["results"]["analytic_im"].get<double>() ==
          Approx(5.0 * 3.14159265358979323846 / 9.0).margin(1e-12));
  REQUIRE(std::abs(j["results"]["analytic_re"].get<double>()) < 1e-15);
  const auto& numeric = j["results"]["numeric"];
  REQUIRE(numeric.size() == 3);
  // the finest regularization is within a few eta of the analytic value
  const double im = numeric[2]["numeric_im"].get<double>();
  REQUIRE(im == Approx(5.0 * 3.14159265358979323846 / 9.0).epsilon(0.01));
}

TEST_CASE("config file drives a run and bad configs are rejected") {
  const std::string cfg_path = "/tmp/weakcorr_cli_cfg.json";
  {
    std::ofstream f(cfg_path);
    f << R"({"command": "correlator",
             "model": {"kind": "two-level"},
             "state": {"type": "thermal", "kT": 1.0},
             "schedule": [{"time": 0.0, "observable": "H", "exponent": 1}],
             "output": {"path": "", "format": "json"}})";
  }
  const CommandResult ok = run_cli("correlator --config " + cfg_path);
  REQUIRE(ok.exit_code == 0);
  const auto j = nlohmann::json::parse(ok.stdout_text);
  const double p_plus = std::exp(-1.0) / (1.0 + std::exp(-1.0));
  REQUIRE(j["results"]["weak_moment"].get<double>() == Approx(p_plus).margin(1e-10));

  {
    std::ofstream f(cfg_path);
    f << R"({"command": "correlator", "mystery_knob": 3})";
  }
  const CommandResult bad = run_cli("correlator --config " + cfg_path);
  REQUIRE(bad.exit_code == 2);
  REQUIRE(bad.stderr_text.find("unknown key") != std::string::npos);
}

TEST_CASE("tied non-commuting schedule is rejected through the CLI") {
  const CommandResult res = run_cli(
      "correlator --model two-level --slot 0.5:H --slot 0.5:X --state thermal --kT 1");
  REQUIRE(res.exit_code == 2);
  REQUIRE(res.stderr_text.find("order ambiguous") != std::string::npos);
}

TEST_CASE("print-schema emits the published config schema") {
  const CommandResult res = run_cli("--print-schema");
  REQUIRE(res.exit_code == 0);
  const auto schema = nlohmann::json::parse(res.stdout_text);
  REQUIRE(schema["$id"] == "weakcorr-config-v1");
}
