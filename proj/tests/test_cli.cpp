#include "catch_amalgamated.hpp"

#include "experiments.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;
using invmono::io::Json;

namespace {

std::string env(const char* name) {
  const char* v = std::getenv(name);
  if (!v) FAIL(std::string("environment variable ") + name + " is not set");
  return v;
}

fs::path configs() { return env("INVMONO_CONFIGS"); }

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("invmono_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(dir / name, std::ios::binary) << text;
    return dir / name;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Run {
  int code = -1;
  std::string err;
};

Run invoke(const std::string& args, const fs::path& stderr_file) {
  const std::string cmd = "'" + env("INVMONO_BIN") + "' " + args + " 2> '" + stderr_file.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(stderr_file);
  return r;
}

std::string quoted(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_CASE("sample configs pass", "[cli]") {
  const Scratch s("good");
  const std::pair<const char*, const char*> cases[] = {
      {"extend-monotone", "extend_monotone.json"}, {"extend-monotone", "extend_monotone_c4.json"},
      {"kirszbraun", "kirszbraun.json"},           {"coupling-approx", "coupling_approx.json"},
      {"evolve", "evolve.json"},                   {"evolve", "evolve_matrix.json"},
      {"invariance-audit", "invariance_audit.json"}, {"invariance-audit", "invariance_audit_relu.json"}};
  for (const auto& [suite, file] : cases) {
    const auto out = s.dir / file;
    const auto r = invoke(std::string(suite) + " --config " + quoted(configs() / file) + " --out " + quoted(out),
                          s.dir / "err.txt");
    INFO(file << ": " << r.err);
    CHECK(r.code == 0);
    const Json report = invmono::io::read_file(out / "report.json");
    CHECK(report.at("passed") == true);
    CHECK(report.at("suite") == suite);
    for (const auto& csv : report.at("csv")) CHECK(fs::exists(out / csv.get<std::string>()));
  }
}

TEST_CASE("forced resolvent values in the report", "[cli]") {
  const Scratch s("forced");
  REQUIRE(invoke("extend-monotone --config " + quoted(configs() / "extend_monotone.json") + " --out " +
                     quoted(s.dir / "o"),
                 s.dir / "err.txt")
              .code == 0);
  const Json report = invmono::io::read_file(s.dir / "o" / "report.json");
  const double expected[] = {0.0, 0.0, 1.0, 1.0};
  const auto& values = report.at("results").at("resolvent");
  REQUIRE(values.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(values[i].at("x")[0].get<double>() - expected[i]) <= 1e-6);
  const std::string csv = slurp(s.dir / "o" / "resolvent.csv");
  CHECK(csv.rfind("index,y0,x0,contact_gap\n", 0) == 0);
  CHECK(csv.find('\r') == std::string::npos);
}

TEST_CASE("coupling sweep CSV", "[cli]") {
  const Scratch s("coupling");
  REQUIRE(invoke("coupling-approx --config " + quoted(configs() / "coupling_approx.json") + " --out " +
                     quoted(s.dir / "o"),
                 s.dir / "err.txt")
              .code == 0);
  std::istringstream csv(slurp(s.dir / "o" / "discrepancy.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "K,discrepancy,runtime_ms");
  double prev = 1e300;
  int rows = 0;
  while (std::getline(csv, line)) {
    const auto a = line.find(','), b = line.rfind(',');
    const double d = std::stod(line.substr(a + 1, b - a - 1));
    CHECK(d <= prev + 1e-9);
    CHECK(b == line.size() - 1);  // runtime_ms stays blank without --timing
    prev = d;
    ++rows;
  }
  CHECK(rows == 4);

  REQUIRE(invoke("coupling-approx --timing --config " + quoted(configs() / "coupling_approx.json") + " --out " +
                     quoted(s.dir / "t"),
                 s.dir / "err.txt")
              .code == 0);
  const std::string timed = slurp(s.dir / "t" / "discrepancy.csv");
  CHECK(timed.find(",\n") == std::string::npos);
}

TEST_CASE("bad configs exit with status 2", "[cli]") {
  const Scratch s("bad");
  const auto empty = s.write("empty.json", "");
  const auto empty_obj = s.write("empty_obj.json", "{}");
  const auto broken = s.write("broken.json", "{\n  \"suite\": \"evolve\",\n  \"x0\": [1, 2,,]\n}\n");
  const auto wrong_suite = s.write("wrong.json", R"({"suite": "evolve", "x0": [1]})");
  const auto bad_manifest = s.write("manifest.json", R"({"suites": [{"suite": "nope", "config": "x.json"}]})");
  const auto out = quoted(s.dir / "o");

  CHECK(invoke("evolve --config " + quoted(empty) + " --out " + out, s.dir / "e").code == 2);
  CHECK(invoke("evolve --config " + quoted(empty_obj) + " --out " + out, s.dir / "e").code == 2);
  const auto r = invoke("evolve --config " + quoted(broken) + " --out " + out, s.dir / "e");
  CHECK(r.code == 2);
  CHECK(r.err.find("line 3, column 15") != std::string::npos);
  CHECK(invoke("kirszbraun --config " + quoted(wrong_suite) + " --out " + out, s.dir / "e").code == 2);
  CHECK(invoke("frobnicate --config " + quoted(empty_obj) + " --out " + out, s.dir / "e").code == 2);
  CHECK(invoke("evolve --out " + out, s.dir / "e").code == 2);
  CHECK(invoke("all --config " + quoted(bad_manifest) + " --out " + out, s.dir / "e").code == 2);
  CHECK(invoke("evolve --config " + quoted(s.dir / "missing.json") + " --out " + out, s.dir / "e").code == 2);
  CHECK_FALSE(fs::exists(s.dir / "o" / "report.json"));
}

TEST_CASE("tolerance violations exit with status 1", "[cli]") {
  const Scratch s("tight");
  const auto r = invoke("extend-monotone --tol 1e-30 --config " + quoted(configs() / "extend_monotone.json") +
                            " --out " + quoted(s.dir / "o"),
                        s.dir / "err.txt");
  CHECK(r.code == 1);
  CHECK(r.err.find("invariant violated: expected_resolvent_values") != std::string::npos);
  const Json report = invmono::io::read_file(s.dir / "o" / "report.json");
  CHECK(report.at("passed") == false);
  CHECK(report.at("tolerance") == 1e-30);
}

TEST_CASE("seed override is recorded", "[cli]") {
  const Scratch s("seed");
  REQUIRE(invoke("kirszbraun --seed 99 --config " + quoted(configs() / "kirszbraun.json") + " --out " +
                     quoted(s.dir / "o"),
                 s.dir / "e")
              .code == 0);
  CHECK(invmono::io::read_file(s.dir / "o" / "report.json").at("seed") == 99);
}

TEST_CASE("reports are byte-identical across runs", "[cli]") {
  const Scratch s("determinism");
  const auto manifest = quoted(configs() / "all.json");
  REQUIRE(invoke("all --config " + manifest + " --out " + quoted(s.dir / "a"), s.dir / "e").code == 0);
  REQUIRE(invoke("all --config " + manifest + " --out " + quoted(s.dir / "b"), s.dir / "e").code == 0);
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(s.dir / "a")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), s.dir / "a");
    INFO(rel.string());
    REQUIRE(fs::exists(s.dir / "b" / rel));
    CHECK(slurp(entry.path()) == slurp(s.dir / "b" / rel));
    ++files;
  }
  CHECK(files >= 17);
}

TEST_CASE("in-process driver", "[cli]") {
  const Scratch s("inproc");
  invmono::cli::Options opts;
  opts.config = configs() / "coupling_approx.json";
  opts.out = s.dir / "o";
  std::vector<std::string> messages;
  const invmono::cli::LogSink sink = [&](invmono::cli::LogLevel, const std::string& m) { messages.push_back(m); };
  CHECK(invmono::cli::run("no-such-suite", opts, sink) == invmono::cli::kBadConfig);
  REQUIRE(!messages.empty());
  CHECK(messages.back().find("unknown suite") != std::string::npos);
  CHECK_FALSE(fs::exists(opts.out));
  CHECK(invmono::cli::run("coupling-approx", opts, sink) == invmono::cli::kSuccess);
  CHECK(invmono::cli::suite_names().size() == 5);
}
