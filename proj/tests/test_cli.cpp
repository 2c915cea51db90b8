#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "convar/cli.hpp"
#include "convar/io.hpp"
#include "support.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

using namespace convar;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "convar");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  const int code = run_cli(int(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  return {code, out.str(), err.str()};
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

std::size_t lines(const fs::path& p) {
  const std::string s = read_file(p);
  return std::size_t(std::count(s.begin(), s.end(), '\n'));
}

// Simulated data set shared by the test cases, built once.
const fs::path& pipeline_root() {
  static const fs::path root = [] {
    const fs::path r = testing::fresh_dir("cli");
    write(r / "sim.cfg", "steps=40\nn_sites=8\nmissing_rate=0.05\n");
    write(r / "fit.cfg", "# short chain\nn_burnin=60\nn_samples=120\n");
    const auto s = cli({"--seed", "4", "--out", (r / "sim").string(), "--config", (r / "sim.cfg").string(), "simulate"});
    REQUIRE(s.code == 0);
    const auto f = cli({"--seed", "5", "--out", (r / "fit").string(), "--config", (r / "fit.cfg").string(), "fit",
                        "--data", (r / "sim").string(), "--train-end", "32", "--chains", "2", "--keep", "50"});
    REQUIRE(f.code == 0);
    return r;
  }();
  return root;
}

}  // namespace

TEST_CASE("simulate, fit, predict and score round trip") {
  const fs::path r = pipeline_root();
  for (const char* f : {"stations.csv", "observations.csv", "covariates.csv", "wind.csv", "truth.csv", "manifest.json"}) {
    CHECK(fs::exists(r / "sim" / f));
  }
  for (const char* f : {"draws.csv", "acceptance.csv", "latent.csv", "summary.csv", "manifest.json"}) {
    CHECK(fs::exists(r / "fit" / f));
  }
  CHECK(lines(r / "fit" / "draws.csv") == 241);
  CHECK(read_file(r / "fit" / "draws.csv").rfind("draw,chain,lambda,beta.intercept,beta.X,", 0) == 0);

  write(r / "region.csv", "x,y\n20,20\n150,20\n150,150\n20,150\n");
  std::string req = "time,target,origin\n";
  for (int t = 33; t <= 36; ++t) req += std::to_string(t) + ",S01,32\n" + std::to_string(t) + ",region.csv,32\n";
  req += "38,S02,35\n38,60:70,35\n";
  write(r / "request.csv", req);
  write(r / "pred.cfg", "refresh_sweeps=5\ndraws=40\n");
  const auto p = cli({"--seed", "6", "--out", (r / "pred").string(), "--config", (r / "pred.cfg").string(), "predict",
                      "--fit", (r / "fit").string(), "--data", (r / "sim").string(), "--request",
                      (r / "request.csv").string()});
  REQUIRE(p.code == 0);
  CHECK(lines(r / "pred" / "samples.csv") == 11);
  CHECK(lines(r / "pred" / "quantiles.csv") == 11);
  CHECK(fs::exists(r / "pred" / "areal_weights.csv"));
  const auto table = read_csv(r / "pred" / "samples.csv");
  CHECK(table.header.size() == 5 + 40);

  const auto s = cli({"--out", (r / "score").string(), "score", "--predictions", (r / "pred").string(),
                      "--observations", (r / "sim" / "observations.csv").string(), "--stations",
                      (r / "sim" / "stations.csv").string()});
  REQUIRE(s.code == 0);
  const auto scores = read_csv(r / "score" / "scores.csv");
  CHECK(scores.header == std::vector<std::string>{"lead", "class", "metric", "value", "n"});
  CHECK(scores.rows.size() >= 8);
}

TEST_CASE("no-ar fits keep phi at zero") {
  const fs::path r = pipeline_root();
  const auto f = cli({"--seed", "5", "--out", (r / "fit_noar").string(), "--config", (r / "fit.cfg").string(), "fit",
                      "--data", (r / "sim").string(), "--model", "no-ar"});
  REQUIRE(f.code == 0);
  const auto draws = read_csv(r / "fit_noar" / "draws.csv");
  const auto col = draws.column("phi");
  for (const auto& row : draws.rows) CHECK(row[col] == "0");
}

TEST_CASE("malformed input exits with code 2 naming the column") {
  const fs::path r = pipeline_root();
  const fs::path bad = testing::fresh_dir("cli_bad");
  fs::copy(r / "sim", bad, fs::copy_options::recursive);
  write(bad / "observations.csv", "time,site,rain\n1,S01,0\n");
  const auto f = cli({"--out", (bad / "fit").string(), "fit", "--data", bad.string()});
  CHECK(f.code == 2);
  CHECK(f.err.find("site") != std::string::npos);
}

TEST_CASE("configuration and flag errors exit with code 2") {
  const fs::path r = pipeline_root();
  write(r / "bad.cfg", "n_samples=10\nnum_chains=3\n");
  auto f = cli({"--out", (r / "x").string(), "--config", (r / "bad.cfg").string(), "fit", "--data",
                (r / "sim").string()});
  CHECK(f.code == 2);
  CHECK(f.err.find("num_chains") != std::string::npos);
  CHECK(cli({"fit", "--data", (r / "sim").string(), "--model", "arima"}).code == 2);
  CHECK(cli({"predict", "--fit", (r / "fit").string()}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
}

TEST_CASE("score refuses mismatched inputs unless forced") {
  const fs::path r = pipeline_root();
  REQUIRE(fs::exists(r / "pred" / "samples.csv"));
  const fs::path alt = testing::fresh_dir("cli_alt");
  std::string obs = read_file(r / "sim" / "observations.csv");
  write(alt / "observations.csv", obs + "\n");
  std::vector<std::string> args{"--out", (alt / "score").string(), "score", "--predictions", (r / "pred").string(),
                                "--observations", (alt / "observations.csv").string(), "--stations",
                                (r / "sim" / "stations.csv").string()};
  CHECK(cli(args).code == 3);
  args.push_back("--force");
  CHECK(cli(args).code == 0);
}

TEST_CASE("tessellate writes cells and neighbours") {
  const fs::path r = testing::fresh_dir("cli_tess");
  write(r / "stations.csv", "id,x,y\nA,0,0\nB,1,0\nC,2,0\nD,0,1\nE,1,1\nF,2,1\nG,0,2\nH,1,2\nI,2,2\n");
  const auto t = cli({"--out", r.string(), "tessellate", "--stations", (r / "stations.csv").string()});
  REQUIRE(t.code == 0);
  const auto table = read_csv(r / "tessellation.csv");
  REQUIRE(table.rows.size() == 9);
  for (const auto& row : table.rows) CHECK(parse_double(row[3], "area") == doctest::Approx(1.0));
  CHECK(table.rows[4][4] == "1");
  CHECK(table.rows[4][6] == "B;D;F;H");
  write(r / "dup.csv", "id,x,y\nA,0,0\nB,0,0\nC,1,1\n");
  CHECK(cli({"--out", r.string(), "tessellate", "--stations", (r / "dup.csv").string()}).code == 2);
}
