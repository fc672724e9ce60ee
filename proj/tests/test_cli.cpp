#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "lsnet/model.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run_cli(const std::string& args) {
  const std::string cmd = std::string(LSNET_BIN) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path workdir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "lsnet_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool contains(const std::string& hay, const std::string& needle) { return hay.find(needle) != std::string::npos; }

}  // namespace

TEST_CASE("describe") {
  const Run t = run_cli("describe --variant t --res 224");
  CHECK(t.code == 0);
  CHECK(contains(t.out, "target params 11.400M"));
  CHECK(contains(t.out, "PASS"));
  CHECK_FALSE(contains(t.out, "FAIL"));
  CHECK(contains(t.out, "FLOPs"));

  const fs::path dir = workdir("describe");
  std::ofstream(dir / "tiny.spec") << lsnet::ModelSpec::builtin("nano").to_text();
  const Run custom = run_cli("describe --res 64 --spec " + (dir / "tiny.spec").string());
  CHECK(custom.code == 0);
  CHECK(contains(custom.out, "lsnet-spec 1"));

  CHECK(run_cli("describe --variant xl").code == 2);
  CHECK(run_cli("describe --res 100").code == 2);
  CHECK(run_cli("describe --bogus").code == 2);
  CHECK(run_cli("frobnicate").code == 2);
  CHECK(run_cli("describe --spec " + (dir / "missing.spec").string()).code == 2);
}

TEST_CASE("train, eval and exit codes") {
  const fs::path dir = workdir("train");
  REQUIRE(run_cli("gen-data --data blobs10-test --out-dir " + (dir / "data").string()).code == 0);
  const std::string data = (dir / "data").string();
  const Run train = run_cli("train --variant micro --epochs 2 --batch 50 --seed 3 --data " + data + " --test-data " +
                          data + " --out-dir " + (dir / "run").string());
  REQUIRE(train.code == 0);

  const std::string csv = slurp(dir / "run" / "metrics.csv");
  CHECK(contains(csv, "# spec micro digest "));
  CHECK(contains(csv, "# seed 3 dtype f32"));
  CHECK(contains(csv, "# command "));
  CHECK(contains(csv, "epoch,split,loss,top1\n1,train,"));
  CHECK(contains(csv, "\n2,test,"));

  const auto summary = nlohmann::json::parse(slurp(dir / "run" / "summary.json"));
  CHECK(summary["epochs"] == 2);
  CHECK(summary["seed"] == 3);
  CHECK(summary["history"].size() == 2u);
  CHECK(summary["steps"] == 20);
  const double top1 = summary["final_test"]["top1"];

  const std::string weights = (dir / "run" / "weights.lsw").string();
  const Run eval = run_cli("eval --variant micro --weights " + weights + " --data " + data);
  CHECK(eval.code == 0);
  std::ostringstream expect;
  expect << "top1 " << top1;
  CHECK(contains(eval.out, expect.str()));

  SUBCASE("deterministic reruns") {
    REQUIRE(run_cli("train --variant micro --epochs 2 --batch 50 --seed 3 --data " + data + " --test-data " + data +
                  " --out-dir " + (dir / "again").string())
                .code == 0);
    CHECK(slurp(dir / "again" / "weights.lsw") == slurp(weights));
  }
  SUBCASE("failure modes") {
    CHECK(run_cli("eval --variant nano --weights " + weights).code == 3);
    CHECK(run_cli("eval --weights " + (dir / "none.lsw").string()).code == 3);
    CHECK(run_cli("eval").code == 2);
    fs::resize_file(dir / "data" / "images.idx", 100);
    CHECK(run_cli("eval --weights " + weights + " --data " + data).code == 3);
    CHECK(run_cli("train --epochs 1 --lr 1e30 --out-dir " + (dir / "boom").string()).code == 4);
  }
}

TEST_CASE("gradcheck") {
  const Run ok = run_cli("gradcheck --variant nano");
  CHECK(ok.code == 0);
  CHECK(contains(ok.out, "PASS"));
  const Run fault = run_cli("gradcheck --variant nano --fault se");
  CHECK(fault.code == 1);
  CHECK(contains(fault.out, "culprit op kind: se"));
}

TEST_CASE("bench") {
  const fs::path dir = workdir("bench");
  for (int repeats : {1, 9}) {
    const Run r = run_cli("bench --op ska --size 1,16,16,16 --repeats " + std::to_string(repeats) + " --out-dir " +
                        dir.string());
    REQUIRE(r.code == 0);
    std::istringstream rows(slurp(dir / "bench.csv"));
    std::string line;
    std::getline(rows, line);
    while (line.starts_with("#")) std::getline(rows, line);
    CHECK(line == "name,shape,repeats,median_s,min_s,max_s,macs,macs_per_s");
    int n = 0;
    while (std::getline(rows, line)) {
      CHECK(std::count(line.begin(), line.end(), ',') == 7);
      CHECK(contains(line, "," + std::to_string(repeats) + ","));
      ++n;
    }
    CHECK(n == 2);
  }
  CHECK(run_cli("bench --size 1,2,3").code == 2);
}

TEST_CASE("heat map commands") {
  const fs::path dir = workdir("maps");
  const Run agg = run_cli("agg-weights --stage 2 --layer 1 --out-dir " + dir.string());
  REQUIRE(agg.code == 0);
  const Run erf = run_cli("erf --stage 2 --dtype f64 --out-dir " + dir.string());
  REQUIRE(erf.code == 0);
  std::size_t pgm = 0, csv = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".pgm") {
      ++pgm;
      const std::string bytes = slurp(e.path());
      CHECK(bytes.starts_with("P5\n"));
      CHECK(contains(bytes, "\n32 32\n255\n"));
      CHECK(contains(bytes, "# spec micro digest "));
    }
    if (e.path().extension() == ".csv") ++csv;
  }
  CHECK(pgm >= 2u);
  CHECK(csv >= 2u);
  CHECK(run_cli("agg-weights --stage 2 --layer 5 --out-dir " + dir.string()).code == 2);
  CHECK(run_cli("erf --row 99 --out-dir " + dir.string()).code == 2);
}
