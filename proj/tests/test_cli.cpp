#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = ltseg::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> v;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) v.push_back(l);
  return v;
}

const fs::path& dataset() {
  static const fs::path dir = [] {
    const fs::path d = fs::path(LTSEG_TEST_TMP) / "cli_ds";
    fs::remove_all(d);
    const Result r = run({"gen", "--out", d.string(), "--n", "20", "--height", "12", "--width", "12",
                          "--freqs", "0.8,0.15,0.05", "--seed", "3"});
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("usage errors exit 1, help exits 0") {
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"curve", "--no-such-flag"}).code == 1);
  CHECK(run({"train", "--variant", "sideways"}).code == 1);
  const Result help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("gradcheck") != std::string::npos);
  CHECK(run({"bench", "--help"}).code == 0);
}

TEST_CASE("runtime errors exit 2 with a message") {
  const Result r = run({"eval", "--checkpoint", "/nonexistent/ckpt", "--dataset", "/nonexistent/ds"});
  CHECK(r.code == 2);
  CHECK(r.err.find("error:") != std::string::npos);
  CHECK(run({"curve", "--p-grid", "0.5,1.0"}).code == 2);
  CHECK(run({"curve", "--methods", "dice:2"}).code == 2);
  CHECK(run({"bench", "--shape", "2,19,64"}).code == 2);
}

TEST_CASE("curve reproduces the default grid") {
  const Result r = run({"curve"});
  REQUIRE(r.code == 0);
  const auto l = lines(r.out);
  REQUIRE(l.size() == 33);
  CHECK(l[0] == "method,param,p,weight,loss");
  CHECK(l[1].rfind("focal,2,0.2,", 0) == 0);
  CHECK(l[32].rfind("pat,5,0.9,", 0) == 0);
  CHECK(r.err.find("# seed") != std::string::npos);
  const Result lit = run({"curve", "--methods", "pat-literal:20", "--p-grid", "0.5"});
  CHECK(lines(lit.out).size() == 2);
  CHECK(lines(lit.out)[1].rfind("pat-literal,20,0.5,", 0) == 0);
}

TEST_CASE("gen, train and eval") {
  const fs::path out = fs::path(LTSEG_TEST_TMP) / "cli_run";
  fs::remove_all(out);
  const Result t = run({"train", "--dataset", dataset().string(), "--out", out.string(), "--loss", "pat",
                        "--temperature", "5", "--steps", "6", "--batch", "2", "--hidden", "4",
                        "--eval-every", "3", "--seed", "1"});
  REQUIRE(t.code == 0);
  CHECK(t.err.find("\"temperature\":5.0") != std::string::npos);
  CHECK(t.err.find("# seed 1") != std::string::npos);
  CHECK(lines(t.out)[0] == "method,seed,miou,pix_acc,dice_err,iou_0,iou_1,iou_2");
  CHECK(fs::exists(out / "log.csv"));

  const Result e = run({"eval", "--checkpoint", (out / "checkpoint").string(), "--dataset",
                        dataset().string(), "--method", "pat", "--seed", "1"});
  REQUIRE(e.code == 0);
  // the in-process report and a later evaluation of the checkpoint agree
  CHECK(lines(e.out)[1] == lines(t.out)[1]);

  // config file with a flag override
  std::ofstream(out / "cfg.json") << R"({"loss": {"kind": "focal", "gamma": 1.5}, "steps": 2, "hidden": [3],
    "batch_size": 2, "dataset": ")" << dataset().string() << R"(", "out": ")" << (out / "b").string() << "\"}";
  const Result c = run({"train", "--config", (out / "cfg.json").string(), "--gamma", "3"});
  REQUIRE(c.code == 0);
  CHECK(c.err.find("\"gamma\":3.0") != std::string::npos);
  CHECK(c.err.find("\"kind\":\"focal\"") != std::string::npos);

  CHECK(run({"train", "--dataset", dataset().string()}).code == 2);
  CHECK(run({"train", "--config", (out / "missing.json").string()}).code == 2);
}

TEST_CASE("bench and gradcheck") {
  const Result b = run({"bench", "--shape", "1,3,8,8", "--reps", "10", "--warmup", "1"});
  REQUIRE(b.code == 0);
  CHECK(lines(b.out).size() == 9);
  CHECK(run({"bench", "--shape", "1,3,8,8", "--reps", "3"}).code == 2);

  const Result g = run({"gradcheck", "--kinds", "ce,pat", "--trials", "5"});
  CHECK(g.code == 0);
  CHECK(lines(g.out).size() == 6);
  const Result f = run({"gradcheck", "--kinds", "focal", "--trials", "3", "--inject-fault"});
  CHECK(f.code != 0);
  CHECK(f.out.find("FAIL") != std::string::npos);
}
