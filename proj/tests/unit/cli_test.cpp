#include <doctest.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "cli.h"
#include "ecgdk/ingest.h"
#include "support/scratch.h"

using ecgdk::cli::dispatch;
namespace fs = std::filesystem;

namespace {

// Captures stdout while a command runs.
struct Captured {
  int code;
  std::string out;
};

Captured run(const std::vector<std::string>& args) {
  std::ostringstream buf;
  auto* old = std::cout.rdbuf(buf.rdbuf());
  const int code = dispatch(args);
  std::cout.rdbuf(old);
  return {code, buf.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("help lists every subcommand") {
  auto r = run({"--help"});
  CHECK(r.code == 0);
  for (const char* sub : {"gen", "preprocess", "features", "train", "eval", "noise-sweep", "dist-export", "model-summary"})
    CHECK_MESSAGE(r.out.find(sub) != std::string::npos, sub);
  CHECK(run({"--version"}).code == 0);
}

TEST_CASE("usage errors exit 1") {
  CHECK(run({"--bogus"}).code == 1);
  CHECK(run({"gen", "--nope", "1"}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
}

TEST_CASE("data errors exit 2") {
  auto dir = ecgdk::testing::scratch_dir("cli_err");
  CHECK(run({"eval", "--ckpt", (dir / "missing.ckpt").string(), "--data", (dir / "x.jsonl").string(), "--report",
             (dir / "r.json").string()})
            .code == 2);
  std::ofstream(dir / "bad.csv") << "# fs=100 label=Normal domain=d record=r\nxyz\n";
  CHECK(run({"preprocess", "--in", (dir / "bad.csv").string(), "--out", (dir / "s.jsonl").string()}).code == 2);
}

TEST_CASE("gen writes a record and a manifest") {
  auto dir = ecgdk::testing::scratch_dir("cli_gen");
  const auto out = dir / "af.csv";
  REQUIRE(run({"gen", "--class", "AF", "--duration", "20", "--fs", "200", "--seed", "7", "--out", out.string()}).code == 0);
  auto recs = ecgdk::load_records(out);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].samples.size() == 4000);
  CHECK(recs[0].label == ecgdk::ClassLabel::AF);
  auto m = nlohmann::json::parse(slurp(dir / "af.csv.manifest.json"));
  CHECK(m["subcommand"] == "gen");
  CHECK(m["seed"] == 7);
  CHECK(m.contains("started_at"));
  CHECK(m["config"]["gen"]["class"] == "AF");
}

TEST_CASE("command line overrides the config file") {
  auto dir = ecgdk::testing::scratch_dir("cli_cfg");
  std::ofstream(dir / "cfg.json") << R"({"gen": {"class": "PVC", "duration": 12, "fs": 100, "seed": 3}})";
  const auto a = dir / "a.csv", b = dir / "b.csv";
  REQUIRE(run({"--config", (dir / "cfg.json").string(), "gen", "--out", a.string()}).code == 0);
  REQUIRE(run({"--config", (dir / "cfg.json").string(), "gen", "--fs", "50", "--out", b.string()}).code == 0);
  auto ra = ecgdk::load_records(a), rb = ecgdk::load_records(b);
  CHECK(ra[0].label == ecgdk::ClassLabel::PVC);
  CHECK(ra[0].samples.size() == 1200);
  CHECK(rb[0].samples.size() == 600);
}

TEST_CASE("re-run from a manifest reproduces the output") {
  auto dir = ecgdk::testing::scratch_dir("cli_rerun");
  const auto a = dir / "a.jsonl";
  REQUIRE(run({"gen", "--class", "Normal", "--duration", "15", "--seed", "11", "--snr", "20", "--out", a.string()}).code == 0);
  const auto b = dir / "b.jsonl";
  REQUIRE(run({"--config", (dir / "a.jsonl.manifest.json").string(), "gen", "--out", b.string()}).code == 0);
  CHECK(slurp(a) == slurp(b));
}

TEST_CASE("model summary") {
  auto r = run({"model-summary"});
  CHECK(r.code == 0);
  CHECK(r.out.find("174115") != std::string::npos);
  CHECK(run({"model-summary", "--ablation"}).out.find("122947") != std::string::npos);
  auto dir = ecgdk::testing::scratch_dir("cli_summary");
  std::ofstream(dir / "m.json") << R"({"heads": 3})";
  CHECK(run({"model-summary", "--model-config", (dir / "m.json").string()}).code == 2);
}

TEST_CASE("sha256 of a file") {
  auto dir = ecgdk::testing::scratch_dir("cli_sha");
  std::ofstream(dir / "abc.txt", std::ios::binary) << "abc";
  CHECK(ecgdk::cli::sha256_file((dir / "abc.txt").string()) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
