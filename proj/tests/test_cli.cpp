#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "madp/world.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  std::string cmd = std::string(MADP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

int run_env(const std::string& env, const std::string& args) {
  std::string cmd = env + " " + std::string(MADP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int count_lines(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  int n = 0;
  std::string line;
  while (std::getline(f, line)) ++n;
  return n;
}

struct Scratch {
  std::string dir = "cli_scratch";
  Scratch() {
    fs::remove_all(dir);
    fs::create_directory(dir);
    madp::save_world_config(madp::WorldConfig::desk(), dir + "/desk.json");
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return dir + "/" + name; }
};

}  // namespace

TEST_CASE("command line basics") {
  REQUIRE(run("--help") == 0);
  REQUIRE(run("generate --help") == 0);
  REQUIRE(run("") == 1);                   // a subcommand is required
  REQUIRE(run("--no-such-flag") == 1);
  REQUIRE(run("frobnicate") == 1);
}

TEST_CASE("generate command") {
  Scratch s;

  SECTION("writes a dataset with the documented split") {
    REQUIRE(run("generate --config " + (s / "desk.json") + " --out " + (s / "ds") +
                " --examples 6 --seed 1") == 0);
    REQUIRE(fs::exists(s / "ds.json"));
    REQUIRE(fs::exists(s / "ds.u0.bin"));
    nlohmann::json manifest = nlohmann::json::parse(std::ifstream(s / "ds.json"));
    REQUIRE(manifest["splits"]["train"].size() == 4);
    REQUIRE(manifest["splits"]["val"].size() == 1);
    REQUIRE(manifest["splits"]["test"].size() == 1);
  }

  SECTION("identical flags give identical bytes") {
    std::string base = "generate --config " + (s / "desk.json") + " --examples 5 --seed 9";
    REQUIRE(run(base + " --out " + (s / "a")) == 0);
    REQUIRE(run(base + " --out " + (s / "b")) == 0);
    REQUIRE(slurp(s / "a.u0.bin") == slurp(s / "b.u0.bin"));
    REQUIRE(slurp(s / "a.obs.bin") == slurp(s / "b.obs.bin"));
  }

  SECTION("a missing config leaves no partial output") {
    REQUIRE(run("generate --config " + (s / "nope.json") + " --out " + (s / "never") +
                " --examples 5") != 0);
    REQUIRE_FALSE(fs::exists(s / "never.json"));
    REQUIRE_FALSE(fs::exists(s / "never.u0.bin"));
  }

  SECTION("missing required flags are a usage error") {
    REQUIRE(run("generate --out " + (s / "x")) == 1);
  }
}

TEST_CASE("train command") {
  Scratch s;
  REQUIRE(run("generate --config " + (s / "desk.json") + " --out " + (s / "ds") +
              " --examples 6 --seed 1") == 0);
  {
    std::ofstream f(s / "model.json");
    f << R"({"layers": 2, "heads": 2, "head_dim": 16, "token_dim": 34})";
  }
  {
    std::ofstream f(s / "trainer.json");
    f << R"({"lr": 1e-4, "batch_size": 2, "max_epochs": 1, "patience": 1, "seed": 3})";
  }

  SECTION("fits, checkpoints, and resumes with continued epoch numbers") {
    REQUIRE(run("train --dataset " + (s / "ds") + " --model-config " + (s / "model.json") +
                " --train-config " + (s / "trainer.json") + " --out " + (s / "ck")) == 0);
    REQUIRE(fs::exists(s / "ck.json"));
    REQUIRE(fs::exists(s / "ck.bin"));
    REQUIRE(count_lines(s / "ck.history.csv") == 2);
    {
      std::ifstream f(s / "ck.history.csv");
      std::string line;
      std::getline(f, line);
      std::getline(f, line);
      REQUIRE(line.substr(0, 2) == "0,");
    }
    nlohmann::json manifest = nlohmann::json::parse(std::ifstream(s / "ck.json"));
    REQUIRE(manifest["trainer"]["epochs"] == 1);

    REQUIRE(run("train --dataset " + (s / "ds") + " --resume " + (s / "ck") +
                " --train-config " + (s / "trainer.json") + " --out " + (s / "ck2")) == 0);
    std::ifstream f(s / "ck2.history.csv");
    std::string line;
    std::getline(f, line);
    std::getline(f, line);
    REQUIRE(line.substr(0, 2) == "1,");
    nlohmann::json resumed = nlohmann::json::parse(std::ifstream(s / "ck2.json"));
    REQUIRE(resumed["trainer"]["epochs"] == 2);
  }

  SECTION("a missing dataset is a runtime error") {
    REQUIRE(run("train --dataset " + (s / "nope") + " --out " + (s / "ck")) == 1);
  }
}

TEST_CASE("rollout command") {
  Scratch s;

  SECTION("emits one row per seed and timestep") {
    REQUIRE(run("rollout --config " + (s / "desk.json") +
                " --policy zero --steps 2 --seeds 2 --seed 5 --out " + (s / "r.csv") +
                " --band " + (s / "band.csv")) == 0);
    REQUIRE(count_lines(s / "r.csv") == 1 + 2 * 3);
    REQUIRE(count_lines(s / "band.csv") == 1 + 3);
    std::ifstream f(s / "r.csv");
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line))
      REQUIRE(line.substr(line.size() - 2) == ",1");  // zero policy never moves
    nlohmann::json manifest = nlohmann::json::parse(std::ifstream(s / "r.csv.manifest.json"));
    REQUIRE(manifest["policy"] == "zero");
    REQUIRE(manifest["seeds"] == 2);
  }

  SECTION("identical flags reproduce the bytes, including parallel workers") {
    std::string base = "rollout --config " + (s / "desk.json") +
                       " --policy dcvt --steps 4 --seeds 3 --seed 7 --out ";
    REQUIRE(run(base + (s / "a.csv")) == 0);
    REQUIRE(run(base + (s / "b.csv") + " --jobs 3") == 0);
    REQUIRE(slurp(s / "a.csv") == slurp(s / "b.csv"));
  }

  SECTION("a learned policy rolls out from its checkpoint") {
    REQUIRE(run("generate --config " + (s / "desk.json") + " --out " + (s / "ds") +
                " --examples 6 --seed 1") == 0);
    {
      std::ofstream f(s / "model.json");
      f << R"({"layers": 2, "heads": 2, "head_dim": 16, "token_dim": 34})";
    }
    {
      std::ofstream f(s / "trainer.json");
      f << R"({"lr": 1e-4, "batch_size": 2, "max_epochs": 1, "patience": 1})";
    }
    REQUIRE(run("train --dataset " + (s / "ds") + " --model-config " + (s / "model.json") +
                " --train-config " + (s / "trainer.json") + " --out " + (s / "ck")) == 0);
    // --checkpoint alone implies the learned policy
    REQUIRE(run("rollout --config " + (s / "desk.json") + " --checkpoint " + (s / "ck") +
                " --sample-steps 2 --steps 1 --seeds 1 --out " + (s / "m.csv")) == 0);
    REQUIRE(count_lines(s / "m.csv") == 1 + 2);
    nlohmann::json manifest = nlohmann::json::parse(std::ifstream(s / "m.csv.manifest.json"));
    REQUIRE(manifest["policy"] == "madp");
    REQUIRE(manifest["sampler"]["steps"] == 2);
  }

  SECTION("bad policy flags are usage errors") {
    std::string tail = " --steps 1 --seeds 1 --out " + (s / "x.csv");
    REQUIRE(run("rollout --config " + (s / "desk.json") + " --policy greedy" + tail) == 1);
    REQUIRE(run("rollout --config " + (s / "desk.json") + " --policy madp" + tail) == 1);
    REQUIRE(run("rollout --config " + (s / "desk.json") + " --policy zero --checkpoint x" + tail) ==
            1);
    REQUIRE(run("rollout --config " + (s / "desk.json") + " --scenario circle" + tail) == 1);
  }
}

TEST_CASE("eval command") {
  Scratch s;
  std::string common = " --config " + (s / "desk.json") + " --seeds 2 --steps 2 --seed 3 --out ";

  SECTION("sigma suite emits one row per range plus a manifest") {
    REQUIRE(run("eval --suite sigma --range 40:60 --range 20:30" + common + (s / "sig.csv")) == 0);
    REQUIRE(count_lines(s / "sig.csv") == 3);
    nlohmann::json manifest = nlohmann::json::parse(std::ifstream(s / "sig.csv.manifest.json"));
    REQUIRE(manifest["suite"] == "sigma");
    REQUIRE(manifest["ranges"].size() == 2);
    REQUIRE(manifest["ranges"][0][0] == 40.0);
  }

  SECTION("init suite covers the three launch scenarios") {
    REQUIRE(run("eval --suite init" + common + (s / "init.csv")) == 0);
    REQUIRE(count_lines(s / "init.csv") == 4);
    REQUIRE(run("eval --suite init --scenario line" + common + (s / "line.csv")) == 0);
    REQUIRE(count_lines(s / "line.csv") == 2);
  }

  SECTION("scale suite emits the full grid") {
    REQUIRE(run("eval --suite scale --robots 2,4 --features 4 --baseline zero" + common +
                (s / "grid.csv")) == 0);
    REQUIRE(count_lines(s / "grid.csv") == 3);
    std::ifstream f(s / "grid.csv");
    std::string line;
    std::getline(f, line);
    REQUIRE(line == "num_robots,num_features,mean_policy,mean_baseline,percent_diff");
  }

  SECTION("fan suite emits one polyline per run") {
    REQUIRE(run("eval --suite fan --runs 2" + common + (s / "fan.csv")) == 0);
    REQUIRE(count_lines(s / "fan.csv") == 1 + 2 * 3);
  }

  SECTION("bad suites and ranges are usage errors") {
    REQUIRE(run("eval --suite bogus" + common + (s / "x.csv")) == 1);
    REQUIRE(run("eval --suite sigma --range 40" + common + (s / "x.csv")) == 1);
  }
}

TEST_CASE("output directory override") {
  Scratch s;
  fs::create_directory(s / "outdir");
  REQUIRE(run_env("MADP_OUT_DIR=" + (s / "outdir"),
                  "rollout --config " + (s / "desk.json") +
                      " --policy zero --steps 1 --seeds 1 --out rel.csv") == 0);
  REQUIRE(fs::exists(s / "outdir/rel.csv"));
  REQUIRE(fs::exists(s / "outdir/rel.csv.manifest.json"));
}
