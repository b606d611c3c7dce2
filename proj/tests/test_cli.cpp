// Exit codes and outputs of the command-line harness.
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "hjbctl_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(HJBCTL_CLI) + " " + args + " > " + (kDir / "out.txt").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string output() {
  std::ifstream is(kDir / "out.txt");
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("command line") {
  fs::remove_all(kDir);
  fs::create_directories(kDir);
  const std::string d = kDir.string();
  const std::string tiny = " --grid 6 --set problem.steps=3 --set validation_indices=[0,1] --set hjb.iterations=2"
                           " --set hjb.batch=2 --set hjb.pool=4 --set hjb.width=4 --set hjb.depth=1"
                           " --set hjb.lr0=0.01 --set hjb.lr_floor=0.001";

  CHECK(run("--help") == 0);
  CHECK(run("") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("train --set nokey") == 1);
  CHECK(run("train --set problem.bogus=1 -o " + d + "/x") == 1);
  CHECK(output().find("bogus") != std::string::npos);
  CHECK_FALSE(fs::exists(kDir / "x"));

  CHECK(run("train --print-config --setup sinusoidal --seed 4") == 0);
  CHECK(output().find("\"sinusoidal\"") != std::string::npos);

  REQUIRE(run("train" + tiny + " -o " + d + "/h") == 0);
  CHECK(output().find("training solves") != std::string::npos);
  CHECK(fs::exists(kDir / "h" / "metrics.csv"));
  REQUIRE(run("train --method ppo --set rl.max_solves=6 --set rl.envs=2" + tiny + " -o " + d + "/p") == 0);
  REQUIRE(run("baseline" + tiny + " --baseline-cache " + d + "/cache.csv -o " + d + "/b") == 0);
  CHECK(fs::exists(kDir / "cache.csv"));

  CHECK(run("compare " + d + "/h " + d + "/p -t 1e-12 -r 2 -b " + d + "/cache.csv") == 0);
  const std::string table = output();
  CHECK(table.rfind("run,method,seed,threshold", 0) == 0);
  CHECK(table.find("not reached") != std::string::npos);
  CHECK(run("compare " + d + "/h") == 1);
  CHECK(run("compare " + d + "/h " + d + "/p -r 2") == 1);

  CHECK(run("evaluate " + d + "/h") == 0);
  CHECK(fs::exists(kDir / "h" / "evaluation.csv"));
  CHECK(run("evaluate " + d + "/missing") == 1);
  CHECK(run("dump-episode " + d + "/b -p 1") == 0);
  CHECK(fs::exists(kDir / "b" / "episode_1.grid"));
  CHECK(run("dump-episode " + d + "/h -p 5") == 1);
  fs::remove_all(kDir);
}
