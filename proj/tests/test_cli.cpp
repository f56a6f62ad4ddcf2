#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "facegan/io.hpp"

using namespace facegan;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

fs::path scratch() {
  static const fs::path dir = [] {
    const fs::path d = fs::path(FACEGAN_TEST_WORK_DIR) / "cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run cli(const std::string& args) {
  const fs::path out = scratch() / "last_output.txt";
  const std::string cmd = std::string("'") + FACEGAN_CLI + "' " + args + " > '" + out.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_text(out)};
}

std::string p(const fs::path& x) { return "'" + x.string() + "'"; }

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(cli("").code == 1);
  CHECK(cli("frobnicate").code == 1);
  CHECK(cli("synth").code == 1);
  CHECK(cli("synth --out x --subjects -3").code == 1);
  CHECK(cli("train --data d --out o").code == 1);
  CHECK(cli("--help").code == 0);
}

TEST_CASE("missing files exit 2 and name the path") {
  const fs::path missing = scratch() / "does_not_exist";
  const Run a = cli("pretrain --data " + p(missing) + " --out " + p(scratch() / "x.ckpt"));
  CHECK(a.code == 2);
  CHECK(a.output.find(missing.string()) != std::string::npos);
  const Run b = cli("evaluate --task represent --model " + p(missing / "G.ckpt") + " --out " + p(scratch() / "r.json"));
  CHECK(b.code == 2);
  CHECK(b.output.find("G.ckpt") != std::string::npos);
  const Run c = cli("preprocess --in " + p(missing) + " --out " + p(scratch() / "d"));
  CHECK(c.code == 2);
  CHECK(c.output.find(missing.string()) != std::string::npos);
}

TEST_CASE("identity model has zero error after preprocessing") {
  const fs::path raw = scratch() / "raw", data = scratch() / "data";
  REQUIRE(cli("synth --subjects 12 --modes 3 --noise 1 --grid 21 --seed 2 --out " + p(raw)).code == 0);
  REQUIRE(cli("preprocess --in " + p(raw) + " --res 32 --out " + p(data)).code == 0);
  REQUIRE(cli("evaluate --task represent --model identity --data " + p(data) + " --out " + p(scratch() / "id.json")).code == 0);
  const auto r = nlohmann::json::parse(read_text(scratch() / "id.json"));
  CHECK(r["model_errors"]["mean"].get<double>() == 0.0);
  CHECK(r["model_errors"]["auc"].get<double>() == doctest::Approx(1.0));
  CHECK(fs::exists(scratch() / "id_ced.csv"));

  REQUIRE(cli("evaluate --task translate --model identity --data " + p(data) + " --out " + p(scratch() / "tr.json")).code == 0);
  const auto t = nlohmann::json::parse(read_text(scratch() / "tr.json"));
  CHECK(t["model_errors"]["mean"].get<double>() == t["identity_baseline"]["mean"].get<double>());
  CHECK(t["model_errors"]["mean"].get<double>() > 0.0);

  CHECK(cli("evaluate --task sideways --model identity --data " + p(data) + " --out " + p(scratch() / "x.json")).code == 2);
}

TEST_CASE("diverging training exits 3") {
  const fs::path raw = scratch() / "raw3", data = scratch() / "data3", cfg = scratch() / "diverge.cfg";
  REQUIRE(cli("synth --subjects 6 --modes 2 --grid 21 --out " + p(raw)).code == 0);
  REQUIRE(cli("preprocess --in " + p(raw) + " --res 32 --out " + p(data)).code == 0);
  write_text(cfg, "base_filters = 2\nlatent_dim = 2\nlr = 1e30\npretrain_batch = 2\npretrain_epochs = 20\n");
  const Run r = cli("pretrain --data " + p(data) + " --config " + p(cfg) + " --out " + p(scratch() / "d.ckpt"));
  CHECK(r.code == 3);
}
