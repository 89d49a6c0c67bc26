#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "omniseg/checkpoint.hpp"
#include "omniseg/cli.hpp"

using namespace omniseg;
using namespace omniseg::cli;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("omniseg_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "omniseg");
  return run(args);
}

// Exit status of the real executable.
int binary(const std::string& args) {
  const char* bin = std::getenv("OMNISEG_BIN");
  REQUIRE(bin != nullptr);
  const int status = std::system((std::string(bin) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config text round trip and hashing") {
  config::RunConfig c;
  c.queries = 7;
  c.voxel = 0.0625;
  c.fusion_stages = {2, 3};
  c.mode = config::TrainMode::Joint;
  c.data = "somewhere";
  const config::RunConfig d = config::RunConfig::parse(c.to_text());
  CHECK(d.entries() == c.entries());
  CHECK(d.hash() == c.hash());
  CHECK(d.fusion_stages == std::vector<int>{2, 3});

  config::RunConfig moved = c;
  moved.data = "elsewhere";
  moved.out = "x";
  CHECK(moved.hash() == c.hash());  // paths are not part of the identity
  config::RunConfig other = c;
  other.set("lr", "0.002");
  CHECK(other.hash() != c.hash());

  const config::RunConfig parsed = config::RunConfig::parse("# comment\n\nqueries = 9\n  heads=2  \n");
  CHECK(parsed.queries == 9);
  CHECK(parsed.heads == 2);
  CHECK_THROWS_AS(config::RunConfig::parse("nonsense = 1\n"), config::ConfigError);
  CHECK_THROWS_AS(config::RunConfig::parse("queries = many\n"), config::ConfigError);
  CHECK_THROWS_AS(config::RunConfig::parse("queries\n"), config::ConfigError);
  try {
    config::RunConfig::parse("heads = 2\nqueries = x\n", "f.txt");
    FAIL("expected a config error");
  } catch (const config::ConfigError& e) {
    CHECK(std::string(e.what()).find("f.txt:2") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip is bit-identical") {
  const fs::path dir = temp_dir("ckpt");
  const config::RunConfig cfg = tiny_config();
  autodiff::ParamStore<float> store;
  model::register_params(store, cfg.model(scenedata::Vocabulary::standard()), 3);
  nn::randomize(store, 4, 1.0);
  checkpoint::save(dir / "a.bin", cfg, store, 17);
  const checkpoint::Checkpoint ck = checkpoint::load(dir / "a.bin", &cfg);
  CHECK(ck.iteration == 17);
  CHECK(ck.config.hash() == cfg.hash());
  REQUIRE(ck.params.blocks().size() == store.blocks().size());
  for (size_t i = 0; i < store.blocks().size(); ++i) {
    CHECK(ck.params.blocks()[i]->name == store.blocks()[i]->name);
    const auto& a = ck.params.blocks()[i]->value;
    const auto& b = store.blocks()[i]->value;
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0);
  }
  checkpoint::save(dir / "b.bin", ck.config, ck.params, 17);
  CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));

  config::RunConfig changed = cfg;
  changed.queries += 1;
  CHECK_THROWS_AS(checkpoint::load(dir / "a.bin", &changed), LoadError);

  const std::string bytes = slurp(dir / "a.bin");
  std::ofstream(dir / "short.bin", std::ios::binary) << bytes.substr(0, bytes.size() - 5);
  CHECK_THROWS_AS(checkpoint::load(dir / "short.bin"), LoadError);
  std::ofstream(dir / "long.bin", std::ios::binary) << bytes << "x";
  CHECK_THROWS_AS(checkpoint::load(dir / "long.bin"), LoadError);
  CHECK_THROWS_AS(checkpoint::load(dir / "missing.bin"), LoadError);
  fs::remove_all(dir);
}

TEST_CASE("metrics parsing and plots") {
  const PlotData log = parse_metrics("10 1.5 0.5 0.4 0.6\n20 1.0 0.3 0.3 0.4 mAP 0.2 mIoU 0.5\n", "m.log");
  CHECK(log.x_label == "iteration");
  REQUIRE(log.rows.size() == 2);
  CHECK(log.columns.size() == 7);
  CHECK(std::isnan(log.rows[0][5]));
  CHECK(log.rows[1][5] == doctest::Approx(0.2));

  const PlotData csv = parse_metrics("label,mAP,mAP50,mAP25,mIoU\n1,0.1,0.2,0.3,0.4\n4,0.2,0.3,0.5,0.6\n", "r.csv");
  CHECK(csv.x_label == "views");
  CHECK(csv.rows.size() == 2);
  CHECK(csv.rows[1][0] == 4.0);

  CHECK_THROWS_AS(parse_metrics("", "e.log"), UserError);
  try {
    parse_metrics("10 1 1 1 1\n20 1 oops 1 1\n", "m.log");
    FAIL("expected a parse error");
  } catch (const UserError& e) {
    CHECK(std::string(e.what()).find("m.log:2") != std::string::npos);
  }

  const std::string svg = plot_svg(csv, "t");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("<polyline") != std::string::npos);
  CHECK(svg.find("mAP25") != std::string::npos);
  CHECK(plot_csv(csv) == "views,mAP,mAP50,mAP25,mIoU\n1,0.1,0.2,0.3,0.4\n4,0.2,0.3,0.5,0.6\n");
  // plot's CSV output reads back to the same data
  const PlotData again = parse_metrics(plot_csv(csv), "views.csv");
  CHECK(again.x_label == "views");
  CHECK(again.rows == csv.rows);
  CHECK(parse_metrics(plot_csv(log), "curve.csv").x_label == "iteration");
  CHECK_THROWS_AS(parse_metrics("time,a\n1,2\n", "x.csv"), UserError);
}

TEST_CASE("run lock") {
  const fs::path dir = temp_dir("lock");
  {
    RunLock a(dir);
    CHECK(fs::exists(dir / "run.lock"));
    CHECK_THROWS_AS(RunLock{dir}, UserError);
  }
  CHECK_FALSE(fs::exists(dir / "run.lock"));
  // a lock whose owner is gone is taken over
  const pid_t child = ::fork();
  if (child == 0) ::_exit(0);
  ::waitpid(child, nullptr, 0);
  std::ofstream(dir / "run.lock") << child << "\n";
  CHECK_NOTHROW(RunLock{dir});
  fs::remove_all(dir);
}

TEST_CASE("exit codes") {
  CHECK(invoke({}) == kUserError);
  CHECK(invoke({"bogus"}) == kUserError);
  CHECK(invoke({"--help"}) == kOk);
  CHECK(invoke({"synth", "--out", "/tmp/x"}) == kUserError);  // missing --scenes
  CHECK(invoke({"synth", "--out", "/tmp/x", "--scenes", "1", "--size", "30by32"}) == kUserError);
  CHECK(invoke({"eval", "--data", "/nonexistent/omniseg", "--oracle"}) == kDataError);
  CHECK(invoke({"plot", "--metrics", "/nonexistent/m.log", "--out", "x.png"}) == kUserError);
  CHECK(invoke({"gradcheck", "--corrupt", "no.such.block"}) == kUserError);
  CHECK(binary("") == kUserError);
  CHECK(binary("eval --data /nonexistent/omniseg --oracle") == kDataError);
}

TEST_CASE("gradcheck flags a corrupted block") {
  CHECK(invoke({"gradcheck", "--entries", "2"}) == kOk);
  CHECK(invoke({"gradcheck", "--entries", "2", "--corrupt", "dec.mask.1.w"}) == kVerificationFailure);
  autodiff::ParamStore<float> probe;
  model::register_params(probe, tiny_config().model(scenedata::Vocabulary::standard()), 0);
  const std::string first = probe.blocks().front()->name;
  const GradcheckReport r = gradcheck(tiny_config(), 2, first, 2);
  CHECK(r.parameters <= 5000);
  CHECK_FALSE(r.ok());
  for (const auto& b : r.blocks) CHECK(b.ok == (b.name != first));
}

TEST_CASE("synth, train and eval end to end") {
  const fs::path dir = temp_dir("e2e");
  const std::string a = (dir / "a").string(), b = (dir / "b").string();
  REQUIRE(invoke({"synth", "--out", a, "--scenes", "4", "--seed", "5", "--views", "2", "--size", "32x32"}) == kOk);
  REQUIRE(invoke({"synth", "--out", b, "--scenes", "4", "--seed", "5", "--views", "2", "--size", "32x32"}) == kOk);
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) CHECK(slurp(e.path()) == slurp(b / fs::relative(e.path(), a)));
  }
  CHECK(slurp(dir / "a" / "manifest.txt").find("scene_0000") != std::string::npos);

  std::ofstream(dir / "tiny.txt") << tiny_config().to_text();
  const std::string out = (dir / "run").string();
  REQUIRE(invoke({"train", "--config", (dir / "tiny.txt").string(), "--data", a, "--out", out, "--iterations", "3",
                   "--set", "log_every=1"}) == kOk);
  CHECK(fs::exists(dir / "run" / "checkpoint.bin"));
  CHECK(fs::exists(dir / "run" / "config.txt"));
  CHECK_FALSE(fs::exists(dir / "run" / "run.lock"));
  const PlotData curve = parse_metrics(slurp(dir / "run" / "metrics.log"), "metrics.log");
  CHECK(curve.rows.size() == 3);

  REQUIRE(invoke({"eval", "--checkpoint", out + "/checkpoint.bin", "--data", a, "--views", "1,2"}) == kOk);
  const std::string csv = slurp(dir / "run" / "report.csv");
  CHECK(csv.find("label,mAP,mAP50,mAP25,mIoU") == 0);
  CHECK(parse_metrics(csv, "report.csv").rows.size() == 2);
  REQUIRE(invoke({"plot", "--metrics", out + "/report.csv", "--out", out + "/views.svg"}) == kOk);
  CHECK(slurp(dir / "run" / "views.svg").find("<polyline") != std::string::npos);

  CHECK(invoke({"train", "--data", a, "--out", out, "--set", "nonsense=1"}) == kUserError);
  {
    RunLock held(dir / "run");
    CHECK(invoke({"train", "--config", (dir / "tiny.txt").string(), "--data", a, "--out", out, "--iterations", "1"}) ==
          kUserError);
  }
  fs::remove_all(dir);
}
