#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "rawnext/analysis.hpp"
#include "rawnext/data.hpp"

namespace fs = std::filesystem;
using rawnext::cli::ExitCode;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = rawnext::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

fs::path write_config(const fs::path& dir, const std::string& name, const std::string& mode) {
  std::ofstream(dir / name) << "[model]\nmode = " << mode
                            << "\nstage_widths = 32,32,32,32\nstage_blocks = 1,1,1,1\nfrontend_channels = 16\n"
                               "asp_hidden = 8\nembedding_dim = 16\n"
                               "[train]\nepochs = 2\nsteps_per_epoch = 2\nspeakers_per_batch = 3\nfixed_len = 2187\n"
                               "random_len_min = 1500\nrandom_len_max = 2187\nout = "
                            << (dir / ("run_" + mode)).string()
                            << "\n[data]\nn_speakers = 3\nutts_per_speaker = 3\nduration_min_s = 0.4\n"
                               "duration_max_s = 0.8\neval_speakers = 3\neval_utts_per_speaker = 3\nn_trials = 10\n"
                               "root = "
                            << (dir / "data").string() << "\n";
  return dir / name;
}

}  // namespace

TEST_CASE("command line end to end") {
  const auto dir = fs::temp_directory_path() / "rawnext_test_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto cfg = write_config(dir, "tiny.cfg", "rawnext").string();
  const auto base_cfg = write_config(dir, "base.cfg", "baseline").string();

  // Training needs a corpus.
  auto r = run({"train", "--config", cfg});
  CHECK(r.code == ExitCode::io_error);
  CHECK(r.err.find("no training corpus") != std::string::npos);

  REQUIRE(run({"gen-data", "--config", cfg}).code == 0);
  REQUIRE(run({"gen-data", "--config", cfg, "--out", (dir / "data2").string()}).code == 0);
  CHECK(slurp(dir / "data" / "train" / "manifest.txt") == slurp(dir / "data2" / "train" / "manifest.txt"));
  CHECK(slurp(dir / "data" / "eval" / "trials.txt") == slurp(dir / "data2" / "eval" / "trials.txt"));
  r = run({"gen-data", "--config", cfg, "--out", "/proc/rawnext_nope"});
  CHECK(r.code == ExitCode::io_error);
  CHECK_FALSE(r.err.empty());

  r = run({"train", "--config", cfg});
  REQUIRE(r.code == 0);
  const auto run_dir = dir / "run_rawnext";
  for (const char* f : {"epoch1.rnxt", "epoch2.rnxt", "best.rnxt", "train.log", "config.cfg"})
    CHECK(fs::exists(run_dir / f));
  CHECK(r.out.find("epoch 2/2") != std::string::npos);
  const std::string log = slurp(run_dir / "train.log");

  // Resume from epoch 1 into a fresh directory: same second epoch.
  r = run({"train", "--config", cfg, "--checkpoint", (run_dir / "epoch1.rnxt").string(), "--out",
           (dir / "resumed").string()});
  REQUIRE(r.code == 0);
  const std::string resumed = slurp(dir / "resumed" / "train.log");
  CHECK(resumed == log.substr(log.find("epoch=2")));

  const auto ckpt = (run_dir / "epoch2.rnxt").string();
  r = run({"evaluate", "--checkpoint", ckpt, "--config", cfg, "--durations", "1,2,5,full"});
  REQUIRE(r.code == 0);
  const std::string report = slurp(run_dir / "eval" / "report.txt");
  CHECK(line_count(report) == 4);
  CHECK(report.find("duration=full") != std::string::npos);
  CHECK(line_count(slurp(run_dir / "eval" / "scores_full.txt")) == 10);
  REQUIRE(run({"evaluate", "--checkpoint", ckpt, "--config", cfg, "--durations", "1,2,5,full"}).code == 0);
  CHECK(slurp(run_dir / "eval" / "report.txt") == report);

  const auto first = rawnext::read_manifest(dir / "data" / "eval" / "manifest.txt").at(0).path;
  std::ofstream(dir / "list.txt") << (dir / "data" / "eval" / first).string() << "\n";
  r = run({"extract", "--checkpoint", ckpt, (dir / "list.txt").string()});
  REQUIRE(r.code == 0);
  CHECK(line_count(r.out) == 1);
  std::istringstream fields(r.out.substr(r.out.find(' ')));
  std::size_t values = 0;
  for (double v; fields >> v;) ++values;
  CHECK(values == 16);

  r = run({"analyze", "--checkpoint", ckpt, "--config", cfg, "--lengths", "1..3", "--utterances", "2"});
  REQUIRE(r.code == 0);
  const auto rows = rawnext::read_csv(run_dir / "activation.csv");
  CHECK(rows.size() == 9);
  r = run({"analyze", "--checkpoint", ckpt, "--config", cfg, "--lengths", "1", "--utterances", "2", "--out",
           (dir / "ref.csv").string()});
  REQUIRE(r.code == 0);
  for (const auto& row : rawnext::read_csv(dir / "ref.csv")) CHECK(row.score == 0.0);

  REQUIRE(run({"train", "--config", base_cfg}).code == 0);
  r = run({"analyze", "--checkpoint", (dir / "run_baseline" / "epoch1.rnxt").string(), "--config", base_cfg});
  CHECK(r.code == ExitCode::config_error);
  CHECK(r.err.find("no EDSP branches") != std::string::npos);

  CHECK(run({"evaluate", "--checkpoint", (dir / "missing.rnxt").string()}).code == ExitCode::io_error);
  CHECK(run({"evaluate", "--checkpoint", ckpt, "--bogus"}).code == ExitCode::config_error);
  CHECK(run({"evaluate", "--checkpoint", ckpt, "--config", cfg, "--durations", "x"}).code == ExitCode::config_error);
  CHECK(run({}).code != 0);
}
