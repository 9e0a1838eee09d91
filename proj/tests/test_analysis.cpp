#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "rawnext/analysis.hpp"
#include "rawnext/data.hpp"

using namespace rawnext;
namespace fs = std::filesystem;

namespace {

std::vector<std::vector<float>> utterances(std::size_t count, double seconds) {
  std::vector<std::vector<float>> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(synth_utterance(make_profile(4, i), seconds, 100 + i));
  return out;
}

RawNextModel<float> eval_model() {
  RawNextModel<float> model(ModelConfig::tiny(), 8);
  model.set_training(false);
  return model;
}

}  // namespace

TEST_CASE("variation score is zero at the reference length") {
  const auto model = eval_model();
  const auto utt = utterances(1, 2.5)[0];
  for (double s : branch_activation_score(model, utt, 1.0)) CHECK(s == 0.0);
  const auto rows = sweep_lengths(model, utterances(2, 1.5), {1});
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) CHECK(r.score == 0.0);
}

TEST_CASE("length sweep shape, ordering and mean invariance") {
  const auto model = eval_model();
  auto set = utterances(2, 2.2);
  const auto rows = sweep_lengths(model, set, {3, 1, 2});
  REQUIRE(rows.size() == 9);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].length_s == static_cast<double>(1 + i / 3));
    CHECK(rows[i].branch == kBranches[i % 3]);
    CHECK(std::isfinite(rows[i].score));
  }
  // Per-utterance scores averaged.
  const auto a = branch_activation_score(model, set[0], 3.0), b = branch_activation_score(model, set[1], 3.0);
  for (std::size_t r = 0; r < 3; ++r) CHECK(rows[6 + r].score == doctest::Approx((a[r] + b[r]) / 2).epsilon(1e-12));

  auto doubled = set;
  doubled.insert(doubled.end(), set.begin(), set.end());
  const auto rows2 = sweep_lengths(model, doubled, {1, 2, 3});
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows2[i].score == doctest::Approx(rows[i].score).epsilon(1e-12));

  CHECK_THROWS(sweep_lengths(model, {}, {1, 2}));
  CHECK_THROWS(sweep_lengths(model, set, {2, 3}));
}

TEST_CASE("untrained gate treats the branches alike") {
  // Nothing has been learned yet, so the length shift stays small everywhere.
  const auto model = eval_model();
  const auto s = branch_activation_score(model, utterances(1, 3.0)[0], 3.0);
  for (double v : s) CHECK(std::abs(v) < 0.5);
}

TEST_CASE("baseline model has no branches to analyse") {
  auto config = ModelConfig::tiny();
  config.mode = ModelMode::baseline;
  RawNextModel<float> model(config, 1);
  model.set_training(false);
  CHECK_THROWS(branch_activation_score(model, utterances(1, 1.0)[0], 2.0));
}

TEST_CASE("activation CSV") {
  const auto dir = fs::temp_directory_path() / "rawnext_test_csv";
  fs::create_directories(dir);
  export_csv({{1.0, Branch::high, 0.0}}, dir / "one.csv");
  std::ifstream in(dir / "one.csv");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  CHECK(lines == std::vector<std::string>{"length_s,branch,score", "1,high,0"});

  std::vector<ActivationRow> rows;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1e-3, 1e-3);
  for (int len = 1; len <= 8; ++len)
    for (Branch b : kBranches) rows.push_back({double(len), b, len == 1 ? 0.0 : u(rng)});
  export_csv(rows, dir / "sweep.csv");
  const auto back = read_csv(dir / "sweep.csv");
  REQUIRE(back.size() == 24);
  char buf[32];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g", rows[i].score);
    CHECK(back[i].score == std::stod(buf));
    CHECK(back[i].branch == rows[i].branch);
    CHECK(back[i].length_s == rows[i].length_s);
  }
  CHECK_THROWS(export_csv({}, dir / "empty.csv"));
  CHECK_THROWS_AS(export_csv(rows, "/proc/rawnext/nope.csv"), IoError);
}

TEST_CASE("length lists and rank correlation") {
  CHECK(parse_lengths("1..8") == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(parse_lengths("1,2.5,5") == std::vector<double>{1, 2.5, 5});
  CHECK_THROWS_AS(parse_lengths("3..1"), ConfigError);
  CHECK_THROWS_AS(parse_lengths("1,-2"), ConfigError);

  const std::vector<double> x{1, 2, 3, 4, 5}, y{2, 1, 4, 3, 5};
  CHECK(spearman(x, y) == doctest::Approx(1.0 - 6.0 * 4 / (5 * 24)).epsilon(1e-12));
  const std::vector<double> rev{9, 7, 5, 3, 1};
  CHECK(spearman(x, rev) == doctest::Approx(-1.0));
  const std::vector<double> a{1, 2, 3, 4}, tied{1, 1, 2, 3};
  CHECK(spearman(a, tied) == doctest::Approx(4.5 / std::sqrt(22.5)).epsilon(1e-12));
  CHECK_THROWS(spearman(std::vector<double>{1}, std::vector<double>{1}));
}
