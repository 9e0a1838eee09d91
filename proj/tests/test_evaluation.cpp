#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "metric_oracle.hpp"
#include "rawnext/evaluation.hpp"

using namespace rawnext;
namespace fs = std::filesystem;

TEST_CASE("middle crop") {
  std::vector<float> clip(160000);
  for (std::size_t i = 0; i < clip.size(); ++i) clip[i] = static_cast<float>(i);
  const auto two = crop_middle(clip, 2.0);
  REQUIRE(two.size() == 32000);
  CHECK(two.front() == 64000.0f);
  CHECK(two.back() == 95999.0f);
  CHECK(crop_middle(clip, 10.0) == clip);

  const std::vector<float> second(clip.begin(), clip.begin() + 16000);
  const auto five = crop_middle(second, 5.0);
  REQUIRE(five.size() == 80000);
  for (std::size_t k = 0; k < 5; ++k) CHECK(std::equal(second.begin(), second.end(), five.begin() + k * 16000));
  CHECK(crop_middle(five, 5.0) == five);

  CHECK_THROWS(crop_middle(std::vector<float>{}, 1.0));
  CHECK_THROWS(crop_middle(clip, 0.0));
}

TEST_CASE("cosine score") {
  std::mt19937_64 rng(1);
  std::vector<float> a(512), b(512);
  std::normal_distribution<float> nd;
  for (auto& v : a) v = nd(rng);
  for (auto& v : b) v = nd(rng);
  CHECK(cosine_score(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < 512; ++i) dot += double(a[i]) * b[i], na += double(a[i]) * a[i], nb += double(b[i]) * b[i];
  CHECK(std::abs(cosine_score(a, b) - dot / std::sqrt(na * nb)) < 1e-6);
  const std::vector<float> e0{1, 0, 0}, e1{0, 1, 0}, zero{0, 0, 0};
  CHECK(cosine_score(e0, e1) == 0.0);
  CHECK_THROWS(cosine_score(e0, zero));
  CHECK_THROWS(cosine_score(e0, a));
}

TEST_CASE("EER and minDCF edge cases") {
  ScoreSet separable;
  for (int i = 0; i < 5; ++i) separable.add(1.0 + i, true), separable.add(-1.0 - i, false);
  CHECK(compute_eer(separable).eer == 0.0);
  CHECK(compute_min_dcf(separable).cost == 0.0);

  ScoreSet inverted;
  for (int i = 0; i < 5; ++i) inverted.add(1.0 + i, false), inverted.add(-1.0 - i, true);
  CHECK(compute_eer(inverted).eer == doctest::Approx(1.0));

  ScoreSet flat;
  for (int i = 0; i < 6; ++i) flat.add(0.5, i % 2 == 0);
  CHECK(compute_min_dcf(flat).cost == doctest::Approx(1.0).epsilon(1e-12));

  ScoreSet one_class;
  one_class.add(1, true);
  one_class.add(2, true);
  CHECK_THROWS(compute_eer(one_class));
  CHECK_THROWS(compute_min_dcf(separable, 0.0));
  CHECK_THROWS(compute_min_dcf(separable, 1.0));
}

TEST_CASE("EER and minDCF match the exhaustive sweep") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 300; ++trial) {
    const auto set = oracle::random_score_set(rng);
    const auto brute = oracle::brute_eer(set);
    const double eer = compute_eer(set).eer;
    if (brute.at_point) REQUIRE(eer == brute.eer);
    else REQUIRE(std::abs(eer - brute.eer) < 1e-9);
    REQUIRE(std::abs(compute_min_dcf(set).cost - oracle::brute_min_dcf(set)) < 1e-9);
    REQUIRE(std::abs(compute_min_dcf(set, 0.05, 2, 1).cost - oracle::brute_min_dcf(set, 0.05, 2, 1)) < 1e-9);
  }
}

TEST_CASE("metrics are invariant under increasing transforms") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto set = oracle::random_score_set(rng);
    ScoreSet warped;
    for (std::size_t i = 0; i < set.size(); ++i) warped.add(std::exp(3 * set.scores[i]) + 7, set.targets[i]);
    CHECK(compute_eer(warped).eer == doctest::Approx(compute_eer(set).eer).epsilon(1e-12));
    CHECK(compute_min_dcf(warped).cost == compute_min_dcf(set).cost);
  }
}

TEST_CASE("nearest-point EER") {
  ScoreSet set;
  set.add(0.9, true), set.add(0.8, false), set.add(0.7, true), set.add(0.1, false);
  // Points (FAR, FRR): t=0.1 (1, 0); 0.7 (0.5, 0); 0.8 (0.5, 0.5); 0.9 (0, 0.5); inf (0, 1).
  CHECK(compute_eer(set, EerMode::nearest).eer == 0.5);
  CHECK(compute_eer(set, EerMode::nearest).threshold == 0.8);
  CHECK(parse_eer_mode("nearest") == EerMode::nearest);
  CHECK_THROWS_AS(parse_eer_mode("closest"), ConfigError);
}

TEST_CASE("duration lists") {
  const auto d = parse_durations("1,2,5,full");
  REQUIRE(d.size() == 4);
  CHECK(d[0].seconds == 1.0);
  CHECK(d[2].label() == "5s");
  CHECK(d[3].label() == "full");
  CHECK(parse_durations("2s")[0].seconds == 2.0);
  CHECK_THROWS_AS(parse_durations("1,abc"), ConfigError);
  CHECK_THROWS_AS(parse_durations("0"), ConfigError);
  CHECK_THROWS_AS(parse_durations(""), ConfigError);
}

TEST_CASE("trial evaluation is cached and repeatable") {
  const auto root = fs::temp_directory_path() / "rawnext_test_eval";
  fs::remove_all(root);
  CorpusSpec spec;
  spec.n_speakers = 2;
  spec.utts_per_speaker = 1;
  spec.duration_min_s = 0.3;
  spec.duration_max_s = 0.5;
  spec.eval_speakers = 3;
  spec.eval_utts_per_speaker = 3;
  spec.n_trials = 12;
  build_corpus(spec, root);
  const auto trials = read_trials(root / "eval" / "trials.txt");

  RawNextModel<float> model(ModelConfig::tiny(), 2);
  model.set_training(false);
  EmbeddingExtractor extractor(model, root / "eval");
  const auto full = evaluate_trials(extractor, trials, Duration{});
  const std::size_t cached = extractor.cache_size();
  CHECK(cached <= 9);
  const auto again = evaluate_trials(extractor, trials, Duration{});
  CHECK(extractor.cache_size() == cached);
  CHECK(full.scores == again.scores);
  CHECK(full.eer.eer == again.eer.eer);
  CHECK(full.scores.size() == 12);

  EmbeddingExtractor fresh(model, root / "eval");
  CHECK(evaluate_trials(fresh, trials, Duration{}).scores == full.scores);

  const auto one = evaluate_trials(extractor, trials, Duration{1.0});
  CHECK(extractor.cache_size() > cached);
  const std::string report = format_report({full, one});
  CHECK(report.find("duration=full trials=12 eer_percent=") == 0);
  CHECK(report.find("\nduration=1s trials=12 ") != std::string::npos);

  write_scores(root / "scores.txt", trials, full.scores);
  std::ifstream in(root / "scores.txt");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == trials.size());

  auto broken = trials;
  broken[0].test = "nobody/missing.wav";
  CHECK_THROWS_WITH_AS(evaluate_trials(extractor, broken, Duration{}), doctest::Contains("nobody/missing.wav"), IoError);

  model.set_training(true);
  CHECK_THROWS(EmbeddingExtractor(model, root / "eval").embed(trials[0].enroll, Duration{}));
}
