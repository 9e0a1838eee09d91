#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "rawnext/data.hpp"
#include "rawnext/tensor.hpp"

using namespace rawnext;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("rawnext_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

CorpusSpec small_spec() {
  CorpusSpec spec;
  spec.n_speakers = 3;
  spec.utts_per_speaker = 2;
  spec.duration_min_s = 0.2;
  spec.duration_max_s = 0.4;
  spec.eval_speakers = 2;
  spec.eval_utts_per_speaker = 3;
  spec.n_trials = 6;
  return spec;
}

}  // namespace

TEST_CASE("speaker profiles") {
  const auto profiles = make_profiles(1, 0, 40);
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    CHECK(profiles[i].fundamental_hz >= 90);
    CHECK(profiles[i].fundamental_hz <= 260);
    CHECK(make_profile(1, i).resonance_hz == profiles[i].resonance_hz);
    for (std::size_t j = 0; j < i; ++j) {
      double widest = 0;
      for (std::size_t r = 0; r < 3; ++r)
        widest = std::max(widest, std::abs(profiles[i].resonance_hz[r] - profiles[j].resonance_hz[r]));
      CHECK(widest >= 50);
    }
  }
  CHECK(make_profile(2, 0).fundamental_hz != make_profile(1, 0).fundamental_hz);
}

TEST_CASE("utterance synthesis") {
  const auto a = make_profile(1, 0), b = make_profile(1, 1);
  const auto x = synth_utterance(a, 0.5, 11);
  CHECK(x.size() == 8000);
  CHECK(x == synth_utterance(a, 0.5, 11));
  CHECK(x != synth_utterance(a, 0.5, 12));
  const auto y = synth_utterance(b, 0.5, 11);
  double dist = 0;
  for (std::size_t i = 0; i < x.size(); ++i) dist += (x[i] - y[i]) * (x[i] - y[i]);
  CHECK(dist > 0);
  for (float v : x) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("no-noise spectrum peaks at the fundamental") {
  // Direct DFT magnitude on a 0.5 Hz grid up to 4 kHz.
  SynthOptions quiet;
  quiet.add_noise = false;
  for (std::size_t index : {0, 4, 9}) {
    const auto p = make_profile(1, index);
    const auto x = synth_utterance(p, 1.0, 3, quiet);
    double best_f = 0, best = 0;
    for (double f = 20; f <= 4000; f += 0.5) {
      double re = 0, im = 0;
      const double w = 2 * std::numbers::pi * f / 16000;
      for (std::size_t t = 0; t < x.size(); ++t) {
        re += x[t] * std::cos(w * t);
        im -= x[t] * std::sin(w * t);
      }
      if (re * re + im * im > best) best = re * re + im * im, best_f = f;
    }
    INFO("speaker " << index << " f0 " << p.fundamental_hz);
    CHECK(std::abs(best_f - p.fundamental_hz) <= 5.0);
  }
}

TEST_CASE("wav round trip and header") {
  std::vector<float> ramp(1000);
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = -1.0f + 2.0f * i / 999.0f;
  const auto bytes = encode_wav(ramp, 16000);
  const std::vector<std::uint8_t> header{'R', 'I', 'F', 'F', 0xF4, 0x07, 0, 0, 'W', 'A', 'V', 'E', 'f', 'm', 't',
                                         ' ', 16, 0, 0, 0, 1, 0, 1, 0, 0x80, 0x3E, 0, 0, 0, 0x7D, 0, 0,
                                         2, 0, 16, 0, 'd', 'a', 't', 'a', 0xD0, 0x07, 0, 0};
  REQUIRE(bytes.size() == 44 + 2000);
  CHECK(std::equal(header.begin(), header.end(), bytes.begin()));

  const auto dir = scratch("wav");
  write_wav(dir / "ramp.wav", ramp);
  const auto back = read_wav(dir / "ramp.wav");
  REQUIRE(back.size() == ramp.size());
  for (std::size_t i = 0; i < ramp.size(); ++i) CHECK(std::abs(back[i] - ramp[i]) <= 1.0f / 32768);

  auto truncated = bytes;
  truncated.resize(30);
  CHECK_THROWS_AS(decode_wav(truncated, 16000), IoError);
  truncated = bytes;
  truncated.resize(100);
  CHECK_THROWS_WITH_AS(decode_wav(truncated, 16000), doctest::Contains("truncated"), IoError);
  CHECK_THROWS_AS(decode_wav(std::vector<std::uint8_t>(3, 0), 16000), IoError);

  auto stereo = bytes;
  stereo[22] = 2;
  CHECK_THROWS_WITH_AS(decode_wav(stereo, 16000), doctest::Contains("channels"), IoError);
  auto bits = bytes;
  bits[34] = 8;
  CHECK_THROWS_WITH_AS(decode_wav(bits, 16000), doctest::Contains("bits per sample"), IoError);
  CHECK_THROWS_WITH_AS(decode_wav(encode_wav(ramp, 8000), 16000), doctest::Contains("sample rate"), IoError);
  CHECK_THROWS_AS(read_wav(dir / "missing.wav"), IoError);
}

TEST_CASE("corpus build is deterministic and self-consistent") {
  const auto a = scratch("corpus_a"), b = scratch("corpus_b");
  build_corpus(small_spec(), a);
  build_corpus(small_spec(), b);

  const auto manifest = read_manifest(a / "train" / "manifest.txt");
  CHECK(manifest.size() == 6);
  std::size_t wavs = 0;
  for (const auto& e : fs::recursive_directory_iterator(a / "train")) wavs += e.path().extension() == ".wav";
  CHECK(wavs == 6);
  for (const auto& e : manifest) {
    CHECK(read_wav(a / "train" / e.path).size() / 16000.0 == doctest::Approx(e.duration_s).epsilon(1e-9));
    CHECK(file_bytes(a / "train" / e.path) == file_bytes(b / "train" / e.path));
  }
  CHECK(file_bytes(a / "train" / "manifest.txt") == file_bytes(b / "train" / "manifest.txt"));
  CHECK(file_bytes(a / "eval" / "trials.txt") == file_bytes(b / "eval" / "trials.txt"));

  // Evaluation speakers are disjoint from the training speakers.
  std::set<std::string> train_speakers;
  for (const auto& e : manifest) train_speakers.insert(e.speaker);
  for (const auto& e : read_manifest(a / "eval" / "manifest.txt")) CHECK(train_speakers.count(e.speaker) == 0);

  const Corpus loaded = load_corpus(a / "train");
  CHECK(loaded.speaker_count() == 3);
  CHECK(loaded.by_speaker()[0].size() == 2);

  CHECK_THROWS_AS(build_corpus(small_spec(), "/proc/rawnext_cannot_write_here"), IoError);
  CHECK_THROWS_AS(read_manifest(a / "nothing.txt"), IoError);

  CorpusSpec bad = small_spec();
  bad.n_speakers = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("trial lists") {
  std::vector<ManifestEntry> manifest;
  for (int s = 0; s < 5; ++s)
    for (int u = 0; u < 6; ++u) manifest.push_back({"s" + std::to_string(s) + "/u" + std::to_string(u) + ".wav",
                                                    "s" + std::to_string(s), 1.0});
  const auto trials = build_trials(manifest, 100, 3);
  REQUIRE(trials.size() == 100);
  std::size_t targets = 0;
  std::set<std::string> paths;
  for (const auto& m : manifest) paths.insert(m.path);
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& t : trials) {
    targets += t.target;
    CHECK(t.enroll != t.test);
    CHECK(paths.count(t.enroll) == 1);
    CHECK(paths.count(t.test) == 1);
    CHECK(pairs.insert(std::minmax(t.enroll, t.test)).second);
    CHECK(t.target == (t.enroll.substr(0, 2) == t.test.substr(0, 2)));
  }
  CHECK(targets == 50);

  const auto dir = scratch("trials");
  write_trials(dir / "trials.txt", trials);
  const auto back = read_trials(dir / "trials.txt");
  REQUIRE(back.size() == trials.size());
  CHECK(back[7].enroll == trials[7].enroll);
  CHECK(back[7].target == trials[7].target);

  CHECK_THROWS(build_trials(std::vector<ManifestEntry>(manifest.begin(), manifest.begin() + 6), 4, 1));
  CHECK_THROWS(build_trials(manifest, 1000, 1));
}

TEST_CASE("same-speaker utterances are spectrally closer") {
  // Log band energies (24 bands of 250 Hz from a 50 Hz DFT grid), centred per
  // utterance, compared by cosine.
  auto bands = [](const std::vector<float>& x) {
    std::vector<double> e(24, 1e-12);
    for (double f = 50; f < 6000; f += 50) {
      double re = 0, im = 0;
      const double w = 2 * std::numbers::pi * f / 16000;
      for (std::size_t t = 0; t < x.size(); ++t) re += x[t] * std::cos(w * t), im -= x[t] * std::sin(w * t);
      e[static_cast<std::size_t>(f / 250)] += re * re + im * im;
    }
    double mean = 0;
    for (auto& v : e) mean += (v = std::log(v)) / e.size();
    for (auto& v : e) v -= mean;
    return e;
  };
  auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += a[i] * b[i], na += a[i] * a[i], nb += b[i] * b[i];
    return d / std::sqrt(na * nb);
  };
  std::vector<std::vector<double>> feats;
  std::vector<std::size_t> who;
  for (std::size_t s = 0; s < 6; ++s)
    for (std::uint64_t u = 0; u < 4; ++u) {
      feats.push_back(bands(synth_utterance(make_profile(1, s), 0.5, 100 + 7 * s + u)));
      who.push_back(s);
    }
  double within = 0, across = 0;
  std::size_t nw = 0, na = 0;
  for (std::size_t i = 0; i < feats.size(); ++i)
    for (std::size_t j = 0; j < i; ++j) {
      const double c = cosine(feats[i], feats[j]);
      if (who[i] == who[j]) within += c, ++nw;
      else across += c, ++na;
    }
  INFO("within " << within / nw << " across " << across / na);
  CHECK(within / nw > across / na);
}
