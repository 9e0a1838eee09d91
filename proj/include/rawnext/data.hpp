#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rawnext {

inline constexpr std::uint32_t kSampleRate = 16000;

/// Deterministic 64-bit seed derivation (splitmix64 over the parts).
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

struct SpeakerProfile {
  std::string id;
  std::size_t index = 0;
  double fundamental_hz = 0;
  std::array<double, 3> resonance_hz{};
  std::array<double, 3> bandwidth_hz{};
  std::array<double, 3> resonance_gain{};
  double tilt = 0;
  std::uint64_t seed = 0;
};

struct CorpusSpec {
  std::size_t n_speakers = 20;
  std::size_t utts_per_speaker = 50;
  double duration_min_s = 2.0;
  double duration_max_s = 8.0;
  std::uint32_t sample_rate = kSampleRate;
  double snr_min_db = 10.0;
  double snr_max_db = 30.0;
  std::uint64_t seed = 1;
  // Held-out speakers for verification trials (profile indices follow the
  // training speakers).
  std::size_t eval_speakers = 10;
  std::size_t eval_utts_per_speaker = 10;
  std::size_t n_trials = 400;

  void validate() const;
};

/// Profile of speaker `index`; a pure function of (corpus seed, index).
/// Distinct indices differ by >= 50 Hz in at least one resonance.
SpeakerProfile make_profile(std::uint64_t corpus_seed, std::size_t index);
std::vector<SpeakerProfile> make_profiles(std::uint64_t corpus_seed, std::size_t first, std::size_t count);

struct SynthOptions {
  std::uint32_t sample_rate = kSampleRate;
  bool add_noise = true;
  double snr_min_db = 10.0;
  double snr_max_db = 30.0;
};

/// Harmonic source at a slightly jittered fundamental, shaped by the
/// profile's resonances and a syllabic envelope, optionally with white noise.
/// Peak-normalised to 0.9.
std::vector<float> synth_utterance(const SpeakerProfile& profile, double duration_s, std::uint64_t utt_seed,
                                   const SynthOptions& options = {});

struct Utterance {
  std::string path;  // relative to the corpus root
  std::string speaker;
  std::size_t speaker_index = 0;  // dense label within the corpus
  std::vector<float> samples;
};

struct Corpus {
  std::vector<std::string> speakers;
  std::vector<Utterance> utterances;

  std::size_t speaker_count() const { return speakers.size(); }
  /// Utterance indices grouped by dense speaker label.
  std::vector<std::vector<std::size_t>> by_speaker() const;
};

/// Synthesises `count` speakers starting at profile index `first_speaker`.
Corpus synth_corpus(const CorpusSpec& spec, std::size_t first_speaker, std::size_t count, std::size_t utts);

struct ManifestEntry {
  std::string path;
  std::string speaker;
  double duration_s = 0;
};

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Writes speaker_id/utt_id.wav files plus manifest.txt under `root`.
std::vector<ManifestEntry> write_corpus(const Corpus& corpus, const std::filesystem::path& root,
                                        std::uint32_t sample_rate = kSampleRate);
/// Loads every manifest entry under `root`; speaker labels follow first appearance.
Corpus load_corpus(const std::filesystem::path& root);

/// Training corpus under root/train, held-out corpus and trials.txt under root/eval.
void build_corpus(const CorpusSpec& spec, const std::filesystem::path& root);

struct TrialPair {
  bool target = false;
  std::string enroll;
  std::string test;
};

/// Balanced target / nontarget pairs over distinct utterances.
std::vector<TrialPair> build_trials(const std::vector<ManifestEntry>& manifest, std::size_t n_pairs,
                                    std::uint64_t seed);
void write_trials(const std::filesystem::path& path, const std::vector<TrialPair>& trials);
std::vector<TrialPair> read_trials(const std::filesystem::path& path);

/// 16-bit mono PCM RIFF/WAVE. Samples are scaled by 32768 and clamped.
void write_wav(const std::filesystem::path& path, const std::vector<float>& samples,
               std::uint32_t sample_rate = kSampleRate);
std::vector<float> read_wav(const std::filesystem::path& path, std::uint32_t expected_rate = kSampleRate);
std::vector<std::uint8_t> encode_wav(const std::vector<float>& samples, std::uint32_t sample_rate);
std::vector<float> decode_wav(const std::vector<std::uint8_t>& bytes, std::uint32_t expected_rate,
                              const std::string& name = "<memory>");

}  // namespace rawnext
