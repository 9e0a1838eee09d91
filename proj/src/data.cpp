#include "rawnext/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "rawnext/tensor.hpp"

namespace rawnext {

namespace fs = std::filesystem;

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t state = 0x9E3779B97F4A7C15ull;
  for (std::uint64_t p : parts) {
    state ^= p + 0x9E3779B97F4A7C15ull + (state << 6) + (state >> 2);
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    state = z ^ (z >> 31);
  }
  return state;
}

void CorpusSpec::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("data: " + what); };
  if (n_speakers < 2) fail("n_speakers must be >= 2");
  if (utts_per_speaker < 1) fail("utts_per_speaker must be >= 1");
  if (!(duration_min_s > 0) || !(duration_max_s >= duration_min_s)) fail("durations must satisfy 0 < min <= max");
  if (sample_rate != kSampleRate) fail("sample_rate must be 16000");
  if (!(snr_max_db >= snr_min_db)) fail("snr range must satisfy min <= max");
  if (eval_speakers == 1) fail("eval_speakers must be 0 or >= 2");
  if (eval_speakers > 0 && eval_utts_per_speaker < 2) fail("eval_utts_per_speaker must be >= 2");
}

namespace {

SpeakerProfile draw_profile(std::uint64_t corpus_seed, std::size_t index, std::size_t attempt) {
  std::mt19937_64 rng(mix_seed({corpus_seed, index, attempt, 0x70F11Eull}));
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  SpeakerProfile p;
  char id[32];
  std::snprintf(id, sizeof id, "spk%03zu", index);
  p.id = id;
  p.index = index;
  p.fundamental_hz = uniform(90.0, 260.0);
  constexpr std::array<std::array<double, 2>, 3> ranges{{{300, 900}, {900, 2400}, {2400, 3600}}};
  for (std::size_t i = 0; i < 3; ++i) {
    p.resonance_hz[i] = uniform(ranges[i][0], ranges[i][1]);
    p.bandwidth_hz[i] = uniform(60.0, 200.0);
    p.resonance_gain[i] = uniform(0.3, 0.8);
  }
  p.tilt = uniform(1.4, 2.2);
  p.seed = mix_seed({corpus_seed, index, 0x5EEDull});
  return p;
}

bool distinct(const SpeakerProfile& a, const SpeakerProfile& b) {
  for (std::size_t i = 0; i < 3; ++i)
    if (std::abs(a.resonance_hz[i] - b.resonance_hz[i]) >= 50.0) return true;
  return false;
}

}  // namespace

std::vector<SpeakerProfile> make_profiles(std::uint64_t corpus_seed, std::size_t first, std::size_t count) {
  // Each profile is re-drawn until it is distinct from every lower index, so
  // profile k depends only on (seed, k).
  std::vector<SpeakerProfile> all;
  for (std::size_t k = 0; k < first + count; ++k) {
    for (std::size_t attempt = 0;; ++attempt) {
      auto candidate = draw_profile(corpus_seed, k, attempt);
      if (std::all_of(all.begin(), all.end(), [&](const auto& q) { return distinct(candidate, q); })) {
        all.push_back(std::move(candidate));
        break;
      }
    }
  }
  return {all.begin() + static_cast<std::ptrdiff_t>(first), all.end()};
}

SpeakerProfile make_profile(std::uint64_t corpus_seed, std::size_t index) {
  return make_profiles(corpus_seed, index, 1).front();
}

std::vector<float> synth_utterance(const SpeakerProfile& profile, double duration_s, std::uint64_t utt_seed,
                                   const SynthOptions& options) {
  const double sr = options.sample_rate;
  const std::size_t n = static_cast<std::size_t>(std::lround(duration_s * sr));
  if (n == 0) return {};
  std::mt19937_64 rng(mix_seed({profile.seed, utt_seed}));
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  constexpr double two_pi = 2.0 * std::numbers::pi;

  // Per-utterance articulation: small resonance shifts, vibrato, pitch jitter.
  std::array<double, 3> centre{};
  for (std::size_t i = 0; i < 3; ++i) centre[i] = profile.resonance_hz[i] * (1.0 + uniform(-0.04, 0.04));
  const double vib_rate = uniform(4.0, 6.0);
  const double vib_depth = uniform(0.002, 0.005);
  const double vib_phase = uniform(0.0, two_pi);

  const std::size_t jitter_hop = static_cast<std::size_t>(sr / 100);
  std::vector<double> jitter_knots(n / jitter_hop + 2);
  std::normal_distribution<double> jitter_dist(0.0, 0.002);
  for (auto& k : jitter_knots) k = jitter_dist(rng);

  const double f0 = profile.fundamental_hz;
  const std::size_t harmonics = std::min<std::size_t>(24, static_cast<std::size_t>(7000.0 / f0));
  std::vector<double> amp(harmonics + 1);
  for (std::size_t h = 1; h <= harmonics; ++h) amp[h] = 1.0 / std::pow(static_cast<double>(h), profile.tilt);

  std::vector<double> source(n);
  double phase = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double pos = static_cast<double>(t) / jitter_hop;
    const std::size_t k = static_cast<std::size_t>(pos);
    const double frac = pos - k;
    const double jitter = jitter_knots[k] * (1 - frac) + jitter_knots[k + 1] * frac;
    const double vibrato = vib_depth * std::sin(two_pi * vib_rate * t / sr + vib_phase);
    phase = std::fmod(phase + two_pi * f0 * (1.0 + vibrato + jitter) / sr, two_pi);
    // sin(h*phase) by the Chebyshev recurrence.
    const double c2 = 2.0 * std::cos(phase);
    double prev = 0.0, cur = std::sin(phase), acc = amp[1] * cur;
    for (std::size_t h = 2; h <= harmonics; ++h) {
      const double next = c2 * cur - prev;
      prev = cur;
      cur = next;
      acc += amp[h] * cur;
    }
    source[t] = acc;
  }

  // Source plus band-pass resonances (RBJ, 0 dB peak).
  std::vector<double> y = source;
  for (std::size_t i = 0; i < 3; ++i) {
    const double w0 = two_pi * centre[i] / sr;
    const double q = centre[i] / profile.bandwidth_hz[i];
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    const double b0 = alpha / a0, b2 = -alpha / a0;
    const double a1 = -2.0 * std::cos(w0) / a0, a2 = (1.0 - alpha) / a0;
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const double x0 = source[t];
      const double out = b0 * x0 + b2 * x2 - a1 * y1 - a2 * y2;
      x2 = x1;
      x1 = x0;
      y2 = y1;
      y1 = out;
      y[t] += profile.resonance_gain[i] * out;
    }
  }

  // Syllabic envelope: raised-sine bumps of random length and level.
  std::size_t t = 0;
  while (t < n) {
    const std::size_t len = std::max<std::size_t>(1, static_cast<std::size_t>(uniform(0.12, 0.35) * sr));
    const double level = uniform(0.35, 1.0);
    for (std::size_t i = 0; i < len && t < n; ++i, ++t) {
      const double s = std::sin(std::numbers::pi * (i + 0.5) / len);
      y[t] *= level * (0.2 + 0.8 * s * s);
    }
  }

  if (options.add_noise) {
    double power = 0;
    for (double v : y) power += v * v;
    power /= static_cast<double>(n);
    const double snr = uniform(options.snr_min_db, options.snr_max_db);
    std::normal_distribution<double> noise(0.0, std::sqrt(power / std::pow(10.0, snr / 10.0)));
    for (double& v : y) v += noise(rng);
  }

  double peak = 0;
  for (double v : y) peak = std::max(peak, std::abs(v));
  std::vector<float> out(n);
  const double gain = peak > 0 ? 0.9 / peak : 0.0;
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(y[i] * gain);
  return out;
}

std::vector<std::vector<std::size_t>> Corpus::by_speaker() const {
  std::vector<std::vector<std::size_t>> groups(speakers.size());
  for (std::size_t i = 0; i < utterances.size(); ++i) groups.at(utterances[i].speaker_index).push_back(i);
  return groups;
}

Corpus synth_corpus(const CorpusSpec& spec, std::size_t first_speaker, std::size_t count, std::size_t utts) {
  const auto profiles = make_profiles(spec.seed, first_speaker, count);
  Corpus corpus;
  for (const auto& p : profiles) corpus.speakers.push_back(p.id);
  corpus.utterances.resize(count * utts);
  SynthOptions options;
  options.sample_rate = spec.sample_rate;
  options.snr_min_db = spec.snr_min_db;
  options.snr_max_db = spec.snr_max_db;

#pragma omp parallel for schedule(dynamic)
  for (std::size_t k = 0; k < count * utts; ++k) {
    const std::size_t s = k / utts, u = k % utts;
    const auto& profile = profiles[s];
    std::mt19937_64 rng(mix_seed({spec.seed, profile.index, u, 0xD0Aull}));
    const double duration = std::uniform_real_distribution<double>(spec.duration_min_s, spec.duration_max_s)(rng);
    const std::uint64_t utt_seed = rng();
    char name[64];
    std::snprintf(name, sizeof name, "%s/utt%03zu.wav", profile.id.c_str(), u);
    auto& utt = corpus.utterances[k];
    utt.path = name;
    utt.speaker = profile.id;
    utt.speaker_index = s;
    utt.samples = synth_utterance(profile, duration, utt_seed, options);
  }
  return corpus;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  char buf[64];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "%.9g", e.duration_s);
    out << e.path << ' ' << e.speaker << ' ' << buf << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + path.string());
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    ManifestEntry e;
    if (!(fields >> e.path >> e.speaker >> e.duration_s))
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected '<path> <speaker> <duration_s>'");
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ManifestEntry> write_corpus(const Corpus& corpus, const fs::path& root, std::uint32_t sample_rate) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root)) throw IoError("cannot create corpus directory " + root.string());
  std::vector<ManifestEntry> manifest;
  for (const auto& utt : corpus.utterances) {
    const fs::path file = root / utt.path;
    fs::create_directories(file.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + file.parent_path().string());
    write_wav(file, utt.samples, sample_rate);
    manifest.push_back({utt.path, utt.speaker, static_cast<double>(utt.samples.size()) / sample_rate});
  }
  write_manifest(root / "manifest.txt", manifest);
  return manifest;
}

Corpus load_corpus(const fs::path& root) {
  const auto manifest = read_manifest(root / "manifest.txt");
  Corpus corpus;
  std::map<std::string, std::size_t> labels;
  for (const auto& e : manifest) {
    auto [it, added] = labels.emplace(e.speaker, corpus.speakers.size());
    if (added) corpus.speakers.push_back(e.speaker);
    corpus.utterances.push_back({e.path, e.speaker, it->second, read_wav(root / e.path)});
  }
  return corpus;
}

void build_corpus(const CorpusSpec& spec, const fs::path& root) {
  spec.validate();
  write_corpus(synth_corpus(spec, 0, spec.n_speakers, spec.utts_per_speaker), root / "train", spec.sample_rate);
  if (spec.eval_speakers == 0) return;
  const auto eval_manifest = write_corpus(
      synth_corpus(spec, spec.n_speakers, spec.eval_speakers, spec.eval_utts_per_speaker), root / "eval",
      spec.sample_rate);
  write_trials(root / "eval" / "trials.txt", build_trials(eval_manifest, spec.n_trials, mix_seed({spec.seed, 0x7121ull})));
}

std::vector<TrialPair> build_trials(const std::vector<ManifestEntry>& manifest, std::size_t n_pairs,
                                    std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < manifest.size(); ++i) groups[manifest[i].speaker].push_back(i);
  if (groups.size() < 2) throw std::invalid_argument("trials need at least two speakers");

  std::vector<const std::vector<std::size_t>*> multi;
  std::size_t target_capacity = 0;
  for (const auto& [_, g] : groups) {
    if (g.size() >= 2) multi.push_back(&g);
    target_capacity += g.size() * (g.size() - 1) / 2;
  }
  const std::size_t total = manifest.size() * (manifest.size() - 1) / 2;
  const std::size_t n_target = n_pairs - n_pairs / 2;
  const std::size_t n_nontarget = n_pairs / 2;
  if (n_target > target_capacity || n_nontarget > total - target_capacity)
    throw std::invalid_argument("insufficient utterances for " + std::to_string(n_pairs) + " distinct trial pairs");

  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t size) { return std::uniform_int_distribution<std::size_t>(0, size - 1)(rng); };
  std::set<std::pair<std::size_t, std::size_t>> used;
  std::vector<TrialPair> trials;
  auto add = [&](std::size_t a, std::size_t b, bool target) {
    if (a == b || !used.insert({std::min(a, b), std::max(a, b)}).second) return false;
    trials.push_back({target, manifest[a].path, manifest[b].path});
    return true;
  };
  for (std::size_t made = 0; made < n_target;) {
    const auto& g = *multi[pick(multi.size())];
    if (add(g[pick(g.size())], g[pick(g.size())], true)) ++made;
  }
  for (std::size_t made = 0; made < n_nontarget;) {
    const std::size_t a = pick(manifest.size()), b = pick(manifest.size());
    if (manifest[a].speaker != manifest[b].speaker && add(a, b, false)) ++made;
  }
  std::shuffle(trials.begin(), trials.end(), rng);
  return trials;
}

void write_trials(const fs::path& path, const std::vector<TrialPair>& trials) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write trials " + path.string());
  for (const auto& t : trials) out << (t.target ? 1 : 0) << ' ' << t.enroll << ' ' << t.test << '\n';
  if (!out) throw IoError("failed writing trials " + path.string());
}

std::vector<TrialPair> read_trials(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read trials " + path.string());
  std::vector<TrialPair> trials;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    int label = -1;
    TrialPair t;
    if (!(fields >> label >> t.enroll >> t.test) || (label != 0 && label != 1))
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected '<0|1> <enroll> <test>'");
    t.target = label == 1;
    trials.push_back(std::move(t));
  }
  return trials;
}

// ---- RIFF/WAVE -------------------------------------------------------------

namespace {

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}
std::uint32_t get_u32(const std::uint8_t* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

}  // namespace

std::vector<std::uint8_t> encode_wav(const std::vector<float>& samples, std::uint32_t sample_rate) {
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::vector<std::uint8_t> b;
  b.reserve(44 + data_bytes);
  for (char c : std::string("RIFF")) b.push_back(static_cast<std::uint8_t>(c));
  put_u32(b, 36 + data_bytes);
  for (char c : std::string("WAVEfmt ")) b.push_back(static_cast<std::uint8_t>(c));
  put_u32(b, 16);
  put_u16(b, 1);  // PCM
  put_u16(b, 1);  // mono
  put_u32(b, sample_rate);
  put_u32(b, sample_rate * 2);
  put_u16(b, 2);
  put_u16(b, 16);
  for (char c : std::string("data")) b.push_back(static_cast<std::uint8_t>(c));
  put_u32(b, data_bytes);
  for (float x : samples) {
    const long s = std::clamp(std::lround(static_cast<double>(x) * 32768.0), -32768L, 32767L);
    put_u16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(s)));
  }
  return b;
}

std::vector<float> decode_wav(const std::vector<std::uint8_t>& bytes, std::uint32_t expected_rate,
                              const std::string& name) {
  auto fail = [&](const std::string& what) -> void { throw IoError(name + ": " + what); };
  auto tag = [&](std::size_t at, const char* want) { return std::equal(want, want + 4, bytes.begin() + at); };
  if (bytes.size() < 12) fail("truncated RIFF header");
  if (!tag(0, "RIFF") || !tag(8, "WAVE")) fail("not a RIFF/WAVE file");

  bool have_fmt = false;
  std::size_t pos = 12;
  while (true) {
    if (pos + 8 > bytes.size()) fail(have_fmt ? "missing data chunk (truncated)" : "missing fmt chunk (truncated)");
    const std::uint32_t size = get_u32(&bytes[pos + 4]);
    const std::size_t body = pos + 8;
    if (tag(pos, "fmt ")) {
      if (size < 16 || body + size > bytes.size()) fail("truncated fmt chunk");
      const std::uint16_t format = get_u16(&bytes[body]);
      const std::uint16_t channels = get_u16(&bytes[body + 2]);
      const std::uint32_t rate = get_u32(&bytes[body + 4]);
      const std::uint16_t bits = get_u16(&bytes[body + 14]);
      if (format != 1) fail("audio format: expected 1 (PCM), got " + std::to_string(format));
      if (channels != 1) fail("channels: expected 1, got " + std::to_string(channels));
      if (rate != expected_rate)
        fail("sample rate: expected " + std::to_string(expected_rate) + ", got " + std::to_string(rate));
      if (bits != 16) fail("bits per sample: expected 16, got " + std::to_string(bits));
      have_fmt = true;
    } else if (tag(pos, "data")) {
      if (!have_fmt) fail("data chunk before fmt chunk");
      if (body + size > bytes.size()) fail("truncated data chunk");
      if (size % 2) fail("data chunk size is not a whole number of samples");
      std::vector<float> samples(size / 2);
      for (std::size_t i = 0; i < samples.size(); ++i)
        samples[i] = static_cast<float>(static_cast<std::int16_t>(get_u16(&bytes[body + 2 * i]))) / 32768.0f;
      return samples;
    }
    pos = body + size + (size & 1);
  }
}

void write_wav(const fs::path& path, const std::vector<float>& samples, std::uint32_t sample_rate) {
  const auto bytes = encode_wav(samples, sample_rate);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<float> read_wav(const fs::path& path, std::uint32_t expected_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(bytes, expected_rate, path.string());
}

}  // namespace rawnext
