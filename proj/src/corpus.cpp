#include "emovad/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "emovad/binary_io.hpp"
#include "emovad/rng.hpp"

namespace emovad::corpus {

using json = nlohmann::ordered_json;

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ConfigError("unknown split '" + std::string(s) + "' (expected train|val|test)");
}

void SynthSpec::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("corpus spec: " + msg); };
  if (dim < 1) fail("dim must be positive");
  if (t_min < 2 || t_min > t_max) fail("need 2 <= t_min <= t_max");
  if (!(nonspeech_ratio > 0.0 && nonspeech_ratio < 1.0)) fail("nonspeech_ratio must lie in (0,1)");
  if (!(extension_factor >= 1.0) || !std::isfinite(extension_factor)) fail("extension_factor must be >= 1");
  for (double s : snr_db_levels)
    if (!std::isfinite(s)) fail("snr levels must be finite");
  for (auto l : vad_info_layers)
    if (l >= nn::kNumLayers) fail("vad_info_layers entry out of range: " + std::to_string(l));
  for (auto l : emo_info_layers) {
    if (l >= nn::kNumLayers) fail("emo_info_layers entry out of range: " + std::to_string(l));
    if (vad_info_layers.count(l)) fail("vad_info_layers and emo_info_layers overlap at " + std::to_string(l));
  }
  if (emo_info_layers.empty()) fail("emo_info_layers is empty");
  if (!(noise_std > 0.0) || !std::isfinite(noise_std)) fail("noise_std must be positive");
  if (!std::isfinite(speech_gain) || !std::isfinite(emotion_gain)) fail("gains must be finite");
  if (!(mean_speech_run >= 1.0)) fail("mean_speech_run must be >= 1");
  if (dim < nn::kNumEmotions) fail("dim must be >= 4 for orthogonal emotion prototypes");
  // Shortest utterance must admit both frame kinds.
  auto n_ns = std::llround(nonspeech_ratio * static_cast<double>(t_min));
  if (n_ns < 1 || n_ns >= static_cast<long long>(t_min)) fail("nonspeech_ratio infeasible for t_min");
}

void to_json(json& j, const SynthSpec& s) {
  j = json{{"n_train", s.n_train},
           {"n_val", s.n_val},
           {"n_test", s.n_test},
           {"dim", s.dim},
           {"t_min", s.t_min},
           {"t_max", s.t_max},
           {"extension_factor", s.extension_factor},
           {"nonspeech_ratio", s.nonspeech_ratio},
           {"snr_db_levels", s.snr_db_levels},
           {"vad_info_layers", s.vad_info_layers},
           {"emo_info_layers", s.emo_info_layers},
           {"noise_std", s.noise_std},
           {"speech_gain", s.speech_gain},
           {"emotion_gain", s.emotion_gain},
           {"mean_speech_run", s.mean_speech_run},
           {"seed", s.seed}};
}

void from_json(const json& j, SynthSpec& s) {
  if (!j.is_object()) throw ConfigError("corpus spec must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    try {
      if (k == "n_train") s.n_train = v.get<std::size_t>();
      else if (k == "n_val") s.n_val = v.get<std::size_t>();
      else if (k == "n_test") s.n_test = v.get<std::size_t>();
      else if (k == "dim") s.dim = v.get<std::size_t>();
      else if (k == "t_min") s.t_min = v.get<std::size_t>();
      else if (k == "t_max") s.t_max = v.get<std::size_t>();
      else if (k == "extension_factor") s.extension_factor = v.get<double>();
      else if (k == "nonspeech_ratio") s.nonspeech_ratio = v.get<double>();
      else if (k == "snr_db_levels") s.snr_db_levels = v.get<std::vector<double>>();
      else if (k == "vad_info_layers") s.vad_info_layers = v.get<std::set<std::size_t>>();
      else if (k == "emo_info_layers") s.emo_info_layers = v.get<std::set<std::size_t>>();
      else if (k == "noise_std") s.noise_std = v.get<double>();
      else if (k == "speech_gain") s.speech_gain = v.get<double>();
      else if (k == "emotion_gain") s.emotion_gain = v.get<double>();
      else if (k == "mean_speech_run") s.mean_speech_run = v.get<double>();
      else if (k == "seed") s.seed = v.get<std::uint64_t>();
      else throw ConfigError("corpus spec: unknown key '" + k + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("corpus spec: bad value for '" + k + "': " + e.what());
    }
  }
}

namespace {

std::vector<float> unit_gaussian(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> v(dim);
  for (auto& x : v) x = n01(rng);
  double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

// Uniformly random composition of `total` into `parts` integers each >= min_each.
std::vector<std::size_t> random_composition(std::mt19937_64& rng, std::size_t total, std::size_t parts,
                                            std::size_t min_each) {
  const std::size_t free = total - parts * min_each;
  // Stars and bars: parts-1 bars among free+parts-1 slots.
  std::vector<std::size_t> slots(free + parts - 1);
  std::iota(slots.begin(), slots.end(), 0);
  std::vector<std::size_t> bars;
  std::sample(slots.begin(), slots.end(), std::back_inserter(bars), parts - 1, rng);
  std::vector<std::size_t> out(parts);
  std::size_t prev = 0;
  for (std::size_t i = 0; i < parts; ++i) {
    std::size_t end = i + 1 < parts ? bars[i] : slots.size();
    out[i] = end - prev + min_each;
    prev = end + 1;
  }
  return out;
}

}  // namespace

Prototypes make_prototypes(std::uint64_t seed, std::size_t dim) {
  if (dim < nn::kNumEmotions) throw ConfigError("prototype dim must be >= 4");
  auto rng = keyed_rng({seed, stream::kPrototypes});
  Prototypes p;
  p.speech = unit_gaussian(rng, dim);
  // Gram-Schmidt in double, then round once.
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<std::vector<double>> basis;
  for (std::size_t k = 0; k < nn::kNumEmotions; ++k) {
    std::vector<double> v(dim);
    for (auto& x : v) x = n01(rng);
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : basis) {
        double dot = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
        for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * b[i];
      }
    double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    for (auto& x : v) x /= norm;
    basis.push_back(v);
    p.emotions[k].assign(v.begin(), v.end());
  }
  return p;
}

std::size_t Utterance::speech_frames() const {
  return static_cast<std::size_t>(std::count(frame_labels.begin(), frame_labels.end(), 1));
}

void Utterance::validate() const {
  stack.validate();
  if (!frame_labels.empty()) {
    if (frame_labels.size() != num_frames())
      throw ShapeError(id + ": " + std::to_string(frame_labels.size()) + " frame labels for " +
                       std::to_string(num_frames()) + " frames");
    for (auto v : frame_labels)
      if (v > 1) throw ConfigError(id + ": frame label outside {0,1}");
  }
  if (emotion && (*emotion < 0 || *emotion >= static_cast<int>(nn::kNumEmotions)))
    throw ConfigError(id + ": emotion id out of range");
  if (snr_db && !std::isfinite(*snr_db)) throw ConfigError(id + ": non-finite snr");
}

std::vector<std::uint8_t> draw_frame_labels(std::size_t frames, double nonspeech_ratio, double mean_speech_run,
                                            std::uint64_t seed) {
  const auto n_ns = static_cast<std::size_t>(std::max(0LL, std::llround(nonspeech_ratio * double(frames))));
  if (n_ns == 0 || n_ns >= frames)
    throw ConfigError("cannot place " + std::to_string(n_ns) + " non-speech frames in an utterance of " +
                      std::to_string(frames) + " frames with both frame kinds present");
  const std::size_t n_s = frames - n_ns;
  std::size_t runs = std::max<std::size_t>(1, std::llround(double(n_s) / mean_speech_run));
  runs = std::min({runs, n_ns + 1, n_s});

  std::mt19937_64 rng(seed);
  auto speech = random_composition(rng, n_s, runs, 1);
  // Leading and trailing gaps may be empty; inner gaps separate runs.
  auto gaps = random_composition(rng, n_ns - (runs - 1), runs + 1, 0);
  for (std::size_t i = 1; i < runs; ++i) gaps[i] += 1;

  std::vector<std::uint8_t> labels;
  labels.reserve(frames);
  for (std::size_t r = 0; r <= runs; ++r) {
    labels.insert(labels.end(), gaps[r], nn::kNonSpeech);
    if (r < runs) labels.insert(labels.end(), speech[r], nn::kSpeech);
  }
  return labels;
}

Utterance generate_utterance(const SynthSpec& spec, const Prototypes& protos, std::size_t index) {
  auto rng = keyed_rng({spec.seed, stream::kUtterance, index});
  Utterance u;
  if (index < spec.n_train) {
    u.split = Split::kTrain;
  } else if (index < spec.n_train + spec.n_val) {
    u.split = Split::kVal;
    index -= spec.n_train;
  } else {
    u.split = Split::kTest;
    index -= spec.n_train + spec.n_val;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%05zu", std::string(split_name(u.split)).c_str(), index);
  u.id = buf;

  const int emotion = std::uniform_int_distribution<int>(0, nn::kNumEmotions - 1)(rng);
  u.emotion = emotion;
  const auto T = std::uniform_int_distribution<std::size_t>(spec.t_min, spec.t_max)(rng);
  u.frame_labels = draw_frame_labels(T, spec.nonspeech_ratio, spec.mean_speech_run, rng());

  const std::size_t D = spec.dim;
  Tensor<float> x({nn::kNumLayers, T, D});
  std::normal_distribution<double> base(0.0, spec.noise_std);
  auto data = x.data();
  for (std::size_t l = 0; l < nn::kNumLayers; ++l) {
    const bool vad = spec.vad_info_layers.count(l) > 0;
    const bool emo = spec.emo_info_layers.count(l) > 0;
    for (std::size_t t = 0; t < T; ++t) {
      const bool speech = u.frame_labels[t] == nn::kSpeech;
      float* row = data.data() + (l * T + t) * D;
      for (std::size_t d = 0; d < D; ++d) {
        double v = base(rng);
        if (vad && speech) v += spec.speech_gain * protos.speech[d];
        if (emo && speech) v += spec.emotion_gain * protos.emotions[emotion][d];
        row[d] = static_cast<float>(v);
      }
    }
  }
  u.stack.layers = std::move(x);
  return u;
}

std::vector<Utterance> generate_corpus(const SynthSpec& spec) {
  spec.validate();
  auto protos = make_prototypes(spec.seed, spec.dim);
  std::vector<Utterance> out;
  out.reserve(spec.total());
  for (std::size_t i = 0; i < spec.total(); ++i) out.push_back(generate_utterance(spec, protos, i));
  return out;
}

Utterance extend_utterance(const Utterance& u, double factor, std::uint64_t seed, double noise_std) {
  if (u.extended) throw ConfigError(u.id + ": utterance is already extended");
  if (!(factor > 1.0) || !std::isfinite(factor)) throw ConfigError("extension factor must be > 1");
  const std::size_t T = u.num_frames();
  const std::size_t D = u.stack.dim();
  const auto added = static_cast<std::size_t>(std::llround((factor - 1.0) * double(T)));

  auto rng = keyed_rng({seed, stream::kExtend});
  const auto front = std::uniform_int_distribution<std::size_t>(0, added)(rng);
  const std::size_t T2 = T + added;

  Utterance out = u;
  out.extended = true;
  if (added == 0) return out;

  Tensor<float> x({nn::kNumLayers, T2, D});
  std::normal_distribution<double> base(0.0, noise_std);
  auto src = u.stack.layers.data();
  auto dst = x.data();
  for (std::size_t l = 0; l < nn::kNumLayers; ++l) {
    for (std::size_t t = 0; t < T2; ++t) {
      float* row = dst.data() + (l * T2 + t) * D;
      if (t >= front && t < front + T) {
        std::copy_n(src.data() + (l * T + (t - front)) * D, D, row);
      } else {
        for (std::size_t d = 0; d < D; ++d) row[d] = static_cast<float>(base(rng));
      }
    }
  }
  out.stack.layers = std::move(x);
  if (!u.frame_labels.empty()) {
    out.frame_labels.assign(T2, nn::kNonSpeech);
    std::copy(u.frame_labels.begin(), u.frame_labels.end(), out.frame_labels.begin() + front);
  }
  return out;
}

double speech_power(const Utterance& u) {
  if (u.frame_labels.size() != u.num_frames())
    throw ConfigError(u.id + ": speech power needs frame labels");
  const std::size_t T = u.num_frames();
  const std::size_t D = u.stack.dim();
  auto x = u.stack.layers.data();
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t l = 0; l < nn::kNumLayers; ++l)
    for (std::size_t t = 0; t < T; ++t) {
      if (u.frame_labels[t] != nn::kSpeech) continue;
      const float* row = x.data() + (l * T + t) * D;
      for (std::size_t d = 0; d < D; ++d) sum += double(row[d]) * row[d];
      n += D;
    }
  return n ? sum / double(n) : 0.0;
}

Utterance mix_noise(const Utterance& u, double snr_db, std::uint64_t seed) {
  if (!std::isfinite(snr_db)) throw ConfigError("snr must be finite");
  const double ps = speech_power(u);
  if (!(ps > 0.0)) throw NumericError(u.id + ": zero-energy speech signal, cannot set an SNR");
  const double pn = ps / std::pow(10.0, snr_db / 10.0);
  auto rng = keyed_rng({seed, stream::kNoise});
  std::normal_distribution<double> noise(0.0, std::sqrt(pn));
  Utterance out = u;
  for (auto& v : out.stack.layers.storage()) v = static_cast<float>(double(v) + noise(rng));
  out.snr_db = snr_db;
  return out;
}

namespace {

std::uint64_t id_key(std::string_view id) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : id) h = (h ^ c) * 1099511628211ull;
  return h;
}

}  // namespace

Utterance make_variant(const Utterance& u, const SynthSpec& spec, std::optional<double> snr_db) {
  const auto key = id_key(u.id);
  Utterance out = spec.extension_factor > 1.0
                      ? extend_utterance(u, spec.extension_factor, keyed_rng({spec.seed, stream::kExtend, key})(),
                                         spec.noise_std)
                      : u;
  out.extended = true;
  if (snr_db) {
    const auto level = static_cast<std::uint64_t>(std::llround(*snr_db * 1000.0));
    out = mix_noise(out, *snr_db, keyed_rng({spec.seed, stream::kNoise, key, level})());
  }
  return out;
}

Utterance make_noisy_training_variant(const Utterance& u, const SynthSpec& spec) {
  if (spec.snr_db_levels.empty()) throw ConfigError("corpus spec: no SNR levels to draw from");
  auto rng = keyed_rng({spec.seed, stream::kNoise, id_key(u.id)});
  const auto pick = std::uniform_int_distribution<std::size_t>(0, spec.snr_db_levels.size() - 1)(rng);
  return make_variant(u, spec, spec.snr_db_levels[pick]);
}

std::vector<std::uint8_t> encode_feature_file(const Utterance& u) {
  u.validate();
  io::ByteWriter w;
  w.bytes(std::string_view("SSLF"));
  w.u32(kSslfVersion);
  w.u32(static_cast<std::uint32_t>(u.stack.num_layers()));
  w.u32(static_cast<std::uint32_t>(u.num_frames()));
  w.u32(static_cast<std::uint32_t>(u.stack.dim()));
  std::uint32_t flags = 0;
  if (!u.frame_labels.empty()) flags |= kFlagFrameLabels;
  if (u.emotion) flags |= kFlagEmotion;
  w.u32(flags);
  for (float v : u.stack.layers.data()) w.f32(v);
  if (flags & kFlagFrameLabels) w.bytes(std::span<const std::uint8_t>(u.frame_labels));
  if (flags & kFlagEmotion) w.u8(static_cast<std::uint8_t>(*u.emotion));
  json meta{{"id", u.id},
            {"snr_db", u.snr_db ? json(*u.snr_db) : json(nullptr)},
            {"split", split_name(u.split)},
            {"frame_period_ms", nn::kFramePeriodMs},
            {"extended", u.extended}};
  auto text = meta.dump();
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  return w.take();
}

Utterance decode_feature_file(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.str(4) != "SSLF") throw ParseError("bad magic, expected \"SSLF\"", 0);
  const auto version_at = r.offset();
  if (auto v = r.u32(); v != kSslfVersion)
    throw ParseError("unsupported feature file version " + std::to_string(v), version_at);
  const auto l_at = r.offset();
  const std::uint32_t L = r.u32();
  if (L != nn::kNumLayers)
    throw ParseError("layer count " + std::to_string(L) + " does not match the expected 13", l_at);
  const auto t_at = r.offset();
  const std::uint32_t T = r.u32();
  if (T == 0) throw ParseError("frame count is zero", t_at);
  const auto d_at = r.offset();
  const std::uint32_t D = r.u32();
  if (D == 0) throw ParseError("feature dim is zero", d_at);
  const auto f_at = r.offset();
  const std::uint32_t flags = r.u32();
  if (flags & ~(kFlagFrameLabels | kFlagEmotion)) throw ParseError("unknown flag bits", f_at);

  const std::uint64_t count = std::uint64_t(L) * T * D;
  if (count * 4 > r.remaining())
    throw ParseError("truncated payload: " + std::to_string(count * 4) + " bytes declared, " +
                         std::to_string(r.remaining()) + " present",
                     r.offset());
  Utterance u;
  std::vector<float> values(count);
  for (auto& v : values) {
    const auto at = r.offset();
    v = r.f32();
    if (!std::isfinite(v)) throw ParseError("non-finite feature value", at);
  }
  u.stack.layers = Tensor<float>({L, T, D}, std::move(values));
  if (flags & kFlagFrameLabels) {
    const auto at = r.offset();
    auto raw = r.raw(T);
    for (std::size_t i = 0; i < T; ++i)
      if (raw[i] > 1) throw ParseError("frame label outside {0,1}", at + i);
    u.frame_labels.assign(raw.begin(), raw.end());
  }
  if (flags & kFlagEmotion) {
    const auto at = r.offset();
    const auto e = r.u8();
    if (e >= nn::kNumEmotions) throw ParseError("emotion id " + std::to_string(e) + " out of range", at);
    u.emotion = e;
  }
  const auto len = r.u32();
  const auto json_at = r.offset();
  auto text = r.str(len);
  if (r.remaining() != 0) throw ParseError("trailing bytes after metadata", r.offset());
  json meta;
  try {
    meta = json::parse(text);
    if (!meta.is_object()) throw ParseError("metadata is not a JSON object", json_at);
    u.id = meta.value("id", std::string());
    if (meta.contains("snr_db") && !meta["snr_db"].is_null()) u.snr_db = meta["snr_db"].get<double>();
    if (meta.contains("split")) u.split = parse_split(meta["split"].get<std::string>());
    else u.split = Split::kTest;
    u.extended = meta.value("extended", false);
    if (meta.contains("frame_period_ms") && meta["frame_period_ms"].get<double>() != nn::kFramePeriodMs)
      throw ParseError("frame period must be 20 ms", json_at);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad metadata: ") + e.what(), json_at);
  } catch (const ConfigError& e) {
    throw ParseError(std::string("bad metadata: ") + e.what(), json_at);
  }
  return u;
}

void write_feature_file(const Utterance& u, const std::filesystem::path& path) {
  io::write_file(path, encode_feature_file(u));
}

Utterance read_feature_file(const std::filesystem::path& path) {
  auto bytes = io::read_file(path);
  try {
    return decode_feature_file(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.detail(), e.offset());
  }
}

}  // namespace emovad::corpus
