#include "emovad/metrics.hpp"

#include <fstream>

#include "emovad/binary_io.hpp"

namespace emovad::metrics {

using json = nlohmann::ordered_json;

SerMetrics ser_metrics(std::span<const int> preds, std::span<const int> labels) {
  if (preds.empty()) throw Error("ser_metrics: empty input");
  if (preds.size() != labels.size())
    throw Error("ser_metrics: " + std::to_string(preds.size()) + " predictions for " +
                std::to_string(labels.size()) + " labels");
  SerMetrics m;
  m.n = preds.size();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] >= int(kClasses) || labels[i] < 0 || labels[i] >= int(kClasses))
      throw Error("ser_metrics: class id out of range at index " + std::to_string(i));
    ++m.confusion[labels[i]][preds[i]];
  }
  std::size_t correct = 0;
  double recall_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < kClasses; ++c) {
    correct += m.confusion[c][c];
    std::size_t support = 0;
    for (auto v : m.confusion[c]) support += v;
    if (support == 0) continue;
    m.recalls[c] = double(m.confusion[c][c]) / double(support);
    recall_sum += *m.recalls[c];
    ++present;
  }
  m.wa = double(correct) / double(m.n);
  m.ua = recall_sum / double(present);
  return m;
}

void VadTally::add(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  if (pred.size() != truth.size())
    throw Error("vad_metrics: mask lengths differ (" + std::to_string(pred.size()) + " vs " +
                std::to_string(truth.size()) + ")");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, t = truth[i] != 0;
    if (p && t) ++tp;
    else if (!p && !t) ++tn;
    else if (p) ++fp;
    else ++fn;
  }
}

VadMetrics VadTally::finish() const {
  const std::size_t n = tp + tn + fp + fn;
  if (n == 0) throw Error("vad_metrics: empty input");
  VadMetrics m;
  m.tp = tp, m.tn = tn, m.fp = fp, m.fn = fn;
  m.accuracy = double(tp + tn) / double(n);
  m.precision = tp + fp ? double(tp) / double(tp + fp) : 1.0;
  m.recall = tp + fn ? double(tp) / double(tp + fn) : 1.0;
  return m;
}

VadMetrics vad_metrics(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  VadTally t;
  t.add(pred, truth);
  return t.finish();
}

json to_json(const SerMetrics& m) {
  json recalls = json::object();
  for (std::size_t c = 0; c < kClasses; ++c)
    recalls[std::string(nn::emotion_name(int(c)))] = m.recalls[c] ? json(*m.recalls[c]) : json(nullptr);
  json conf = json::array();
  for (const auto& row : m.confusion) conf.push_back(row);
  return json{{"ua", m.ua}, {"wa", m.wa}, {"recalls", recalls}, {"confusion", conf}, {"n_utterances", m.n}};
}

json to_json(const VadMetrics& m) {
  return json{{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall},
              {"tp", m.tp},             {"tn", m.tn},               {"fp", m.fp},
              {"fn", m.fn}};
}

json featurizer_weights_json(const pipeline::PipelineParams<float>& p) {
  json instances = json::array();
  auto add = [&](const char* role, const nn::FeaturizerParams<float>& f) {
    instances.push_back(json{{"role", role}, {"weights", f.normalized_weights()}});
  };
  if (p.shared_featurizer) {
    add("shared", p.feat_vad);
  } else {
    add("vad", p.feat_vad);
    add("ser", p.feat_ser);
  }
  return json{{"v", 1}, {"num_layers", nn::kNumLayers}, {"featurizers", instances}};
}

void export_featurizer_weights(const pipeline::PipelineParams<float>& p, const std::filesystem::path& path) {
  write_json(featurizer_weights_json(p), path);
}

json vad_timeline_json(const corpus::Utterance& u, const pipeline::PipelineOutput& out) {
  const std::size_t T = u.num_frames();
  if (out.hard_mask.size() != T || out.vad_probs.size() != 2 * T)
    throw ShapeError(u.id + ": timeline needs a VAD output of " + std::to_string(T) + " frames");
  if (!u.frame_labels.empty() && u.frame_labels.size() != T)
    throw ShapeError(u.id + ": frame label count differs from frame count");
  json rows = json::array();
  for (std::size_t t = 0; t < T; ++t) {
    rows.push_back(json{{"frame", t},
                        {"oracle", u.frame_labels.empty() ? json(nullptr) : json(u.frame_labels[t])},
                        {"pred", out.hard_mask[t]},
                        {"p_speech", out.vad_probs.at(t, nn::kSpeech)}});
  }
  return json{{"v", 1},
              {"id", u.id},
              {"frame_period_ms", nn::kFramePeriodMs},
              {"snr_db", u.snr_db ? json(*u.snr_db) : json(nullptr)},
              {"rows", rows}};
}

void export_vad_timeline(const corpus::Utterance& u, const pipeline::PipelineOutput& out,
                         const std::filesystem::path& path) {
  write_json(vad_timeline_json(u, out), path);
}

void write_json(const json& j, const std::filesystem::path& path) {
  auto text = j.dump(2) + "\n";
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace emovad::metrics
