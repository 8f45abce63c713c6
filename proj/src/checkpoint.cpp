#include "emovad/checkpoint.hpp"

#include <set>

#include "emovad/binary_io.hpp"

namespace emovad::train {

using json = nlohmann::ordered_json;
using grad::Tensor;
using pipeline::Group;

namespace {

constexpr std::uint32_t kMaxNameLength = 4096;
constexpr char kModel[] = "model";
constexpr char kCurrent[] = "current";
constexpr char kAdamM[] = "adam.m";
constexpr char kAdamV[] = "adam.v";

}  // namespace

const Tensor<float>* Archive::find(std::string_view name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e.tensor;
  return nullptr;
}

const Tensor<float>& Archive::at(std::string_view name) const {
  if (const auto* t = find(name)) return *t;
  throw InputError("checkpoint has no entry '" + std::string(name) + "'");
}

void Archive::add(std::string name, Tensor<float> t) {
  if (find(name)) throw Error("duplicate checkpoint entry '" + name + "'");
  entries.push_back({std::move(name), std::move(t)});
}

std::vector<std::uint8_t> encode_ntar(const Archive& a) {
  io::ByteWriter w;
  w.bytes(std::string_view("NTAR"));
  w.u32(kNtarVersion);
  w.u32(static_cast<std::uint32_t>(a.entries.size()));
  for (const auto& e : a.entries) {
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name);
    w.u32(static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto d : e.tensor.dims()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : e.tensor.data()) w.f32(v);
  }
  auto text = a.meta.dump();
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  return w.take();
}

Archive decode_ntar(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.str(4) != "NTAR") throw ParseError("bad magic, expected \"NTAR\"", 0);
  const auto version_at = r.offset();
  if (auto v = r.u32(); v != kNtarVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(v), version_at);
  const auto count = r.u32();
  Archive a;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_at = r.offset();
    const auto len = r.u32();
    if (len == 0 || len > kMaxNameLength) throw ParseError("bad entry name length " + std::to_string(len), name_at);
    auto name = r.str(len);
    if (!seen.insert(name).second) throw ParseError("duplicate entry '" + name + "'", name_at);
    const auto rank_at = r.offset();
    const auto rank = r.u32();
    if (rank < 1 || rank > grad::kMaxRank)
      throw ParseError("entry '" + name + "' has unsupported rank " + std::to_string(rank), rank_at);
    grad::Dims dims(rank);
    std::uint64_t n = 1;
    for (auto& d : dims) {
      const auto at = r.offset();
      d = r.u32();
      if (d == 0) throw ParseError("entry '" + name + "' has a zero dimension", at);
      n *= d;
    }
    if (n * 4 > r.remaining())
      throw ParseError("truncated payload of entry '" + name + "'", r.offset());
    grad::Buffer<float> values(n);
    for (auto& v : values) v = r.f32();
    a.entries.push_back({std::move(name), Tensor<float>(std::move(dims), std::move(values))});
  }
  const auto len = r.u32();
  const auto json_at = r.offset();
  auto text = r.str(len);
  if (r.remaining() != 0) throw ParseError("trailing bytes after metadata", r.offset());
  try {
    a.meta = json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad metadata: ") + e.what(), json_at);
  }
  if (!a.meta.is_object()) throw ParseError("metadata is not a JSON object", json_at);
  return a;
}

void write_ntar(const Archive& a, const std::filesystem::path& path) { io::write_file(path, encode_ntar(a)); }

Archive read_ntar(const std::filesystem::path& path) {
  auto bytes = io::read_file(path);
  try {
    return decode_ntar(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.detail(), e.offset());
  }
}

void add_params(Archive& a, std::string_view prefix, const PipelineParams<float>& p) {
  p.visit([&](Group, const std::string& name, const Tensor<float>& t) {
    a.add(std::string(prefix) + "/" + name, Tensor<float>(t.dims(), t.storage()));
  });
}

PipelineParams<float> read_params(const Archive& a, std::string_view prefix) {
  PipelineParams<float> p;
  p.visit([&](Group, const std::string& name, Tensor<float>& t) {
    t = Tensor<float>(a.at(std::string(prefix) + "/" + name));
    t.set_requires_grad(false);
  });
  const auto dim = p.ser.proj_w.dim(0);
  if (p.vad.conv_w[0].rank() != 3 || p.vad.conv_w[0].dim(1) != dim)
    throw InputError("checkpoint VAD and SER branches disagree on the feature dim");
  p.shared_featurizer = a.meta.value("shared_featurizer", false);
  p.set_trainable({});
  return p;
}

Archive state_to_archive(const TrainState& s, const json& extra_meta) {
  Archive a;
  add_params(a, kModel, s.best);
  add_params(a, kCurrent, s.params);
  json adam_names = json::array();
  s.params.visit([&](Group, const std::string& name, const Tensor<float>& t) {
    auto it = s.adam.m.find(name);
    if (it == s.adam.m.end()) return;
    a.add(std::string(kAdamM) + "/" + name, Tensor<float>(t.dims(), it->second));
    a.add(std::string(kAdamV) + "/" + name, Tensor<float>(t.dims(), s.adam.v.at(name)));
    adam_names.push_back(name);
  });

  json trainable = json::array();
  for (auto g : s.trainable) trainable.push_back(pipeline::group_name(g));
  json meta{{"phase", phase_name(s.phase)},
            {"condition", s.condition ? json(pipeline::condition_name(*s.condition)) : json(nullptr)},
            {"epoch", s.epoch},
            {"selected_epoch", s.log.selected_epoch},
            {"trainable", trainable},
            {"shared_featurizer", s.params.shared_featurizer},
            {"adam_step", s.adam.t},
            {"adam_state", adam_names},
            {"best_metric", s.best_metric},
            {"best_loss", s.best_loss},
            {"since_best", s.since_best},
            {"log", to_json(s.log, s.trainable)}};
  if (extra_meta.is_object())
    for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it) meta[it.key()] = it.value();
  a.meta = std::move(meta);
  return a;
}

TrainState state_from_archive(const Archive& a) {
  const auto& m = a.meta;
  TrainState s;
  try {
    s.phase = parse_phase(m.at("phase").get<std::string>());
    if (!m.at("condition").is_null()) s.condition = pipeline::parse_condition(m.at("condition").get<std::string>());
    for (const auto& g : m.at("trainable")) s.trainable.insert(pipeline::parse_group(g.get<std::string>()));
    s.epoch = m.at("epoch").get<std::size_t>();
    s.adam.t = m.at("adam_step").get<std::uint64_t>();
    s.best_metric = m.at("best_metric").get<double>();
    s.best_loss = m.at("best_loss").get<double>();
    s.since_best = m.at("since_best").get<std::size_t>();

    const auto& log = m.at("log");
    s.log.phase = s.phase;
    s.log.condition = s.condition;
    s.log.selected_epoch = log.at("selected_epoch").get<std::size_t>();
    s.log.stopped_early = log.at("stopped_early").get<bool>();
    for (const auto& e : log.at("epochs")) {
      EpochRecord r;
      r.epoch = e.at("epoch").get<std::size_t>();
      if (!e.at("train_loss").is_null()) r.train_loss = e.at("train_loss").get<double>();
      r.val_loss = e.at("val_loss").get<double>();
      r.val_metric = e.at("val_metric").get<double>();
      s.log.epochs.push_back(r);
    }
    for (const auto& n : m.at("adam_state")) {
      const auto name = n.get<std::string>();
      const auto& m_t = a.at(std::string(kAdamM) + "/" + name).storage();
      const auto& v_t = a.at(std::string(kAdamV) + "/" + name).storage();
      s.adam.m[name].assign(m_t.begin(), m_t.end());
      s.adam.v[name].assign(v_t.begin(), v_t.end());
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("checkpoint metadata incomplete: ") + e.what());
  }
  s.best = read_params(a, kModel);
  s.params = read_params(a, kCurrent);
  s.params.set_trainable(s.trainable);
  return s;
}

PipelineParams<float> model_from_archive(const Archive& a) { return read_params(a, kModel); }

}  // namespace emovad::train
