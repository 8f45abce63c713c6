#include "emovad/cli.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <thread>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"

#include "emovad/binary_io.hpp"
#include "emovad/checkpoint.hpp"
#include "emovad/digest.hpp"
#include "emovad/gradcheck_suite.hpp"
#include "emovad/metrics.hpp"

namespace emovad::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using corpus::Split;
using corpus::Utterance;
using pipeline::Condition;

void RunConfig::resolve() {
  corpus.seed = seed;
  for (auto* t : {&pretrain, &finetune}) {
    t->seed = seed;
    t->mask_mode = mask_mode;
    t->shared_featurizer = shared_featurizer;
  }
  if (workers < 1) throw ConfigError("--workers must be >= 1");
}

namespace {

fs::path under(const fs::path& root, const fs::path& p) { return p.is_absolute() ? p : root / p; }

}  // namespace

fs::path RunConfig::corpus_dir() const { return under(root, paths.corpus); }
fs::path RunConfig::checkpoint_dir() const { return under(root, paths.checkpoints); }
fs::path RunConfig::report_dir() const { return under(root, paths.reports); }

json to_json(const RunConfig& c) {
  json spec = c.corpus;
  spec.erase("seed");
  return json{{"seed", c.seed},
              {"corpus", spec},
              {"pretrain", c.pretrain},
              {"finetune", c.finetune},
              {"condition", pipeline::condition_name(c.condition)},
              {"mask_mode", nn::mask_mode_name(c.mask_mode)},
              {"shared_featurizer", c.shared_featurizer},
              {"paths",
               {{"corpus", c.paths.corpus.generic_string()},
                {"checkpoints", c.paths.checkpoints.generic_string()},
                {"reports", c.paths.reports.generic_string()}}},
              {"analyze", {{"timeline_count", c.timeline_count}, {"timeline_snr_db", c.timeline_snr_db}}}};
}

void apply_json(const json& j, RunConfig& c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    try {
      if (k == "seed") {
        c.seed = v.get<std::uint64_t>();
      } else if (k == "corpus") {
        if (v.contains("seed")) throw ConfigError("config: set the seed at top level, not in 'corpus'");
        from_json(v, c.corpus);
      } else if (k == "pretrain") {
        from_json(v, c.pretrain);
      } else if (k == "finetune") {
        from_json(v, c.finetune);
      } else if (k == "condition") {
        c.condition = pipeline::parse_condition(v.get<std::string>());
      } else if (k == "mask_mode") {
        c.mask_mode = nn::parse_mask_mode(v.get<std::string>());
      } else if (k == "shared_featurizer") {
        c.shared_featurizer = v.get<bool>();
      } else if (k == "workers") {
        c.workers = v.get<std::size_t>();
      } else if (k == "paths") {
        for (auto p = v.begin(); p != v.end(); ++p) {
          if (p.key() == "corpus") c.paths.corpus = p.value().get<std::string>();
          else if (p.key() == "checkpoints") c.paths.checkpoints = p.value().get<std::string>();
          else if (p.key() == "reports") c.paths.reports = p.value().get<std::string>();
          else throw ConfigError("config: unknown key 'paths." + p.key() + "'");
        }
      } else if (k == "analyze") {
        for (auto p = v.begin(); p != v.end(); ++p) {
          if (p.key() == "timeline_count") c.timeline_count = p.value().get<std::size_t>();
          else if (p.key() == "timeline_snr_db") c.timeline_snr_db = p.value().get<double>();
          else throw ConfigError("config: unknown key 'analyze." + p.key() + "'");
        }
      } else {
        throw ConfigError("config: unknown key '" + k + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config: bad value for '" + k + "': " + e.what());
    }
  }
}

namespace {

json read_json_file(const fs::path& path) {
  if (!fs::exists(path)) throw InputError("missing input: " + path.string());
  auto bytes = io::read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void require_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw InputError("missing input: " + path.string());
}

std::string snr_tag(double snr) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "snr%+g", snr);
  return buf;
}

std::string config_digest(const RunConfig& c) { return sha256_hex(to_json(c).dump()); }

// ---------------------------------------------------------------- manifest

struct Entry {
  std::string id;
  Split split = Split::kTrain;
  std::optional<double> snr_db;
  bool extended = false;
  std::string file;
};

struct Manifest {
  fs::path dir;
  corpus::SynthSpec spec;
  std::vector<Entry> entries;
  std::string digest;

  std::vector<const Entry*> select(Split split, bool extended, std::optional<double> snr) const {
    std::vector<const Entry*> out;
    for (const auto& e : entries)
      if (e.split == split && e.extended == extended && e.snr_db == snr) out.push_back(&e);
    return out;
  }
};

Manifest load_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  require_file(path);
  Manifest m;
  m.dir = dir;
  m.digest = file_sha256(path);
  auto j = read_json_file(path);
  try {
    from_json(j.at("spec"), m.spec);
    for (const auto& e : j.at("entries")) {
      Entry x;
      x.id = e.at("id").get<std::string>();
      x.split = corpus::parse_split(e.at("split").get<std::string>());
      x.extended = e.at("variant").get<std::string>() == "extended";
      if (!e.at("snr_db").is_null()) x.snr_db = e.at("snr_db").get<double>();
      x.file = e.at("file").get<std::string>();
      m.entries.push_back(std::move(x));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": malformed manifest: " + e.what());
  }
  return m;
}

struct Loaded {
  std::vector<Utterance> utts;
  std::string digest;  // over the per-file digests, in order
};

Loaded load_entries(const Manifest& m, const std::vector<const Entry*>& entries) {
  Loaded out;
  std::string digests;
  for (const auto* e : entries) {
    const auto path = m.dir / e->file;
    require_file(path);
    auto bytes = io::read_file(path);
    digests += sha256_hex(bytes);
    try {
      out.utts.push_back(corpus::decode_feature_file(bytes));
    } catch (const ParseError& err) {
      throw ParseError(path.string() + ": " + err.detail(), err.offset());
    }
  }
  out.digest = sha256_hex(digests);
  return out;
}

// ---------------------------------------------------------------- commands

int cmd_gen(const RunConfig& cfg) {
  const auto& spec = cfg.corpus;
  spec.validate();
  if (spec.n_train == 0 || spec.n_val == 0 || spec.n_test == 0)
    throw ConfigError("corpus spec: n_train, n_val and n_test must all be >= 1");
  const auto dir = cfg.corpus_dir();
  fs::create_directories(dir);

  auto utts = corpus::generate_corpus(spec);
  json entries = json::array();
  auto emit = [&](const Utterance& u, const std::string& file) {
    corpus::write_feature_file(u, dir / file);
    entries.push_back(json{{"id", u.id},
                           {"split", corpus::split_name(u.split)},
                           {"variant", u.extended ? "extended" : "original"},
                           {"snr_db", u.snr_db ? json(*u.snr_db) : json(nullptr)},
                           {"file", file},
                           {"frames", u.num_frames()},
                           {"emotion", *u.emotion}});
  };
  for (const auto& u : utts) {
    emit(u, u.id + ".sslf");
    if (u.split != Split::kTest) continue;
    for (double snr : spec.snr_db_levels) emit(corpus::make_variant(u, spec, snr), u.id + ".ext." + snr_tag(snr) + ".sslf");
  }
  json manifest{{"v", 1}, {"spec", spec}, {"config", to_json(cfg)}, {"entries", entries}};
  metrics::write_json(manifest, dir / "manifest.json");
  spdlog::info("wrote {} feature files to {}, manifest sha256 {}", entries.size(), dir.string(),
               file_sha256(dir / "manifest.json"));
  return kExitOk;
}

json provenance(const RunConfig& cfg, json inputs) {
  return json{{"config", to_json(cfg)}, {"config_digest", config_digest(cfg)}, {"inputs", std::move(inputs)}};
}

void stamp(json& j, const RunConfig& cfg, json inputs) {
  auto p = provenance(cfg, std::move(inputs));
  for (auto& [k, v] : p.items()) j[k] = v;
}

void save_state(const RunConfig& cfg, const train::TrainState& st, const std::string& name, const json& inputs) {
  const auto dir = cfg.checkpoint_dir();
  fs::create_directories(dir);
  json extra{{"seed", cfg.seed}, {"config_digest", config_digest(cfg)}};
  train::write_ntar(train::state_to_archive(st, extra), dir / (name + ".ntar"));
  json log = train::to_json(st.log, st.trainable);
  json out{{"v", 1}};
  for (auto& [k, v] : log.items()) out[k] = v;
  stamp(out, cfg, inputs);
  metrics::write_json(out, dir / (name + ".log.json"));
  spdlog::info("wrote {} (selected epoch {})", (dir / (name + ".ntar")).string(), st.log.selected_epoch);
}

std::optional<train::TrainState> maybe_resume(const fs::path& path, bool resume, train::Phase phase) {
  if (!resume || !fs::exists(path)) return std::nullopt;
  auto st = train::state_from_archive(train::read_ntar(path));
  if (st.phase != phase) throw ConfigError(path.string() + " holds a " + std::string(train::phase_name(st.phase)) + " run");
  spdlog::info("resuming {} from epoch {}", path.string(), st.epoch);
  return st;
}

int cmd_pretrain(const RunConfig& cfg, train::Phase phase, bool resume) {
  auto m = load_manifest(cfg.corpus_dir());
  auto tr = load_entries(m, m.select(Split::kTrain, false, std::nullopt));
  auto va = load_entries(m, m.select(Split::kVal, false, std::nullopt));
  if (tr.utts.empty()) throw InputError("corpus has no training utterances");
  const std::string name = phase == train::Phase::kPretrainVad ? "vad" : "ser";
  const auto path = cfg.checkpoint_dir() / (name + ".ntar");

  auto st = maybe_resume(path, resume, phase);
  auto train_set = train::view(tr.utts), val_set = train::view(va.utts);
  if (!st) {
    auto init = pipeline::make_params(nn::init_params(cfg.seed, m.spec.dim));
    st = phase == train::Phase::kPretrainVad ? train::start_pretrain_vad(init, val_set, cfg.pretrain)
                                             : train::start_pretrain_ser(init, val_set, cfg.pretrain);
  }
  train::run(*st, train_set, val_set, cfg.pretrain);
  save_state(cfg, *st, name,
             json{{"manifest", m.digest}, {"train_files", tr.digest}, {"val_files", va.digest}});
  return kExitOk;
}

struct Model {
  pipeline::PipelineParams<float> params;
  json digests = json::object();
};

Model load_model(const RunConfig& cfg, Condition cond) {
  const auto dir = cfg.checkpoint_dir();
  Model out;
  auto load = [&](const std::string& name) {
    const auto path = dir / (name + ".ntar");
    require_file(path);
    out.digests[name + ".ntar"] = file_sha256(path);
    return train::model_from_archive(train::read_ntar(path));
  };
  switch (cond) {
    case Condition::kSerOnly:
      out.params = load("ser");
      break;
    case Condition::kCascade:
      if (fs::exists(dir / "cascade.ntar")) {
        out.params = load("cascade");
      } else {
        auto v = load("vad");
        out.params = train::combine_pretrained(v, load("ser"));
      }
      break;
    default:
      out.params = load(std::string(pipeline::condition_name(cond)));
  }
  return out;
}

int cmd_finetune(const RunConfig& cfg, Condition cond, bool resume) {
  if (cond == Condition::kSerOnly) throw ConfigError("finetune: condition must be cascade, ft-vad, ft-ser or ft-both");
  const auto dir = cfg.checkpoint_dir();
  require_file(dir / "vad.ntar");
  require_file(dir / "ser.ntar");
  auto m = load_manifest(cfg.corpus_dir());
  auto tr = load_entries(m, m.select(Split::kTrain, false, std::nullopt));
  auto va = load_entries(m, m.select(Split::kVal, false, std::nullopt));

  json inputs{{"manifest", m.digest},
              {"train_files", tr.digest},
              {"val_files", va.digest},
              {"vad.ntar", file_sha256(dir / "vad.ntar")},
              {"ser.ntar", file_sha256(dir / "ser.ntar")}};
  auto init = train::combine_pretrained(train::model_from_archive(train::read_ntar(dir / "vad.ntar")),
                                        train::model_from_archive(train::read_ntar(dir / "ser.ntar")));

  // Extended, noise-mixed copies of the original train/val utterances.
  std::vector<Utterance> ft_train, ft_val;
  for (const auto& u : tr.utts) ft_train.push_back(corpus::make_noisy_training_variant(u, m.spec));
  for (const auto& u : va.utts) ft_val.push_back(corpus::make_noisy_training_variant(u, m.spec));
  auto train_set = train::view(ft_train), val_set = train::view(ft_val);
  const std::string name(pipeline::condition_name(cond));

  if (cond == Condition::kCascade) {
    // Nothing is trained; record the composed model and its validation score.
    train::TrainState st;
    st.phase = train::Phase::kFinetune;
    st.condition = cond;
    st.params = init;
    st.best = init;
    st.log.phase = st.phase;
    st.log.condition = cond;
    auto v = train::validate(st, st.params, val_set);
    st.log.epochs.push_back({0, std::nullopt, v.loss, v.metric});
    st.best_metric = v.metric;
    st.best_loss = v.loss;
    save_state(cfg, st, name, inputs);
    return kExitOk;
  }

  auto st = maybe_resume(dir / (name + ".ntar"), resume, train::Phase::kFinetune);
  if (st && st->condition != cond) throw ConfigError("checkpoint to resume was trained under another condition");
  if (!st) st = train::start_finetune(init, cond, val_set, cfg.finetune);
  train::run(*st, train_set, val_set, cfg.finetune);
  save_state(cfg, *st, name, inputs);
  return kExitOk;
}

std::vector<pipeline::PipelineOutput> infer_all(const std::vector<Utterance>& utts,
                                                const pipeline::PipelineParams<float>& p, Condition cond,
                                                std::size_t workers) {
  std::vector<pipeline::PipelineOutput> out(utts.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next++) < utts.size();) out[i] = pipeline::infer(utts[i].stack, p, cond);
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < std::min(workers, utts.size()); ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return out;
}

metrics::EvalReport evaluate(const std::vector<Utterance>& utts, const std::vector<pipeline::PipelineOutput>& outs,
                             Condition cond) {
  std::vector<int> preds, labels;
  metrics::VadTally tally;
  for (std::size_t i = 0; i < utts.size(); ++i) {
    if (!utts[i].emotion) throw InputError(utts[i].id + ": evaluation needs an emotion label");
    preds.push_back(outs[i].predicted_emotion());
    labels.push_back(*utts[i].emotion);
    if (pipeline::has_vad_stage(cond)) {
      if (utts[i].frame_labels.empty()) throw InputError(utts[i].id + ": VAD metrics need frame labels");
      tally.add(outs[i].hard_mask, utts[i].frame_labels);
    }
  }
  metrics::EvalReport r;
  r.ser = metrics::ser_metrics(preds, labels);
  if (pipeline::has_vad_stage(cond)) r.vad = tally.finish();
  return r;
}

int cmd_eval(const RunConfig& cfg, Condition cond) {
  auto m = load_manifest(cfg.corpus_dir());
  auto model = load_model(cfg, cond);
  const auto dir = cfg.report_dir() / "eval" / std::string(pipeline::condition_name(cond));
  fs::create_directories(dir);

  auto report = [&](const std::vector<const Entry*>& entries, const std::string& variant, std::optional<double> snr) {
    if (entries.empty()) throw InputError("corpus has no test utterances for variant " + variant);
    auto data = load_entries(m, entries);
    auto outs = infer_all(data.utts, model.params, cond, cfg.workers);
    auto r = evaluate(data.utts, outs, cond);
    json inputs = model.digests;
    inputs["manifest"] = m.digest;
    inputs["test_files"] = data.digest;
    json j{{"v", 1},
           {"condition", pipeline::condition_name(cond)},
           {"variant", variant},
           {"snr_db", snr ? json(*snr) : json(nullptr)},
           {"mask", pipeline::has_vad_stage(cond) ? json("hard") : json(nullptr)},
           {"ser", metrics::to_json(r.ser)}};
    if (r.vad) j["vad"] = metrics::to_json(*r.vad);
    stamp(j, cfg, inputs);
    metrics::write_json(j, dir / (variant + ".json"));
    spdlog::info("{} {}: UA={:.4f} WA={:.4f}{}", pipeline::condition_name(cond), variant, r.ser.ua, r.ser.wa,
                 r.vad ? fmt::format(" VAD acc={:.4f}", r.vad->accuracy) : std::string());
    return std::make_pair(r, data.digest);
  };

  report(m.select(Split::kTest, false, std::nullopt), "original", std::nullopt);

  json per_snr = json::array();
  double ua = 0, wa = 0, acc = 0, prec = 0, rec = 0;
  json file_digests = json::object();
  for (double snr : m.spec.snr_db_levels) {
    auto [r, digest] = report(m.select(Split::kTest, true, snr), snr_tag(snr), snr);
    json row{{"snr_db", snr}, {"ua", r.ser.ua}, {"wa", r.ser.wa}, {"n_utterances", r.ser.n}};
    if (r.vad) row["vad_accuracy"] = r.vad->accuracy;
    per_snr.push_back(row);
    file_digests[snr_tag(snr)] = digest;
    ua += r.ser.ua;
    wa += r.ser.wa;
    if (r.vad) acc += r.vad->accuracy, prec += r.vad->precision, rec += r.vad->recall;
  }
  const double n = double(m.spec.snr_db_levels.size());
  if (n == 0) throw InputError("corpus defines no SNR levels");
  json agg{{"v", 1},
           {"condition", pipeline::condition_name(cond)},
           {"variant", "aggregate"},
           {"weighting", "equal-weight mean over SNR levels"},
           {"ua", ua / n},
           {"wa", wa / n}};
  if (pipeline::has_vad_stage(cond))
    agg["vad"] = json{{"accuracy", acc / n}, {"precision", prec / n}, {"recall", rec / n}};
  agg["per_snr"] = per_snr;
  json inputs = model.digests;
  inputs["manifest"] = m.digest;
  inputs["test_files"] = file_digests;
  stamp(agg, cfg, inputs);
  metrics::write_json(agg, dir / "aggregate.json");
  return kExitOk;
}

int cmd_analyze(const RunConfig& cfg, Condition cond) {
  auto m = load_manifest(cfg.corpus_dir());
  auto model = load_model(cfg, cond);
  const auto dir = cfg.report_dir() / "analysis" / std::string(pipeline::condition_name(cond));
  fs::create_directories(dir);
  json inputs = model.digests;
  inputs["manifest"] = m.digest;

  auto weights = metrics::featurizer_weights_json(model.params);
  stamp(weights, cfg, inputs);
  metrics::write_json(weights, dir / "featurizer_weights.json");

  if (!pipeline::has_vad_stage(cond)) return kExitOk;
  auto entries = m.select(Split::kTest, true, cfg.timeline_snr_db);
  if (entries.empty()) throw InputError("corpus has no test variant at " + snr_tag(cfg.timeline_snr_db));
  if (entries.size() > cfg.timeline_count) entries.resize(cfg.timeline_count);
  auto data = load_entries(m, entries);
  for (const auto& u : data.utts) {
    auto out = pipeline::infer(u.stack, model.params, cond);
    auto j = metrics::vad_timeline_json(u, out);
    inputs["test_files"] = data.digest;
    stamp(j, cfg, inputs);
    metrics::write_json(j, dir / ("timeline_" + u.id + "_" + snr_tag(cfg.timeline_snr_db) + ".json"));
  }
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& cfg, bool inject_fault, bool write_report) {
  check::SuiteOptions opts;
  opts.inject_fault = inject_fault;
  auto results = check::run_gradcheck_suite(opts);
  bool ok = true;
  json rows = json::array();
  for (const auto& r : results) {
    ok = ok && r.passed;
    std::printf("%-30s max_rel_err=%.3e coords=%-5zu %s\n", r.name.c_str(), r.max_rel_error, r.coords,
                r.passed ? "PASS" : "FAIL");
    rows.push_back(json{{"name", r.name},
                        {"max_rel_error", r.max_rel_error},
                        {"coords", r.coords},
                        {"worst", r.worst},
                        {"passed", r.passed}});
  }
  std::printf("gradcheck: %s (tolerance %.0e)\n", ok ? "all checks passed" : "FAILED", opts.tolerance);
  std::fflush(stdout);
  if (write_report) {
    json j{{"v", 1}, {"tolerance", opts.tolerance}, {"step", opts.step}, {"passed", ok}, {"checks", rows}};
    metrics::write_json(j, cfg.report_dir() / "gradcheck.json");
  }
  return ok ? kExitOk : kExitFailure;
}

void setup_logging() {
  auto logger = spdlog::get("emovad");
  if (!logger) {
    logger = spdlog::stderr_color_mt("emovad");
    logger->set_pattern("[%l] %v");
  }
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("EMOVAD_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "info") spdlog::set_level(spdlog::level::info);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else throw ConfigError("EMOVAD_LOG must be error, info or debug, got '" + level + "'");
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Joint VAD + SER pipeline over frozen SSL features", "emovad"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Seed for corpus, initialization and shuffling");
  app.add_option("--out", out_dir, "Working directory holding corpus/, checkpoints/ and reports/");
  app.add_option("--workers", workers, "Evaluation worker threads")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen", "Generate the synthetic corpus");
  auto* pvad = app.add_subcommand("pretrain-vad", "Pretrain featurizer + VAD on frame labels");
  auto* pser = app.add_subcommand("pretrain-ser", "Pretrain featurizer + SER on original utterances");
  auto* ft = app.add_subcommand("finetune", "Fine-tune the composed pipeline for the SER loss");
  auto* ev = app.add_subcommand("eval", "Evaluate a condition on the test variants (hard mask)");
  auto* an = app.add_subcommand("analyze", "Export featurizer weights and VAD timelines");
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks in f64");

  bool resume = false;
  for (auto* sc : {pvad, pser, ft})
    sc->add_flag("--resume", resume, "Continue from the checkpoint in the checkpoint dir");
  std::string condition;
  ft->add_option("--condition", condition, "cascade|ft-vad|ft-ser|ft-both")
      ->check(CLI::IsMember({"cascade", "ft-vad", "ft-ser", "ft-both"}));
  std::string mask_mode;
  ft->add_option("--mask-mode", mask_mode, "Training mask: soft|ste|hard")->check(CLI::IsMember({"soft", "ste", "hard"}));
  for (auto* sc : {ev, an})
    sc->add_option("--condition", condition, "ser-only|cascade|ft-vad|ft-ser|ft-both")
        ->check(CLI::IsMember({"ser-only", "cascade", "ft-vad", "ft-ser", "ft-both"}));
  bool inject_fault = false, write_report = false;
  gc->add_flag("--report", write_report, "Also write gradcheck.json to the report dir");
  gc->add_flag("--inject-fault", inject_fault)->group("");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    setup_logging();
    RunConfig cfg;
    if (!config_path.empty()) apply_json(read_json_file(config_path), cfg);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.root = out_dir;
    if (workers) cfg.workers = *workers;
    if (!condition.empty()) cfg.condition = pipeline::parse_condition(condition);
    if (!mask_mode.empty()) cfg.mask_mode = nn::parse_mask_mode(mask_mode);
    cfg.resolve();

    if (gen->parsed()) return cmd_gen(cfg);
    if (pvad->parsed()) return cmd_pretrain(cfg, train::Phase::kPretrainVad, resume);
    if (pser->parsed()) return cmd_pretrain(cfg, train::Phase::kPretrainSer, resume);
    if (ft->parsed()) {
      if (condition.empty()) throw ConfigError("finetune needs --condition");
      return cmd_finetune(cfg, cfg.condition, resume);
    }
    if (ev->parsed()) return cmd_eval(cfg, cfg.condition);
    if (an->parsed()) return cmd_analyze(cfg, cfg.condition);
    if (gc->parsed()) return cmd_gradcheck(cfg, inject_fault, write_report);
    return kExitUsage;
  } catch (const InputError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const ParseError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const ShapeError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    spdlog::error("internal failure: {}", e.what());
    return kExitFailure;
  }
}

}  // namespace emovad::cli
