#pragma once

// Experiment configuration and the commands behind the command-line tool:
// dataset generation, model training, batch sessions and reporting.
//
// Config files are line based:
//   # comment
//   [section]
//   key = value
// Keys are addressed as "section.key". Later assignments win; command-line
// overrides are applied after the file. The run.variant key may repeat and
// accumulates.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>

#include "semcom/checkpoint.hpp"
#include "semcom/report.hpp"

namespace semcom {

class ConfigFile {
 public:
  static ConfigFile parse(std::string_view text) {
    ConfigFile cfg;
    std::istringstream in{std::string(text)};
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(strip_comment(line));
      if (t.empty()) continue;
      if (t.front() == '[') {
        require(t.back() == ']' && t.size() > 2, ErrorCode::BadConfig, "line " + std::to_string(lineno) + ": bad section");
        section = trim(t.substr(1, t.size() - 2));
        continue;
      }
      const auto eq = t.find('=');
      require(eq != std::string::npos, ErrorCode::BadConfig, "line " + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(t.substr(0, eq));
      require(!key.empty(), ErrorCode::BadConfig, "line " + std::to_string(lineno) + ": empty key");
      cfg.set((section.empty() ? "" : section + ".") + key, trim(t.substr(eq + 1)));
    }
    return cfg;
  }

  static ConfigFile load(const std::filesystem::path& p) {
    const Bytes b = read_file(p);
    return parse(std::string_view(reinterpret_cast<const char*>(b.data()), b.size()));
  }

  /// "section.key=value".
  void set_override(std::string_view kv) {
    const auto eq = kv.find('=');
    require(eq != std::string_view::npos && eq > 0, ErrorCode::BadConfig, "override must be key=value");
    set(trim(std::string(kv.substr(0, eq))), trim(std::string(kv.substr(eq + 1))));
  }

  void set(const std::string& key, const std::string& value) {
    if (key == "run.variant")
      variants_.push_back(value);
    else
      values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string str(const std::string& key, std::string def) const {
    const auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
  }
  long long integer(const std::string& key, long long def) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return def;
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(it->second, &used, 0);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == it->second.size() && used > 0, ErrorCode::BadConfig, key + ": expected an integer");
    return v;
  }
  double real(const std::string& key, double def) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return def;
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(it->second, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == it->second.size() && used > 0, ErrorCode::BadConfig, key + ": expected a number");
    return v;
  }
  bool boolean(const std::string& key, bool def) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return def;
    if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
    if (it->second == "false" || it->second == "0" || it->second == "no") return false;
    fail(ErrorCode::BadConfig, key + ": expected true or false");
  }
  const std::vector<std::string>& variants() const { return variants_; }
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Canonical text form; parse(dump()) reproduces the config.
  std::string dump() const {
    std::string out, section;
    // Unsectioned keys must precede the first header.
    for (const auto& [k, v] : values_)
      if (k.find('.') == std::string::npos) out += k + " = " + v + "\n";
    for (const auto& [k, v] : values_) {
      const auto dot = k.find('.');
      if (dot == std::string::npos) continue;
      const std::string sec = k.substr(0, dot);
      if (sec != section) {
        out += (out.empty() ? "" : "\n") + ("[" + sec + "]\n");
        section = sec;
      }
      out += k.substr(dot + 1) + " = " + v + "\n";
    }
    if (!variants_.empty()) {
      out += "\n[run]\n";
      for (const auto& v : variants_) out += "variant = " + v + "\n";
    }
    return out;
  }

 private:
  static std::string strip_comment(const std::string& s) {
    const auto h = s.find('#');
    return h == std::string::npos ? s : s.substr(0, h);
  }
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  std::map<std::string, std::string> values_;
  std::vector<std::string> variants_;
};

struct ExperimentConfig {
  std::filesystem::path out = "semcom-out";

  int train_scenes = 4000;
  std::uint64_t train_seed = 1;
  int test_scenes = 60;
  std::uint64_t test_seed = 1000003;
  GeneratorConfig generator;

  ScheduleConfig schedule;
  ClassifierTrainConfig classifier;
  DenoiserArch denoiser_arch;
  DenoiserTrainConfig denoiser;
  std::uint64_t denoiser_init_seed = 3;

  AttentionConfig attention;
  TransmitterConfig tx;
  std::uint64_t session_seed = 11;
  bool reconstruct = true;
  std::vector<Variant> variants = default_variants();
  std::filesystem::path lexicon_file;

  std::filesystem::path classifier_path() const { return out / "models" / "classifier.ckpt"; }
  std::filesystem::path denoiser_path() const { return out / "models" / "denoiser.ckpt"; }

  static ExperimentConfig from(const ConfigFile& f) {
    ExperimentConfig c;
    c.out = f.str("paths.out", c.out.string());
    c.lexicon_file = f.str("paths.lexicon", "");
    c.train_scenes = static_cast<int>(f.integer("data.scenes", c.train_scenes));
    c.train_seed = static_cast<std::uint64_t>(f.integer("data.seed", static_cast<long long>(c.train_seed)));
    c.test_scenes = static_cast<int>(f.integer("data.test_scenes", c.test_scenes));
    c.test_seed = static_cast<std::uint64_t>(f.integer("data.test_seed", static_cast<long long>(c.test_seed)));
    c.generator.max_instances = static_cast<int>(f.integer("data.max_instances", c.generator.max_instances));

    c.schedule.steps = static_cast<int>(f.integer("schedule.steps", c.schedule.steps));
    c.schedule.beta_start = f.real("schedule.beta_start", c.schedule.beta_start);
    c.schedule.beta_end = f.real("schedule.beta_end", c.schedule.beta_end);

    c.classifier.epochs = static_cast<int>(f.integer("classifier.epochs", c.classifier.epochs));
    c.classifier.batch_size = static_cast<int>(f.integer("classifier.batch", c.classifier.batch_size));
    c.classifier.adam.lr = f.real("classifier.lr", c.classifier.adam.lr);
    c.classifier.seed = static_cast<std::uint64_t>(f.integer("classifier.seed", static_cast<long long>(c.classifier.seed)));

    c.denoiser.epochs = static_cast<int>(f.integer("denoiser.epochs", c.denoiser.epochs));
    c.denoiser.batch_size = static_cast<int>(f.integer("denoiser.batch", c.denoiser.batch_size));
    c.denoiser.adam.lr = f.real("denoiser.lr", c.denoiser.adam.lr);
    c.denoiser.lr_final = f.real("denoiser.lr_final", c.denoiser.lr_final);
    c.denoiser.p_drop_edge = f.real("denoiser.p_drop", c.denoiser.p_drop_edge);
    c.denoiser.seed = static_cast<std::uint64_t>(f.integer("denoiser.seed", static_cast<long long>(c.denoiser.seed)));
    c.denoiser_init_seed = static_cast<std::uint64_t>(f.integer("denoiser.init_seed", static_cast<long long>(c.denoiser_init_seed)));
    c.denoiser_arch.channels = static_cast<int>(f.integer("denoiser.channels", c.denoiser_arch.channels));
    c.denoiser_arch.conv_layers = static_cast<int>(f.integer("denoiser.layers", c.denoiser_arch.conv_layers));
    c.denoiser_arch.sigma_data = f.real("denoiser.sigma_data", c.denoiser_arch.sigma_data);

    c.attention.source = parse_source(f.str("session.attention", std::string(source_name(c.attention.source))));
    c.attention.tau = f.real("session.tau", c.attention.tau);
    c.attention.oracle_sigma = f.real("session.oracle_sigma", c.attention.oracle_sigma);
    c.tx.patch_size = static_cast<int>(f.integer("session.patch_size", c.tx.patch_size));
    c.tx.deflate_seg = f.boolean("session.deflate", c.tx.deflate_seg);
    c.session_seed = static_cast<std::uint64_t>(f.integer("session.seed", static_cast<long long>(c.session_seed)));
    c.reconstruct = f.boolean("run.reconstruct", c.reconstruct);
    if (!f.variants().empty()) {
      c.variants.clear();
      for (const auto& v : f.variants()) c.variants.push_back(parse_variant(v));
    }
    if (f.has("run.variants") && f.str("run.variants", "") == "none") c.variants.clear();
    return c;
  }

  /// Canonical config text persisted next to outputs.
  std::string dump() const {
    ConfigFile f;
    const auto put = [&](const std::string& k, const auto& v) {
      std::ostringstream o;
      o << std::setprecision(17) << v;
      f.set(k, o.str());
    };
    put("paths.out", out.string());
    if (!lexicon_file.empty()) put("paths.lexicon", lexicon_file.string());
    put("data.scenes", train_scenes);
    put("data.seed", train_seed);
    put("data.test_scenes", test_scenes);
    put("data.test_seed", test_seed);
    put("data.max_instances", generator.max_instances);
    put("schedule.steps", schedule.steps);
    put("schedule.beta_start", schedule.beta_start);
    put("schedule.beta_end", schedule.beta_end);
    put("classifier.epochs", classifier.epochs);
    put("classifier.batch", classifier.batch_size);
    put("classifier.lr", classifier.adam.lr);
    put("classifier.seed", classifier.seed);
    put("denoiser.epochs", denoiser.epochs);
    put("denoiser.batch", denoiser.batch_size);
    put("denoiser.lr", denoiser.adam.lr);
    put("denoiser.lr_final", denoiser.lr_final);
    put("denoiser.p_drop", denoiser.p_drop_edge);
    put("denoiser.seed", denoiser.seed);
    put("denoiser.init_seed", denoiser_init_seed);
    put("denoiser.channels", denoiser_arch.channels);
    put("denoiser.layers", denoiser_arch.conv_layers);
    put("denoiser.sigma_data", denoiser_arch.sigma_data);
    put("session.attention", source_name(attention.source));
    put("session.tau", attention.tau);
    put("session.oracle_sigma", attention.oracle_sigma);
    put("session.patch_size", tx.patch_size);
    put("session.deflate", tx.deflate_seg ? "true" : "false");
    put("session.seed", session_seed);
    put("run.reconstruct", reconstruct ? "true" : "false");
    for (const auto& v : variants) f.set("run.variant", format_variant(v));
    return f.dump();
  }

  Lexicon lexicon() const {
    if (lexicon_file.empty()) return default_lexicon();
    const Bytes b = read_file(lexicon_file);
    return parse_lexicon(std::string_view(reinterpret_cast<const char*>(b.data()), b.size()));
  }

  SessionConfig session(const std::string& variant, std::uint64_t scene_seed) const {
    SessionConfig s;
    s.attention = attention;
    s.tx = tx;
    s.seed = derive_seed(session_seed, scene_seed);
    s.reconstruct = reconstruct;
    s.variant = variant;
    return s;
  }
};

/// Output root: --out, else $SEMCOM_OUT, else ./semcom-out.
inline std::filesystem::path default_out_root() {
  if (const char* e = std::getenv("SEMCOM_OUT"); e && *e) return e;
  return "semcom-out";
}

using LogFn = std::function<void(const std::string&)>;

inline void write_text(const std::filesystem::path& p, const std::string& s) { write_file(p, Bytes(s.begin(), s.end())); }

/// Writes images and label maps plus a manifest; returns the manifest digest.
inline std::uint64_t cmd_gen_data(const ExperimentConfig& cfg, const LogFn& log = {}) {
  require(cfg.train_scenes >= 1, ErrorCode::BadConfig, "data.scenes must be >= 1");
  const auto dir = cfg.out / "data";
  std::filesystem::create_directories(dir);
  std::string manifest = "index\tseed\tspec_digest\timage\tseg\tinstances\n";
  for (int i = 0; i < cfg.train_scenes; ++i) {
    const std::uint64_t seed = derive_seed(cfg.train_seed, static_cast<std::uint64_t>(i));
    const SceneSpec spec = random_scene_spec(seed, cfg.generator);
    const SceneBundle s = generate_scene(spec);
    char name[32];
    std::snprintf(name, sizeof name, "%06d", i);
    const std::string img = std::string(name) + ".ppm", seg = std::string(name) + "_seg.pgm",
                      inst = std::string(name) + "_inst.pgm";
    write_raster(dir / img, to_raster(s.image));
    write_raster(dir / seg, grid_raster(s.seg));
    write_raster(dir / inst, grid_raster(s.instance_map));
    manifest += std::to_string(i) + "\t" + std::to_string(seed) + "\t" + hex64(spec_digest(spec)) + "\t" + img + "\t" +
                seg + "\t" + inst + "\n";
  }
  write_text(dir / "manifest.tsv", manifest);
  write_text(cfg.out / "config.ini", cfg.dump());
  if (log) log("wrote " + std::to_string(cfg.train_scenes) + " scenes to " + dir.string());
  return fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(manifest.data()), manifest.size()));
}

inline std::vector<DenoiserExample> denoiser_examples(const std::vector<SceneBundle>& scenes, const CannyParams& canny) {
  std::vector<DenoiserExample> ex;
  ex.reserve(scenes.size());
  for (const auto& s : scenes) ex.push_back({to_model_range(s.image), s.seg, instance_edges(s.instance_map, canny)});
  return ex;
}

inline LearnedDenoiser make_denoiser(const ExperimentConfig& cfg) {
  return LearnedDenoiser(cfg.generator.height, cfg.generator.width, cfg.schedule.make(), cfg.denoiser_arch,
                         cfg.denoiser_init_seed);
}

enum class TrainTarget { Classifier, Denoiser };

inline TrainTarget parse_train_target(std::string_view s) {
  if (s == "classifier") return TrainTarget::Classifier;
  if (s == "denoiser") return TrainTarget::Denoiser;
  fail(ErrorCode::BadConfig, "train target must be classifier or denoiser");
}

/// Trains one model and writes its checkpoint and a per-epoch log. With
/// resume, training starts from the existing checkpoint.
inline std::filesystem::path cmd_train(const ExperimentConfig& cfg, TrainTarget which, bool resume,
                                       const LogFn& log = {}) {
  require(cfg.train_scenes >= 1, ErrorCode::BadConfig, "data.scenes must be >= 1");
  const auto scenes = sample_dataset(cfg.train_scenes, cfg.train_seed, cfg.generator);
  std::filesystem::create_directories(cfg.out / "models");
  write_text(cfg.out / "config.ini", cfg.dump());
  std::string lines;
  if (which == TrainTarget::Classifier) {
    std::vector<PresenceLabels> labels;
    for (const auto& s : scenes) labels.push_back(presence_labels(s));
    ClassifierModel init = ClassifierModel::make_default(cfg.generator.height, cfg.generator.width,
                                                         derive_seed(cfg.classifier.seed, 0));
    if (resume) checkpoint_load(init.net(), cfg.classifier_path());
    ClassifierTrainReport rep;
    const auto model = train_classifier(scenes, labels, cfg.classifier, &rep, &init);
    checkpoint_save(model.net(), cfg.classifier_path());
    for (std::size_t e = 0; e < rep.epoch_losses.size(); ++e) {
      lines += "epoch " + std::to_string(e) + " loss " + std::to_string(rep.epoch_losses[e]) + "\n";
      if (log) log("classifier epoch " + std::to_string(e) + " loss " + std::to_string(rep.epoch_losses[e]));
    }
    lines += "val_mean_ap " + std::to_string(rep.mean_ap) + "\n";
    write_text(cfg.out / "models" / "classifier.log", lines);
    return cfg.classifier_path();
  }
  LearnedDenoiser den = make_denoiser(cfg);
  if (resume) checkpoint_load(den.net(), cfg.denoiser_path());
  DenoiserTrainReport rep;
  train_denoiser(den, denoiser_examples(scenes, cfg.tx.canny), cfg.denoiser, &rep);
  checkpoint_save(den.net(), cfg.denoiser_path());
  lines += "init_val_loss " + std::to_string(rep.init_val_loss) + "\n";
  for (std::size_t e = 0; e < rep.epoch_train_losses.size(); ++e) {
    const std::string l = "epoch " + std::to_string(e) + " train " + std::to_string(rep.epoch_train_losses[e]) +
                          " val " + std::to_string(rep.epoch_val_losses[e]);
    lines += l + "\n";
    if (log) log("denoiser " + l);
  }
  write_text(cfg.out / "models" / "denoiser.log", lines);
  return cfg.denoiser_path();
}

/// Loads whichever checkpoints the configuration needs.
inline std::shared_ptr<Models> load_models(const ExperimentConfig& cfg, bool need_denoiser) {
  auto m = std::make_shared<Models>();
  m->lexicon = cfg.lexicon();
  const auto load = [](auto& net, const std::filesystem::path& p, const char* what) {
    try {
      checkpoint_load(net, p);
    } catch (const Error& e) {
      fail(ErrorCode::ModelMissing, std::string(what) + " checkpoint unusable (" + p.string() + "): " + e.what());
    }
  };
  if (cfg.attention.source == AttentionSource::Cam) {
    auto c = ClassifierModel::make_default(cfg.generator.height, cfg.generator.width, 0);
    load(c.net(), cfg.classifier_path(), "classifier");
    m->classifier = std::make_shared<const ClassifierModel>(std::move(c));
  }
  if (need_denoiser) {
    auto d = make_denoiser(cfg);
    load(d.net(), cfg.denoiser_path(), "denoiser");
    m->denoiser = std::make_shared<const LearnedDenoiser>(std::move(d));
  }
  return m;
}

inline std::filesystem::path transcript_path(const std::filesystem::path& dir, const std::string& variant,
                                             int index) {
  char name[32];
  std::snprintf(name, sizeof name, "%04d.jsonl", index);
  return dir / variant / name;
}

struct RunResult {
  std::vector<SessionTranscript> transcripts;
  TaskReport report;
};

/// Runs every variant on the held-out scenes, stores transcripts under
/// out/runs and writes report.txt / report.csv.
inline RunResult cmd_run(const ExperimentConfig& cfg, const LogFn& log = {}, std::shared_ptr<const Models> models = {}) {
  require(!cfg.variants.empty(), ErrorCode::BadConfig, "no variants to run");
  require(cfg.test_scenes >= 1, ErrorCode::BadConfig, "data.test_scenes must be >= 1");
  if (!models) models = load_models(cfg, cfg.reconstruct);
  const auto scenes = sample_dataset(cfg.test_scenes, cfg.test_seed, cfg.generator);
  const auto dir = cfg.out / "runs";
  std::filesystem::create_directories(dir);
  write_text(cfg.out / "config.ini", cfg.dump());
  RunResult res;
  for (const auto& v : cfg.variants) {
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      auto tr = run_session(scenes[i], v.policy, models, cfg.session(v.name, scenes[i].seed));
      save_transcript(transcript_path(dir, v.name, static_cast<int>(i)), tr);
      res.transcripts.push_back(std::move(tr));
    }
    if (log) log("variant " + v.name + ": " + std::to_string(scenes.size()) + " sessions");
  }
  res.report = build_report(res.transcripts);
  write_text(cfg.out / "report.txt", report_table(res.report));
  write_text(cfg.out / "report.csv", report_csv(res.report));
  return res;
}

/// Rebuilds the report from every transcript file under `dir`.
inline TaskReport cmd_report(const std::filesystem::path& dir) {
  require(std::filesystem::is_directory(dir), ErrorCode::IoFailure, "no transcript directory " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<SessionTranscript> trs;
  for (const auto& f : files) trs.push_back(load_transcript(f));
  return build_report(trs);
}

/// One raster per reconstruction: <out_dir>/round_<r>.ppm.
inline std::vector<std::filesystem::path> cmd_render(const std::filesystem::path& transcript,
                                                     const std::filesystem::path& out_dir) {
  const auto tr = load_transcript(transcript);
  std::vector<std::filesystem::path> written;
  for (const auto& r : tr.recons) {
    const auto p = out_dir / ("round_" + std::to_string(r.round) + ".ppm");
    write_raster(p, r.image);
    written.push_back(p);
  }
  return written;
}

}  // namespace semcom
