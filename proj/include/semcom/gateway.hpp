#pragma once

// Live sessions for an operator client. Protocol steps run on the request
// thread under a per-session lock; diffusion sampling runs on a fixed-size
// worker pool and clients poll for readiness.
//
// HTTP (JSON bodies, errors as {"error": <code name>, "message": ...}):
//   POST /sessions                          {"seed": n} | {"scene_index": i}
//   GET  /sessions/{id}
//   GET  /sessions/{id}/reconstruction?round=r   -> binary PPM
//   POST /sessions/{id}/feedback            {"label": "person"} | {"text": "..."}
//   POST /sessions/{id}/finish
//   GET  /sessions/{id}/ledger
//   GET  /lexicon

#include <atomic>
#include <condition_variable>
#include <deque>
#include <map>
#include <thread>

// Eigen first: httplib pulls in <resolv.h>, whose _res macro clashes with
// Eigen parameter names.
#include "semcom/experiment.hpp"

#include "httplib.h"

namespace semcom {

class WorkerPool {
 public:
  explicit WorkerPool(int threads) {
    for (int i = 0; i < std::max(1, threads); ++i)
      workers_.emplace_back([this] { loop(); });
  }
  ~WorkerPool() {
    {
      std::lock_guard lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  void submit(std::function<void()> job) {
    {
      std::lock_guard lk(mu_);
      jobs_.push_back(std::move(job));
    }
    cv_.notify_one();
  }

  /// Blocks until the queue is empty and no job is running.
  void drain() {
    std::unique_lock lk(mu_);
    idle_cv_.wait(lk, [&] { return jobs_.empty() && running_ == 0; });
  }

 private:
  void loop() {
    for (;;) {
      std::function<void()> job;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return stop_ || !jobs_.empty(); });
        if (jobs_.empty()) return;
        job = std::move(jobs_.front());
        jobs_.pop_front();
        ++running_;
      }
      job();
      {
        std::lock_guard lk(mu_);
        --running_;
      }
      idle_cv_.notify_all();
    }
  }
  std::mutex mu_;
  std::condition_variable cv_, idle_cv_;
  std::deque<std::function<void()>> jobs_;
  std::vector<std::thread> workers_;
  int running_ = 0;
  bool stop_ = false;
};

struct CreateSessionRequest {
  std::optional<std::uint64_t> seed;       // scene seed
  std::optional<int> scene_index;          // index into the held-out scene list
  std::optional<std::string> denoiser;     // checkpoint override
  std::optional<std::string> classifier;   // checkpoint override
  std::optional<double> tau;
  std::optional<std::string> attention;    // "cam" | "oracle"
};

struct SessionHandle {
  std::string id;
  std::string state;     // receiver state
  std::string tx_state;
  int round = 0;
  bool step1_ready = false;
  bool stepN_ready = false;  // reconstruction of the current round is ready
  std::vector<int> ready_rounds;
  std::string error;     // last background failure, if any
};

struct LedgerView {
  BandwidthLedger ledger;
  double cr = 0.0;
};

class Gateway {
 public:
  explicit Gateway(ExperimentConfig cfg, int workers = 1) : cfg_(std::move(cfg)), pool_(workers) {}
  ~Gateway() { pool_.drain(); }

  const ExperimentConfig& config() const { return cfg_; }

  /// Uses preloaded models for sessions without checkpoint overrides.
  void set_models(std::shared_ptr<const Models> m) {
    std::lock_guard lk(mu_);
    default_models_ = std::move(m);
  }

  SessionHandle create_session(const CreateSessionRequest& req) {
    ExperimentConfig c = cfg_;
    if (req.tau) c.attention.tau = *req.tau;
    if (req.attention) c.attention.source = parse_source(*req.attention);
    require(c.attention.tau >= 0.0 && c.attention.tau < 1.0, ErrorCode::BadThreshold, "tau must lie in [0,1)");
    const bool custom = req.denoiser || req.classifier || req.attention;
    std::shared_ptr<const Models> models = default_models();
    if (custom || !models) models = load_models_for(c, req);

    SceneBundle scene;
    if (req.scene_index) {
      require(*req.scene_index >= 0, ErrorCode::BadConfig, "scene_index must be >= 0");
      scene = generate_scene(random_scene_spec(derive_seed(c.test_seed, static_cast<std::uint64_t>(*req.scene_index)),
                                               c.generator));
    } else {
      scene = generate_scene(random_scene_spec(req.seed.value_or(0), c.generator));
    }

    auto entry = std::make_shared<Entry>();
    entry->session = std::make_unique<Session>(scene, models, c.session("interactive", scene.seed));
    std::string id;
    {
      std::lock_guard lk(mu_);
      id = "s" + std::to_string(++next_id_);
      sessions_[id] = entry;
    }
    std::lock_guard lk(entry->mu);
    schedule(entry, entry->session->start());
    return snapshot(id, *entry);
  }

  SessionHandle get_state(const std::string& id) {
    auto e = find(id);
    std::lock_guard lk(e->mu);
    return snapshot(id, *e);
  }

  Raster get_reconstruction(const std::string& id, int round) {
    auto e = find(id);
    std::lock_guard lk(e->mu);
    const auto it = e->recons.find(round);
    require(it != e->recons.end(), ErrorCode::NotReady,
            "reconstruction for round " + std::to_string(round) + " is not available");
    return it->second;
  }

  /// Returns the new round number.
  int post_feedback(const std::string& id, const Feedback& fb) {
    auto e = find(id);
    std::lock_guard lk(e->mu);
    auto req = e->session->feedback(fb);
    const int round = req.round;
    schedule(e, std::move(req));
    return round;
  }

  SessionHandle finish(const std::string& id) {
    auto e = find(id);
    std::lock_guard lk(e->mu);
    e->session->finish();
    return snapshot(id, *e);
  }

  LedgerView get_ledger(const std::string& id) {
    auto e = find(id);
    std::lock_guard lk(e->mu);
    const auto& l = e->session->transcript().ledger;
    return {l, compression_rate(l)};
  }

  SessionTranscript transcript(const std::string& id) {
    auto e = find(id);
    std::lock_guard lk(e->mu);
    return e->session->transcript();
  }

  /// Waits for all queued sampling jobs.
  void wait_idle() { pool_.drain(); }

  const Lexicon& lexicon() const { return lexicon_; }

 private:
  struct Entry {
    std::mutex mu;
    std::unique_ptr<Session> session;
    std::map<int, Raster> recons;
    std::string error;
  };

  std::shared_ptr<const Models> default_models() {
    std::lock_guard lk(mu_);
    return default_models_;
  }

  std::shared_ptr<Models> load_models_for(const ExperimentConfig& c, const CreateSessionRequest& req) {
    auto m = std::make_shared<Models>();
    m->lexicon = c.lexicon();
    const auto load = [](auto& net, const std::filesystem::path& p, const char* what) {
      try {
        checkpoint_load(net, p);
      } catch (const Error& e) {
        fail(ErrorCode::ModelMissing, std::string(what) + " checkpoint unusable (" + p.string() + "): " + e.what());
      }
    };
    if (c.attention.source == AttentionSource::Cam) {
      auto cl = ClassifierModel::make_default(c.generator.height, c.generator.width, 0);
      load(cl.net(), req.classifier ? std::filesystem::path(*req.classifier) : cfg_.classifier_path(), "classifier");
      m->classifier = std::make_shared<const ClassifierModel>(std::move(cl));
    }
    auto d = make_denoiser(c);
    load(d.net(), req.denoiser ? std::filesystem::path(*req.denoiser) : cfg_.denoiser_path(), "denoiser");
    m->denoiser = std::make_shared<const LearnedDenoiser>(std::move(d));
    return m;
  }

  std::shared_ptr<Entry> find(const std::string& id) {
    std::lock_guard lk(mu_);
    const auto it = sessions_.find(id);
    require(it != sessions_.end(), ErrorCode::UnknownSession, "unknown session '" + id + "'");
    return it->second;
  }

  // Caller holds e->mu.
  void schedule(const std::shared_ptr<Entry>& e, ReconRequest req) {
    const Session* s = e->session.get();
    pool_.submit([e, s, req = std::move(req)] {
      try {
        Raster r = s->reconstruct(req);
        std::lock_guard lk(e->mu);
        e->session->add_reconstruction(req.round, r);
        e->recons[req.round] = std::move(r);
      } catch (const std::exception& ex) {
        std::lock_guard lk(e->mu);
        e->error = ex.what();
      }
    });
  }

  static SessionHandle snapshot(const std::string& id, const Entry& e) {
    SessionHandle h;
    h.id = id;
    h.state = state_name(e.session->receiver().state());
    h.tx_state = state_name(e.session->transmitter().state());
    h.round = e.session->receiver().round();
    for (const auto& [r, _] : e.recons) h.ready_rounds.push_back(r);
    h.step1_ready = e.recons.count(0) > 0;
    h.stepN_ready = e.recons.count(h.round) > 0;
    h.error = e.error;
    return h;
  }

  ExperimentConfig cfg_;
  Lexicon lexicon_ = cfg_.lexicon();
  std::mutex mu_;
  std::shared_ptr<const Models> default_models_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::uint64_t next_id_ = 0;
  WorkerPool pool_;  // last: joins before the session table is destroyed
};

// ---- HTTP binding ----

inline int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::UnknownSession: return 404;
    case ErrorCode::NotReady: return 409;
    case ErrorCode::ProtocolViolation: return 409;
    case ErrorCode::FeedbackUnresolved: return 422;
    case ErrorCode::ModelMissing: return 503;
    default: return 400;
  }
}

inline nlohmann::json to_json(const SessionHandle& h) {
  return {{"id", h.id},
          {"state", h.state},
          {"tx_state", h.tx_state},
          {"round", h.round},
          {"step1_ready", h.step1_ready},
          {"stepN_ready", h.stepN_ready},
          {"ready_rounds", h.ready_rounds},
          {"error", h.error}};
}

inline nlohmann::json to_json(const LedgerView& v) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : v.ledger.entries)
    entries.push_back({{"round", e.round}, {"step", step_name(e.step)}, {"bytes", e.bytes}});
  return {{"entries", entries},
          {"raw_bytes", v.ledger.raw_bytes},
          {"semantic_bytes", v.ledger.semantic_bytes()},
          {"cr", v.cr}};
}

inline nlohmann::json lexicon_json(const Lexicon& lex) {
  nlohmann::json classes = nlohmann::json::array(), terms = nlohmann::json::array();
  for (int c = 0; c < kNumClasses; ++c) classes.push_back({{"id", c}, {"name", class_name(c)}});
  for (const auto& [t, c] : lex) terms.push_back({{"term", t}, {"class", c == kAllClasses ? "all" : class_name(c)}});
  return {{"classes", classes}, {"terms", terms}};
}

inline Feedback feedback_from_json(const nlohmann::json& j) {
  if (j.contains("label")) {
    const auto& l = j.at("label");
    if (l.is_number_integer()) return ClassLabel{l.get<int>()};
    const std::string name = l.get<std::string>();
    for (int c = 0; c < kNumClasses; ++c)
      if (class_name(c) == name) return ClassLabel{c};
    fail(ErrorCode::ClassOutOfRange, "unknown class label '" + name + "'");
  }
  if (j.contains("text")) return TextPrompt{j.at("text").get<std::string>()};
  fail(ErrorCode::BadConfig, "feedback body needs \"label\" or \"text\"");
}

/// Registers the routes on `server`; the gateway must outlive it.
inline void bind_http(httplib::Server& server, Gateway& gw) {
  using nlohmann::json;
  const auto send_error = [&gw](httplib::Response& res, ErrorCode code, const std::string& msg) {
    json body{{"error", error_name(code)}, {"message", msg}};
    if (code == ErrorCode::FeedbackUnresolved) body["hint"] = lexicon_json(gw.lexicon())["terms"];
    res.status = http_status(code);
    res.set_content(body.dump(), "application/json");
  };
  const auto guard = [send_error](auto fn) {
    return [fn, send_error](const httplib::Request& req, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
      try {
        fn(req, res);
      } catch (const Error& e) {
        send_error(res, e.code(), e.what());
      } catch (const json::exception& e) {
        send_error(res, ErrorCode::BadConfig, std::string("bad request body: ") + e.what());
      } catch (const std::exception& e) {
        res.status = 500;
        res.set_content(json{{"error", "Internal"}, {"message", e.what()}}.dump(), "application/json");
      }
    };
  };
  const auto body_json = [](const httplib::Request& req) { return req.body.empty() ? json::object() : json::parse(req.body); };

  server.Post("/sessions", guard([&gw, body_json](const httplib::Request& req, httplib::Response& res) {
    const json b = body_json(req);
    CreateSessionRequest r;
    if (b.contains("seed")) r.seed = b.at("seed").get<std::uint64_t>();
    if (b.contains("scene_index")) r.scene_index = b.at("scene_index").get<int>();
    if (b.contains("denoiser")) r.denoiser = b.at("denoiser").get<std::string>();
    if (b.contains("classifier")) r.classifier = b.at("classifier").get<std::string>();
    if (b.contains("tau")) r.tau = b.at("tau").get<double>();
    if (b.contains("attention")) r.attention = b.at("attention").get<std::string>();
    json out = to_json(gw.create_session(r));
    out["lexicon"] = lexicon_json(gw.lexicon());
    res.status = 201;
    res.set_content(out.dump(), "application/json");
  }));
  server.Get(R"(/sessions/([^/]+))", guard([&gw](const httplib::Request& req, httplib::Response& res) {
    res.set_content(to_json(gw.get_state(req.matches[1])).dump(), "application/json");
  }));
  server.Get(R"(/sessions/([^/]+)/reconstruction)", guard([&gw](const httplib::Request& req, httplib::Response& res) {
    int round = 0;
    if (req.has_param("round")) {
      const std::string v = req.get_param_value("round");
      std::size_t used = 0;
      try {
        round = std::stoi(v, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      require(used == v.size() && used > 0, ErrorCode::BadConfig, "round must be an integer");
    }
    const Bytes ppm = encode_raster(gw.get_reconstruction(req.matches[1], round));
    res.set_content(std::string(ppm.begin(), ppm.end()), "image/x-portable-pixmap");
  }));
  server.Post(R"(/sessions/([^/]+)/feedback)", guard([&gw, body_json](const httplib::Request& req, httplib::Response& res) {
    const int round = gw.post_feedback(req.matches[1], feedback_from_json(body_json(req)));
    res.set_content(json{{"accepted", true}, {"round", round}}.dump(), "application/json");
  }));
  server.Post(R"(/sessions/([^/]+)/finish)", guard([&gw](const httplib::Request& req, httplib::Response& res) {
    res.set_content(to_json(gw.finish(req.matches[1])).dump(), "application/json");
  }));
  server.Get(R"(/sessions/([^/]+)/ledger)", guard([&gw](const httplib::Request& req, httplib::Response& res) {
    res.set_content(to_json(gw.get_ledger(req.matches[1])).dump(), "application/json");
  }));
  server.Get("/lexicon", guard([&gw](const httplib::Request&, httplib::Response& res) {
    res.set_content(lexicon_json(gw.lexicon()).dump(), "application/json");
  }));
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

}  // namespace semcom
