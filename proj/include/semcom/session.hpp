#pragma once

// One transmitter/receiver pair over an in-memory lossless ordered channel,
// the transcript it produces, and transcript export, import and replay.

#include <functional>
#include <memory>
#include <mutex>
#include <sstream>

#include "json.hpp"

#include "semcom/diffusion.hpp"
#include "semcom/evaltasks.hpp"
#include "semcom/protocol.hpp"
#include "semcom/raster.hpp"

namespace semcom {

struct Models {
  std::shared_ptr<const LearnedDenoiser> denoiser;
  std::shared_ptr<const ClassifierModel> classifier;
  Lexicon lexicon = default_lexicon();
};

struct SessionConfig {
  AttentionConfig attention;
  TransmitterConfig tx;
  std::uint64_t seed = 0;
  bool reconstruct = true;  // false skips diffusion sampling (payload-only runs)
  std::string variant;
  /// Applied to every frame in flight; exists to exercise corruption paths.
  std::function<void(Bytes&)> tamper;
};

struct TranscriptEvent {
  int index = 0;
  std::string actor;      // "tx" or "rx"
  std::string event;      // event name fed to the machine
  std::string direction;  // "downlink", "uplink" or "local"
  int round = 0;
  Bytes frame;            // frame emitted by this transition, if any
  std::string tx_state, rx_state;
  std::uint64_t digest() const { return frame.empty() ? 0 : fnv1a64(frame); }
  friend bool operator==(const TranscriptEvent&, const TranscriptEvent&) = default;
};

struct Reconstruction {
  int round = 0;
  Raster image;
  std::uint64_t digest() const { return fnv1a64(image.pixels); }
  friend bool operator==(const Reconstruction&, const Reconstruction&) = default;
};

struct SessionTranscript {
  std::string variant;
  std::uint64_t scene_seed = 0;
  std::uint64_t session_seed = 0;
  int height = 0, width = 0;
  std::array<int, kNumClasses> class_counts{};
  std::vector<ObjectRecord> objects;
  std::vector<TranscriptEvent> events;
  BandwidthLedger ledger;
  std::vector<Reconstruction> recons;

  int rounds() const {
    int r = 0;
    for (const auto& e : ledger.entries)
      if (e.step == Step::Update) r = std::max(r, e.round);
    return r;
  }
  const Reconstruction* recon(int round) const {
    for (const auto& r : recons)
      if (r.round == round) return &r;
    return nullptr;
  }
  std::uint64_t digest() const {
    std::uint64_t h = fnv1a64({});
    for (const auto& e : events) {
      h = fnv1a64(e.frame, h);
      const std::string s = e.actor + e.event + e.tx_state + e.rx_state;
      h = fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()), h);
    }
    for (const auto& r : recons) h = fnv1a64(r.image.pixels, h);
    return h;
  }
  friend bool operator==(const SessionTranscript&, const SessionTranscript&) = default;
};

/// Samples the reverse chain for one request; round r uses rng stream
/// derive_seed(seed, r).
inline Raster reconstruct(const LearnedDenoiser& den, const ReconRequest& req, std::uint64_t seed) {
  const Condition cond = make_condition(req.seg, req.edge, den.arch().num_classes);
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(req.round)));
  return to_raster(sample<float>({3, req.seg.height(), req.seg.width()}, cond, den.schedule(), den, rng));
}

/// Stepwise session driver. Each protocol step runs both machines to
/// quiescence and returns the receiver's reconstruction request; sampling is
/// left to the caller so it can run elsewhere.
class Session {
 public:
  Session(SceneBundle scene, std::shared_ptr<const Models> models, SessionConfig cfg)
      : scene_(std::move(scene)),
        models_(std::move(models)),
        cfg_(std::move(cfg)),
        attention_(models_->lexicon, cfg_.attention, models_->classifier),
        tx_(scene_, attention_, cfg_.tx) {
    require(!cfg_.reconstruct || models_->denoiser, ErrorCode::ModelMissing, "session needs a denoiser");
    tr_.variant = cfg_.variant;
    tr_.scene_seed = scene_.seed;
    tr_.session_seed = cfg_.seed;
    tr_.height = scene_.height();
    tr_.width = scene_.width();
    tr_.class_counts = scene_.class_counts;
    tr_.objects = scene_.objects;
    tr_.ledger.raw_bytes = raw_rgb_bytes(scene_.height(), scene_.width());
  }
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const SceneBundle& scene() const { return scene_; }
  const SessionConfig& config() const { return cfg_; }
  const AttentionResolver& attention() const { return attention_; }
  const Transmitter& transmitter() const { return tx_; }
  const Receiver& receiver() const { return rx_; }
  const SessionTranscript& transcript() const { return tr_; }

  ReconRequest start() {
    const Bytes init = emit_tx(TxStart{}, "downlink");
    tr_.ledger.add(0, Step::Init, init.size());
    auto out = deliver_rx(init);
    record_tx(TxDelivered{});
    return std::move(*out.recon);
  }

  ReconRequest feedback(const Feedback& fb) {
    // Resolve first so an unresolvable prompt leaves both machines untouched.
    attention_.classes(fb);
    auto up = rx_.on_event(RxOperatorFeedback{fb});
    const Bytes fb_frame = encode_frame(*up.reply);
    log("rx", "operator-feedback", "uplink", fb_frame);
    tr_.ledger.add(rx_.round() + 1, Step::Feedback, fb_frame.size());
    const Message got = decode_frame(transmit(fb_frame));
    const Bytes update = emit_tx(TxFeedback{std::get<FeedbackMsg>(got).feedback}, "downlink");
    tr_.ledger.add(tx_.round(), Step::Update, update.size());
    auto out = deliver_rx(update);
    record_tx(TxDelivered{});
    return std::move(*out.recon);
  }

  void finish() {
    const Bytes done = emit_tx(TxFinish{}, "downlink");
    tr_.ledger.add(tx_.round(), Step::Done, done.size());
    deliver_rx(done);
  }

  Raster reconstruct(const ReconRequest& req) const {
    require(models_->denoiser != nullptr, ErrorCode::ModelMissing, "no denoiser loaded");
    return semcom::reconstruct(*models_->denoiser, req, cfg_.seed);
  }

  void add_reconstruction(int round, Raster r) {
    require(r.width == scene_.width() && r.height == scene_.height(), ErrorCode::DimMismatch,
            "reconstruction dims differ from scene");
    tr_.recons.push_back({round, std::move(r)});
  }

  /// Samples and records the reconstruction for `req` when enabled.
  void complete(const ReconRequest& req) {
    if (cfg_.reconstruct) add_reconstruction(req.round, reconstruct(req));
  }

 private:
  Bytes transmit(Bytes frame) const {
    if (cfg_.tamper) cfg_.tamper(frame);
    return frame;
  }

  void log(std::string actor, std::string event, std::string dir, Bytes frame) {
    tr_.events.push_back({static_cast<int>(tr_.events.size()), std::move(actor), std::move(event), std::move(dir),
                          std::max(tx_.round(), rx_.round()), std::move(frame),
                          std::string(state_name(tx_.state())), std::string(state_name(rx_.state()))});
  }

  Bytes emit_tx(const TxEvent& ev, const char* dir) {
    auto msg = tx_.on_event(ev);
    Bytes frame = encode_frame(*msg);
    log("tx", std::string(event_name(ev)), dir, frame);
    return frame;
  }

  void record_tx(const TxEvent& ev) {
    tx_.on_event(ev);
    log("tx", std::string(event_name(ev)), "local", {});
  }

  RxOutput deliver_rx(const Bytes& frame) {
    RxEvent ev = RxFrame{decode_frame(transmit(frame))};
    auto out = rx_.on_event(ev);
    log("rx", std::string(event_name(ev)), "local", {});
    return out;
  }

  SceneBundle scene_;
  std::shared_ptr<const Models> models_;
  SessionConfig cfg_;
  AttentionResolver attention_;
  Transmitter tx_;
  Receiver rx_;
  SessionTranscript tr_;
};

/// Scripted feedback, or an interactive hook called after each
/// reconstruction that returns the next feedback (nullopt ends the session).
using FeedbackHook = std::function<std::optional<Feedback>(int round, const Raster* latest)>;

inline SessionTranscript run_session(const SceneBundle& scene, const std::vector<Feedback>& policy,
                                     std::shared_ptr<const Models> models, SessionConfig cfg) {
  Session s(scene, std::move(models), std::move(cfg));
  s.complete(s.start());
  for (const auto& fb : policy) s.complete(s.feedback(fb));
  s.finish();
  return s.transcript();
}

inline SessionTranscript run_session(const SceneBundle& scene, const FeedbackHook& hook,
                                     std::shared_ptr<const Models> models, SessionConfig cfg) {
  Session s(scene, std::move(models), std::move(cfg));
  s.complete(s.start());
  for (;;) {
    const auto& recons = s.transcript().recons;
    const auto fb = hook(s.receiver().round(), recons.empty() ? nullptr : &recons.back().image);
    if (!fb) break;
    s.complete(s.feedback(*fb));
  }
  s.finish();
  return s.transcript();
}

/// Feeds the recorded frames back through fresh machines (the transmitter
/// re-derives its frames from the scene) and checks that every emitted
/// frame, every state and every ledger entry matches the record.
inline void replay_transcript(const SessionTranscript& tr, const SceneBundle& scene, const Models& models,
                              const SessionConfig& cfg) {
  require(scene.seed == tr.scene_seed, ErrorCode::ProtocolViolation, "replay scene differs from transcript");
  AttentionResolver attention(models.lexicon, cfg.attention, models.classifier);
  Transmitter tx(scene, attention, cfg.tx);
  Receiver rx;
  BandwidthLedger ledger;
  ledger.raw_bytes = raw_rgb_bytes(scene.height(), scene.width());
  std::optional<Feedback> pending;
  const auto mismatch = [](const TranscriptEvent& e, const std::string& what) {
    fail(ErrorCode::ProtocolViolation, "replay diverged at event " + std::to_string(e.index) + ": " + what);
  };
  for (const auto& e : tr.events) {
    Bytes frame;
    if (e.actor == "tx") {
      TxEvent ev;
      if (e.event == "start") ev = TxStart{};
      else if (e.event == "delivered") ev = TxDelivered{};
      else if (e.event == "finish") ev = TxFinish{};
      else if (e.event == "feedback" && pending) ev = TxFeedback{*pending};
      else mismatch(e, "unknown transmitter event " + e.event);
      if (auto m = tx.on_event(ev)) frame = encode_frame(*m);
      if (e.event == "start") ledger.add(0, Step::Init, frame.size());
      if (e.event == "feedback") ledger.add(tx.round(), Step::Update, frame.size());
      if (e.event == "finish") ledger.add(tx.round(), Step::Done, frame.size());
    } else if (e.event == "operator-feedback") {
      if (e.frame.empty()) mismatch(e, "feedback event without frame");
      pending = std::get<FeedbackMsg>(decode_frame(e.frame)).feedback;
      if (auto out = rx.on_event(RxOperatorFeedback{*pending}); out.reply) frame = encode_frame(*out.reply);
      ledger.add(rx.round() + 1, Step::Feedback, frame.size());
    } else {
      // Receiver consumed the most recent downlink frame.
      const TranscriptEvent* last = nullptr;
      for (const auto& p : tr.events) {
        if (p.index >= e.index) break;
        if (p.actor == "tx" && !p.frame.empty()) last = &p;
      }
      if (!last) mismatch(e, "receiver event without a preceding frame");
      rx.on_event(RxFrame{decode_frame(last->frame)});
    }
    if (frame != e.frame) mismatch(e, "frame bytes differ");
    if (state_name(tx.state()) != e.tx_state || state_name(rx.state()) != e.rx_state) mismatch(e, "state differs");
  }
  require(ledger == tr.ledger, ErrorCode::ProtocolViolation, "replayed ledger differs from transcript");
}

// Transcript files are JSON lines: one "session" header, then "event",
// "ledger" and "reconstruction" records, then an "end" record with the digest.

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string export_transcript(const SessionTranscript& tr) {
  using nlohmann::json;
  std::string out;
  const auto line = [&](const json& j) { out += j.dump() + "\n"; };
  json objs = json::array();
  for (const auto& o : tr.objects) objs.push_back({o.class_id, o.bbox.x0, o.bbox.y0, o.bbox.x1, o.bbox.y1});
  line({{"record", "session"},
        {"variant", tr.variant},
        {"scene_seed", tr.scene_seed},
        {"session_seed", tr.session_seed},
        {"height", tr.height},
        {"width", tr.width},
        {"class_counts", tr.class_counts},
        {"objects", objs},
        {"raw_bytes", tr.ledger.raw_bytes}});
  for (const auto& e : tr.events)
    line({{"record", "event"},
          {"index", e.index},
          {"actor", e.actor},
          {"event", e.event},
          {"direction", e.direction},
          {"round", e.round},
          {"bytes", e.frame.size()},
          {"digest", hex64(e.digest())},
          {"frame", to_hex(e.frame)},
          {"tx_state", e.tx_state},
          {"rx_state", e.rx_state}});
  for (const auto& l : tr.ledger.entries)
    line({{"record", "ledger"}, {"round", l.round}, {"step", step_name(l.step)}, {"bytes", l.bytes}});
  for (const auto& r : tr.recons)
    line({{"record", "reconstruction"},
          {"round", r.round},
          {"height", r.image.height},
          {"width", r.image.width},
          {"digest", hex64(r.digest())},
          {"pixels", to_hex(r.image.pixels)}});
  line({{"record", "end"}, {"digest", hex64(tr.digest())}});
  return out;
}

inline Step parse_step(std::string_view s) {
  for (Step st : {Step::Init, Step::Feedback, Step::Update, Step::Done})
    if (step_name(st) == s) return st;
  fail(ErrorCode::MalformedPayload, "unknown ledger step '" + std::string(s) + "'");
}

inline SessionTranscript import_transcript(std::string_view text) {
  using nlohmann::json;
  SessionTranscript tr;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = false, end = false;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      const std::string rec = j.at("record");
      if (rec == "session") {
        tr.variant = j.at("variant");
        tr.scene_seed = j.at("scene_seed");
        tr.session_seed = j.at("session_seed");
        tr.height = j.at("height");
        tr.width = j.at("width");
        tr.class_counts = j.at("class_counts");
        for (const auto& o : j.at("objects"))
          tr.objects.push_back({o.at(0).get<int>(), {o.at(1), o.at(2), o.at(3), o.at(4)}});
        tr.ledger.raw_bytes = j.at("raw_bytes");
        header = true;
      } else if (rec == "event") {
        TranscriptEvent e;
        e.index = j.at("index");
        e.actor = j.at("actor");
        e.event = j.at("event");
        e.direction = j.at("direction");
        e.round = j.at("round");
        e.frame = from_hex(j.at("frame").get<std::string>());
        e.tx_state = j.at("tx_state");
        e.rx_state = j.at("rx_state");
        require(hex64(e.digest()) == j.at("digest").get<std::string>(), ErrorCode::MalformedPayload,
                "event digest mismatch");
        tr.events.push_back(std::move(e));
      } else if (rec == "ledger") {
        tr.ledger.add(j.at("round"), parse_step(j.at("step").get<std::string>()), j.at("bytes"));
      } else if (rec == "reconstruction") {
        Reconstruction r;
        r.round = j.at("round");
        r.image = {j.at("width"), j.at("height"), 3, from_hex(j.at("pixels").get<std::string>())};
        require(r.image.pixels.size() == static_cast<std::size_t>(r.image.width) * r.image.height * 3,
                ErrorCode::MalformedPayload, "reconstruction pixel count mismatch");
        tr.recons.push_back(std::move(r));
      } else if (rec == "end") {
        require(j.at("digest").get<std::string>() == hex64(tr.digest()), ErrorCode::MalformedPayload,
                "transcript digest mismatch");
        end = true;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedPayload, std::string("transcript parse error: ") + e.what());
  }
  require(header && end, ErrorCode::MalformedPayload, "transcript missing session header or end record");
  return tr;
}

inline void save_transcript(const std::filesystem::path& p, const SessionTranscript& tr) {
  const std::string s = export_transcript(tr);
  write_file(p, Bytes(s.begin(), s.end()));
}

inline SessionTranscript load_transcript(const std::filesystem::path& p) {
  const Bytes b = read_file(p);
  return import_transcript(std::string_view(reinterpret_cast<const char*>(b.data()), b.size()));
}

}  // namespace semcom
