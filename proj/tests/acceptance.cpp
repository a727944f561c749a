// Acceptance runner: one PASS/FAIL line per criterion P1..P10.
// Trained models are cached under --cache keyed by the config digest.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <deque>
#include <numeric>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "semcom/semcom.hpp"

using namespace semcom;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Bytes golden(const std::string& name) {
  std::ifstream in(std::string(SEMCOM_GOLDEN_DIR) + "/" + name);
  std::string s;
  in >> s;
  return from_hex(s);
}

// ---- P1 ----

Outcome codec_exactness() {
  Rng rng(101);
  int patch_ok = 0, seg_ok = 0;
  for (int i = 0; i < 1000; ++i) {
    const int h = 1 + static_cast<int>(rng.uniform_int(0, 63)), w = 1 + static_cast<int>(rng.uniform_int(0, 127));
    const int n = 1 + static_cast<int>(rng.uniform_int(0, 15));
    const double p = rng.uniform(0.0, 0.5) * rng.uniform();
    MaskedEdge x(h, w, 0);
    for (auto& v : x) v = rng.bernoulli(p);
    const auto pay = encode_patches(x, n);
    const auto bytes = to_bytes(pay);
    patch_ok += decode_patches(bytes) == x && patches_from_bytes(bytes) == pay && to_bytes(patches_from_bytes(bytes)) == bytes;
  }
  for (int i = 0; i < 1000; ++i) {
    const int h = 1 + static_cast<int>(rng.uniform_int(0, 63)), w = 1 + static_cast<int>(rng.uniform_int(0, 127));
    const int k = 1 + static_cast<int>(rng.uniform_int(0, i % 10 == 0 ? 254 : 7));
    const double stay = rng.uniform(0.0, 0.99);
    ClassMap seg(h, w, 0);
    std::uint8_t cur = 0;
    for (auto& v : seg) {
      if (!rng.bernoulli(stay)) cur = static_cast<std::uint8_t>(rng.uniform_int(0, k - 1));
      v = cur;
    }
    const auto pay = encode_seg(seg, k, rng.bernoulli(0.5));
    const auto bytes = to_bytes(pay);
    seg_ok += decode_seg(bytes) == seg && seg_from_bytes(bytes) == pay;
  }
  MaskedEdge pe(4, 6, 0);
  pe(0, 0) = pe(1, 5) = pe(3, 3) = 1;
  ClassMap sg(2, 3, 0);
  sg(0, 2) = sg(1, 0) = sg(1, 1) = sg(1, 2) = 1;
  const auto pp = encode_patches(pe, 4);
  const auto sp = encode_seg(sg, kNumClasses, false);
  int golden_ok = 0;
  golden_ok += to_bytes(pp) == golden("patch_4x6.hex");
  golden_ok += to_bytes(sp) == golden("seg_2x3.hex");
  golden_ok += encode_frame(SemInit{sp}) == golden("frame_sem_init.hex");
  golden_ok += encode_frame(SemUpdate{pp}) == golden("frame_sem_update.hex");
  golden_ok += encode_frame(FeedbackMsg{TextPrompt{"cars"}}) == golden("frame_feedback_text.hex");
  golden_ok += encode_frame(SessionDone{}) == golden("frame_session_done.hex");
  return {patch_ok == 1000 && seg_ok == 1000 && golden_ok == 6,
          fmt("patch round trips %d/1000, seg round trips %d/1000, golden fixtures %d/6", patch_ok, seg_ok, golden_ok)};
}

// ---- P2 ----

struct Moments {
  double mean = 0, var = 0, se_mean = 0, se_var = 0;
};

Moments moments(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= n;
  double m2 = 0, m4 = 0;
  for (double x : v) {
    const double d = x - m.mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m.var = m2 / (n - 1);
  m4 /= n;
  m.se_mean = std::sqrt(m.var / n);
  m.se_var = std::sqrt(std::max(0.0, m4 - m.var * m.var) / n);
  return m;
}

Outcome forward_consistency() {
  const auto sched = make_schedule(200, 1e-4, 0.02);
  const Tensor<double> x0 = [] {
    Tensor<double> t(1, 2, 2);
    t[0] = 0.8, t[1] = -0.5, t[2] = 0.1, t[3] = -1.0;
    return t;
  }();
  const int n = 100000;
  const std::vector<int> checkpoints = {50, 200};
  std::map<int, std::array<std::vector<double>, 4>> at;
  for (int t : checkpoints)
    for (auto& v : at[t]) v.reserve(n);
  Rng rng(202);
  for (int i = 0; i < n; ++i) {
    Tensor<double> x = x0;
    for (int t = 1; t <= 200; ++t) {
      x = forward_step(x, t, sched, rng);
      if (auto it = at.find(t); it != at.end())
        for (int j = 0; j < 4; ++j) it->second[static_cast<std::size_t>(j)].push_back(x[static_cast<std::size_t>(j)]);
    }
  }
  double worst = 0;
  for (int t : checkpoints) {
    const double a = sched.alpha(t);
    for (int j = 0; j < 4; ++j) {
      const auto m = moments(at[t][static_cast<std::size_t>(j)]);
      worst = std::max(worst, std::abs(m.mean - std::sqrt(a) * x0[static_cast<std::size_t>(j)]) / m.se_mean);
      worst = std::max(worst, std::abs(m.var - (1.0 - a)) / m.se_var);
    }
  }
  return {worst < 3.0, fmt("%d trajectories, t in {50,200}, worst deviation %.2f standard errors", n, worst)};
}

// ---- P3 ----

Outcome sampling_chain() {
  const auto sched = make_schedule(200, 1e-4, 0.02);
  const std::vector<AnalyticGMDenoiser<double>::Component> comps = {{0.3, {-0.6, 0.4}}, {0.7, {0.5, -0.3}}};
  const AnalyticGMDenoiser<double> den(comps, 0.1, sched);
  Rng rng(303);
  const int n = 5000;
  std::array<std::array<double, 2>, 2> sum{};
  std::array<int, 2> count{};
  for (int i = 0; i < n; ++i) {
    const auto x = sample_raw<double>({1, 1, 2}, Condition{}, sched, den, rng);
    double d[2];
    for (int k = 0; k < 2; ++k)
      d[k] = std::hypot(x[0] - comps[static_cast<std::size_t>(k)].mean[0], x[1] - comps[static_cast<std::size_t>(k)].mean[1]);
    const int k = d[0] < d[1] ? 0 : 1;
    ++count[static_cast<std::size_t>(k)];
    sum[static_cast<std::size_t>(k)][0] += x[0];
    sum[static_cast<std::size_t>(k)][1] += x[1];
  }
  double mean_err = 0, weight_err = 0;
  for (std::size_t k = 0; k < 2; ++k) {
    if (count[k] == 0) return {false, "a component received no samples"};
    for (std::size_t j = 0; j < 2; ++j) mean_err = std::max(mean_err, std::abs(sum[k][j] / count[k] - comps[k].mean[j]));
    weight_err = std::max(weight_err, std::abs(static_cast<double>(count[k]) / n - comps[k].weight));
  }
  return {mean_err < 0.1 && weight_err < 0.05,
          fmt("%d samples, max mean error %.4f, max weight error %.4f (weights %.3f/%.3f)", n, mean_err, weight_err,
              static_cast<double>(count[0]) / n, static_cast<double>(count[1]) / n)};
}

// ---- P4 ----

Outcome gradient_correctness() {
  double worst = 0;
  std::string worst_case;
  int checks = 0;
  for (const auto& c : fdcheck::gradcheck_cases())
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const double e = fdcheck::gradcheck(c, seed, 1e-3).max_rel_error;
      ++checks;
      if (e > worst) worst = e, worst_case = c.name;
    }
  return {worst < 1e-4, fmt("%d layer checks at step 1e-3, worst relative error %.2e (%s)", checks, worst, worst_case.c_str())};
}

// ---- P5 ----

Outcome cam_correctness() {
  Rng rng(505);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int c = 1 + static_cast<int>(rng.uniform_int(0, 63));
    const int h = 1 + static_cast<int>(rng.uniform_int(0, 15)), w = 1 + static_cast<int>(rng.uniform_int(0, 31));
    Tensor<float> f(c, h, w);
    for (auto& v : f.data()) v = static_cast<float>(rng.uniform(-3, 3));
    std::vector<double> wts(static_cast<std::size_t>(c));
    for (auto& v : wts) v = rng.uniform(-2, 2);
    const auto raw = cam_raw(f, wts);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0;
        for (int k = 0; k < c; ++k) s += wts[static_cast<std::size_t>(k)] * static_cast<double>(f(k, y, x));
        worst = std::max(worst, std::abs(raw(y, x) - s));
      }
  }
  return {worst <= 1e-6, fmt("200 random shapes, max |cam - brute force| = %.2e", worst)};
}

// ---- P6 ----

// Checks that a sequence of frame types is a prefix of Init (Update)* Done.
struct StepOrder {
  bool init = false, done = false;
  bool ok = true;
  void see(MessageType t) {
    if (done) ok = false;
    if (t == MessageType::SemInit) {
      if (init) ok = false;
      init = true;
    }
    if (t == MessageType::SemUpdate && !init) ok = false;
    if (t == MessageType::SessionDone) {
      if (!init) ok = false;
      done = true;
    }
  }
};

struct Enumeration {
  long sequences = 0;  // accepted event sequences explored
  long violations = 0;
};

SceneBundle protocol_scene() {
  SceneSpec spec;
  spec.width = 16;
  spec.height = 16;
  spec.seed = 6;
  spec.objects = {{kCar, 5, 10, 4, 2, 0}, {kPerson, 12, 8, 1, 4, 1}};
  return generate_scene(spec);
}

// Transmitter driven by arbitrary events.
void enumerate_tx(const Transmitter& tx, StepOrder order, int feedbacks, int depth, Enumeration& out) {
  ++out.sequences;
  if (depth == 0) return;
  const std::vector<TxEvent> events = {TxStart{}, TxDelivered{}, TxFeedback{ClassLabel{kCar}},
                                       TxFeedback{TextPrompt{"people"}}, TxFinish{}};
  for (const auto& ev : events) {
    Transmitter next = tx;
    std::optional<Message> m;
    try {
      m = next.on_event(ev);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ProtocolViolation) ++out.violations;
      continue;
    }
    StepOrder o = order;
    int fb = feedbacks + (std::holds_alternative<TxFeedback>(ev) ? 1 : 0);
    if (m) {
      o.see(message_type(*m));
      if (message_type(*m) == MessageType::SemUpdate && !std::holds_alternative<TxFeedback>(ev)) o.ok = false;
      if (message_type(*m) == MessageType::SemUpdate && next.round() != fb) o.ok = false;
    }
    if (!o.ok) {
      ++out.violations;
      continue;
    }
    enumerate_tx(next, o, fb, depth - 1, out);
  }
}

// Receiver fed arbitrary frames and operator events.
void enumerate_rx(const Receiver& rx, const std::vector<RxEvent>& events, StepOrder order, int replies, int updates,
                  int depth, Enumeration& out) {
  ++out.sequences;
  if (depth == 0) return;
  for (const auto& ev : events) {
    Receiver next = rx;
    RxOutput res;
    try {
      res = next.on_event(ev);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ProtocolViolation) ++out.violations;
      continue;
    }
    StepOrder o = order;
    int rep = replies, upd = updates;
    if (const auto* f = std::get_if<RxFrame>(&ev)) o.see(message_type(f->message));
    if (std::holds_alternative<RxFinish>(ev)) o.done = true;
    if (res.reply) {
      ++rep;
      if (!o.init || o.done || rep != upd + 1) o.ok = false;
    }
    if (res.recon) {
      const auto* f = std::get_if<RxFrame>(&ev);
      if (res.recon->round == 0) {
        if (!f || message_type(f->message) != MessageType::SemInit) o.ok = false;
      } else {
        // An update needs exactly one outstanding feedback.
        if (res.recon->round != upd + 1 || rep != upd + 1) o.ok = false;
        ++upd;
      }
    }
    if (!o.ok) {
      ++out.violations;
      continue;
    }
    enumerate_rx(next, events, o, rep, upd, depth - 1, out);
  }
}

// Both machines joined by an ordered lossless channel; the scheduler picks
// any of the seven actions at each step.
struct Joint {
  Transmitter tx;
  Receiver rx;
  std::deque<Message> down, up;
  StepOrder wire;
  int feedback_sent = 0, feedback_received = 0, updates = 0;
};

void enumerate_joint(const Joint& j, int depth, Enumeration& out) {
  ++out.sequences;
  if (depth == 0) return;
  for (int action = 0; action < 7; ++action) {
    Joint n = j;
    try {
      switch (action) {
        case 0:
          if (auto m = n.tx.on_event(TxStart{})) n.wire.see(message_type(*m)), n.down.push_back(*m);
          break;
        case 1:
          n.tx.on_event(TxDelivered{});
          break;
        case 2: {
          if (n.up.empty()) continue;
          const auto fb = std::get<FeedbackMsg>(n.up.front()).feedback;
          n.up.pop_front();
          ++n.feedback_received;
          if (auto m = n.tx.on_event(TxFeedback{fb})) {
            n.wire.see(message_type(*m));
            if (message_type(*m) == MessageType::SemUpdate) ++n.updates;
            n.down.push_back(*m);
          }
          break;
        }
        case 3:
          if (auto m = n.tx.on_event(TxFinish{})) n.wire.see(message_type(*m)), n.down.push_back(*m);
          break;
        case 4: {
          if (n.down.empty()) continue;
          const auto m = n.down.front();
          n.down.pop_front();
          n.rx.on_event(RxFrame{m});
          break;
        }
        case 5: {
          auto r = n.rx.on_event(RxOperatorFeedback{ClassLabel{kPerson}});
          if (r.reply) n.up.push_back(*r.reply), ++n.feedback_sent;
          break;
        }
        case 6:
          n.rx.on_event(RxFinish{});
          break;
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ProtocolViolation) ++out.violations;
      continue;
    }
    if (!n.wire.ok || n.updates > n.feedback_received || n.feedback_received > n.feedback_sent ||
        n.rx.round() > n.updates || n.tx.round() != n.updates) {
      ++out.violations;
      continue;
    }
    enumerate_joint(n, depth - 1, out);
  }
}

Outcome protocol_safety() {
  const auto scene = protocol_scene();
  const AttentionResolver resolver(default_lexicon(), {AttentionSource::Oracle, kDefaultTau, 1.5}, nullptr);
  Enumeration tx_enum, rx_enum, joint_enum;
  enumerate_tx(Transmitter(scene, resolver), {}, 0, 8, tx_enum);

  const std::vector<RxEvent> rx_events = {
      RxFrame{SemInit{encode_seg(scene.seg, kNumClasses)}},
      RxFrame{SemUpdate{encode_patches(instance_edges(scene.instance_map))}},
      RxFrame{SessionDone{}},
      RxFrame{FeedbackMsg{ClassLabel{kCar}}},
      RxOperatorFeedback{ClassLabel{kCar}},
      RxFinish{},
  };
  enumerate_rx(Receiver{}, rx_events, {}, 0, 0, 8, rx_enum);
  enumerate_joint(Joint{Transmitter(scene, resolver), Receiver{}, {}, {}, {}, 0, 0, 0}, 8, joint_enum);

  // Replay determinism with a fixed-seed, full-length sampler.
  ExperimentConfig cfg;
  cfg.denoiser_arch = {8, 2, 0.5, kNumClasses};
  auto models = std::make_shared<Models>();
  models->denoiser = std::make_shared<LearnedDenoiser>(make_denoiser(cfg));
  SessionConfig sc;
  sc.attention.source = AttentionSource::Oracle;
  bool replay_ok = true;
  for (const auto& s : sample_dataset(3, 66)) {
    sc.seed = derive_seed(99, s.seed);
    const std::vector<Feedback> policy = {ClassLabel{kCar}, TextPrompt{"people on the street"}};
    const auto a = run_session(s, policy, models, sc);
    const auto b = run_session(s, policy, models, sc);
    replay_ok = replay_ok && a == b && a.digest() == b.digest() && import_transcript(export_transcript(a)) == a;
    try {
      replay_transcript(a, s, *models, sc);
    } catch (const Error&) {
      replay_ok = false;
    }
  }
  const long violations = tx_enum.violations + rx_enum.violations + joint_enum.violations;
  return {violations == 0 && replay_ok,
          fmt("sequences explored: tx %ld, rx %ld, joint %ld; violations %ld; replay %s", tx_enum.sequences,
              rx_enum.sequences, joint_enum.sequences, violations, replay_ok ? "bit-identical" : "DIVERGED")};
}

// ---- trained models ----

struct Trained {
  ExperimentConfig cfg;
  std::shared_ptr<const Models> models;
  double train_seconds = 0;
  double init_val_loss = 0, final_val_loss = 0;
  bool cached = false;
};

Trained train_or_load(const fs::path& cache) {
  Trained t;
  t.cfg = ExperimentConfig::from(ConfigFile{});
  t.cfg.out = "-";
  const std::string text = t.cfg.dump();
  const std::string key = hex64(fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size())));
  t.cfg.out = cache / key;
  const fs::path marker = t.cfg.out / "trained.txt";
  if (fs::exists(marker)) {
    std::ifstream in(marker);
    in >> t.train_seconds;
    t.cached = true;
  } else {
    const auto t0 = std::chrono::steady_clock::now();
    const auto log = [](const std::string& s) { std::fprintf(stderr, "  %s\n", s.c_str()); };
    cmd_train(t.cfg, TrainTarget::Classifier, false, log);
    cmd_train(t.cfg, TrainTarget::Denoiser, false, log);
    t.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_text(marker, fmt("%.1f\n", t.train_seconds));
  }
  std::ifstream dl(t.cfg.out / "models" / "denoiser.log");
  std::string word;
  while (dl >> word) {
    if (word == "init_val_loss") dl >> t.init_val_loss;
    if (word == "val") dl >> t.final_val_loss;
  }
  t.models = load_models(t.cfg, true);
  return t;
}

std::vector<double> per_scene_cr(const std::vector<SessionTranscript>& trs, const std::string& variant) {
  std::vector<const SessionTranscript*> sel;
  for (const auto& t : trs)
    if (t.variant == variant) sel.push_back(&t);
  std::sort(sel.begin(), sel.end(), [](auto* a, auto* b) { return a->scene_seed < b->scene_seed; });
  std::vector<double> out;
  for (const auto* t : sel) out.push_back(compression_rate(t->ledger));
  return out;
}

std::vector<SessionTranscript> run_variants(const Trained& tr, const std::vector<std::string>& names, bool reconstruct) {
  ExperimentConfig c = tr.cfg;
  c.reconstruct = reconstruct;
  std::vector<SessionTranscript> out;
  const auto scenes = sample_dataset(c.test_scenes, c.test_seed, c.generator);
  for (const auto& name : names) {
    const auto it = std::find_if(c.variants.begin(), c.variants.end(), [&](const Variant& v) { return v.name == name; });
    for (const auto& s : scenes) out.push_back(run_session(s, it->policy, tr.models, c.session(name, s.seed)));
  }
  return out;
}

// ---- P7 ----

Outcome cr_ordering(const Trained& tr) {
  const auto trs = run_variants(tr, {"No-Attn", "Car-CAM-Attn", "All-Attn"}, false);
  const auto step1 = per_scene_cr(trs, "No-Attn"), one = per_scene_cr(trs, "Car-CAM-Attn"),
             all = per_scene_cr(trs, "All-Attn");
  const auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  const auto a = paired_t_test(step1, one), b = paired_t_test(one, all);
  return {step1.size() >= 50 && a.p_greater < 0.05 && b.p_greater < 0.05,
          fmt("%zu scenes, mean CR %.2f > %.2f > %.2f, paired p = %.2g, %.2g", step1.size(), mean(step1), mean(one),
              mean(all), a.p_greater, b.p_greater)};
}

// ---- P8 ----

Outcome task_adaptation(const Trained& tr) {
  const auto trs = run_variants(tr, {"No-Attn", "Car-CAM-Attn", "Person-CAM-Attn"}, true);
  const auto rep = build_report(trs);
  const auto& none = rep.row("No-Attn");
  const auto& car = rep.row("Car-CAM-Attn");
  const auto& person = rep.row("Person-CAM-Attn");
  const bool ok = none.scenes >= 50 && tr.train_seconds <= 1800.0 &&
                  person.count_mse[kPerson] < none.count_mse[kPerson] && car.count_mse[kCar] < none.count_mse[kCar] &&
                  person.miou[kPerson] >= none.miou[kPerson] && car.miou[kCar] >= none.miou[kCar];
  return {ok, fmt("%d scenes; person MSE %.3f -> %.3f, car MSE %.3f -> %.3f; person mIoU %.4f -> %.4f, car mIoU "
                  "%.4f -> %.4f; training %.0f s%s",
                  none.scenes, none.count_mse[kPerson], person.count_mse[kPerson], none.count_mse[kCar],
                  car.count_mse[kCar], none.miou[kPerson], person.miou[kPerson], none.miou[kCar], car.miou[kCar],
                  tr.train_seconds, tr.cached ? " (cached)" : "")};
}

// ---- P9 ----

Outcome conditioning_benefit(const Trained& tr) {
  const auto& den = *tr.models->denoiser;
  const auto scenes = sample_dataset(120, derive_seed(tr.cfg.test_seed, 9), tr.cfg.generator);
  double with_edge = 0, zero_edge = 0;
  for (const auto& s : scenes) {
    const EdgeMap edge = instance_edges(s.instance_map, tr.cfg.tx.canny);
    const EdgeMap none(s.height(), s.width(), 0);
    const Shape shape{3, s.height(), s.width()};
    Rng r1(s.seed), r2(s.seed);
    with_edge += recon_error(s.image, sample<float>(shape, make_condition(s.seg, edge, kNumClasses), den.schedule(), den, r1)).mse;
    zero_edge += recon_error(s.image, sample<float>(shape, make_condition(s.seg, none, kNumClasses), den.schedule(), den, r2)).mse;
  }
  with_edge /= scenes.size();
  zero_edge /= scenes.size();
  return {with_edge < zero_edge,
          fmt("%zu scenes, mean pixel MSE seg+edge %.5f vs seg+zero-edge %.5f", scenes.size(), with_edge, zero_edge)};
}

// ---- P10 ----

Outcome detector_calibration() {
  int total = 0, hit = 0;
  for (const auto& s : sample_dataset(200, 1010)) {
    const auto dets = detect_objects(s.image);
    for (int c : DetectorConfig{}.classes) {
      const auto g = boxes_of_class(s.objects, c), p = boxes_of_class(dets, c);
      std::vector<char> used(p.size(), 0);
      for (const auto& gb : g) {
        ++total;
        for (std::size_t i = 0; i < p.size(); ++i)
          if (!used[i] && iou(gb, p[i]) > 0.5) {
            used[i] = 1;
            ++hit;
            break;
          }
      }
    }
  }
  const double rate = total ? static_cast<double>(hit) / total : 0.0;
  return {rate >= 0.95, fmt("%d/%d objects detected with IoU > 0.5 (%.1f%%)", hit, total, 100.0 * rate)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria P1..P10"};
  std::string cache = "acceptance-cache";
  std::vector<std::string> only;
  app.add_option("--cache", cache, "Directory for cached trained models");
  app.add_option("--only", only, "Run only these criteria, e.g. --only P1 P4");
  CLI11_PARSE(app, argc, argv);

  const auto wanted = [&](const std::string& id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  int failed = 0;
  const auto run = [&](const std::string& id, double budget_s, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (budget_s > 0 && s > budget_s) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s budget", budget_s);
    }
    failed += !o.pass;
    std::printf("%-3s %s  %s [%.1f s]\n", id.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str(), s);
    std::fflush(stdout);
  };

  run("P1", 10, codec_exactness);
  run("P2", 60, forward_consistency);
  run("P3", 60, sampling_chain);
  run("P4", 30, gradient_correctness);
  run("P5", 0, cam_correctness);
  run("P6", 0, protocol_safety);

  std::optional<Trained> trained;
  if (wanted("P7") || wanted("P8") || wanted("P9")) {
    try {
      trained = train_or_load(cache);
      std::printf("    models: %s, training %.0f s, denoiser val loss %.4f -> %.4f\n", trained->cfg.out.string().c_str(),
                  trained->train_seconds, trained->init_val_loss, trained->final_val_loss);
    } catch (const std::exception& e) {
      std::printf("    training failed: %s\n", e.what());
    }
  }
  const auto need = [&](auto fn) {
    return [&trained, fn]() -> Outcome {
      if (!trained) return {false, "no trained models"};
      return fn(*trained);
    };
  };
  run("P7", 300, need(cr_ordering));
  run("P8", 0, need(task_adaptation));
  run("P9", 0, need(conditioning_benefit));
  run("P10", 0, detector_calibration);
  return failed == 0 ? 0 : 1;
}
