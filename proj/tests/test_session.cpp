#include <gtest/gtest.h>

#include <filesystem>

#include "semcom/report.hpp"

using namespace semcom;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::BadConfig;
}

std::shared_ptr<const Models> tiny_models() {
  auto m = std::make_shared<Models>();
  m->denoiser = std::make_shared<LearnedDenoiser>(32, 64, make_schedule(10, 1e-3, 0.2), DenoiserArch{8, 2, 0.5, kNumClasses}, 3);
  return m;
}

SessionConfig oracle_cfg(std::uint64_t seed = 11) {
  SessionConfig c;
  c.attention.source = AttentionSource::Oracle;
  c.seed = seed;
  c.variant = "test";
  return c;
}

SceneBundle scene_with(std::uint64_t seed, std::vector<PlannedObject> objs) {
  SceneSpec spec;
  spec.seed = seed;
  spec.objects = std::move(objs);
  return generate_scene(spec);
}

SceneBundle busy_scene() {
  return scene_with(4, {{kCar, 12, 20, 6, 3, 0}, {kPerson, 40, 18, 2, 5, 1}, {kCar, 52, 24, 5, 3, 2}});
}

const std::vector<Feedback> kTwoRounds = {ClassLabel{kCar}, TextPrompt{"cars and people"}};

}  // namespace

TEST(Session, TwoRoundTranscript) {
  const auto scene = busy_scene();
  const auto tr = run_session(scene, kTwoRounds, tiny_models(), oracle_cfg());
  EXPECT_EQ(tr.rounds(), 2);
  ASSERT_EQ(tr.recons.size(), 3u);
  for (int r = 0; r < 3; ++r) {
    ASSERT_NE(tr.recon(r), nullptr);
    EXPECT_EQ(tr.recon(r)->image.width, 64);
    EXPECT_EQ(tr.recon(r)->image.height, 32);
  }
  std::vector<Step> steps;
  for (const auto& e : tr.ledger.entries) steps.push_back(e.step);
  EXPECT_EQ(steps, (std::vector<Step>{Step::Init, Step::Feedback, Step::Update, Step::Feedback, Step::Update,
                                      Step::Done}));
  // Every ledger entry is the size of a frame that appears in the event log.
  std::size_t framed = 0;
  for (const auto& e : tr.events) framed += e.frame.size();
  EXPECT_EQ(framed, tr.ledger.total_bytes());
  const std::size_t sem = tr.ledger.entries[0].bytes + tr.ledger.entries[2].bytes + tr.ledger.entries[4].bytes;
  EXPECT_DOUBLE_EQ(compression_rate(tr.ledger), 6144.0 / static_cast<double>(sem));
  EXPECT_EQ(tr.events.back().tx_state, "Done");
  EXPECT_EQ(tr.events.back().rx_state, "Done");
  EXPECT_EQ(tr.class_counts[kCar], 2);
  EXPECT_EQ(tr.objects, scene.objects);
}

TEST(Session, DeterministicForSeed) {
  const auto scene = busy_scene();
  const auto models = tiny_models();
  const auto a = run_session(scene, kTwoRounds, models, oracle_cfg(11));
  const auto b = run_session(scene, kTwoRounds, models, oracle_cfg(11));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.digest(), b.digest());
  const auto c = run_session(scene, kTwoRounds, models, oracle_cfg(12));
  EXPECT_NE(a.recons, c.recons);
  ASSERT_EQ(a.events.size(), c.events.size());
  for (std::size_t i = 0; i < a.events.size(); ++i) EXPECT_EQ(a.events[i].frame, c.events[i].frame);
}

TEST(Session, ReplayMatchesAndDetectsTampering) {
  const auto scene = busy_scene();
  const auto models = tiny_models();
  const auto cfg = oracle_cfg();
  const auto tr = run_session(scene, kTwoRounds, models, cfg);
  EXPECT_NO_THROW(replay_transcript(tr, scene, *models, cfg));

  auto bad = tr;
  for (auto& e : bad.events)
    if (e.event == "feedback") {
      e.frame[20] ^= 1;
      break;
    }
  EXPECT_EQ(code_of([&] { replay_transcript(bad, scene, *models, cfg); }), ErrorCode::ProtocolViolation);

  bad = tr;
  bad.ledger.entries[2].bytes += 1;
  EXPECT_EQ(code_of([&] { replay_transcript(bad, scene, *models, cfg); }), ErrorCode::ProtocolViolation);

  auto moved = scene_with(5, {{kCar, 12, 20, 6, 3, 0}});
  EXPECT_EQ(code_of([&] { replay_transcript(tr, moved, *models, cfg); }), ErrorCode::ProtocolViolation);
}

TEST(Session, ExportImportRoundTrip) {
  const auto tr = run_session(busy_scene(), kTwoRounds, tiny_models(), oracle_cfg());
  const auto text = export_transcript(tr);
  EXPECT_EQ(import_transcript(text), tr);

  const auto dir = std::filesystem::temp_directory_path() / "semcom-test-session";
  std::filesystem::create_directories(dir);
  save_transcript(dir / "t.jsonl", tr);
  EXPECT_EQ(load_transcript(dir / "t.jsonl"), tr);
  std::filesystem::remove_all(dir);

  auto broken = text;
  const auto px = broken.find("\"pixels\":\"") + 10;
  broken[px] = broken[px] == '0' ? '1' : '0';
  EXPECT_EQ(code_of([&] { import_transcript(broken); }), ErrorCode::MalformedPayload);
  broken = text;
  const auto fr = broken.find("\"frame\":\"") + 9;
  broken[fr] = broken[fr] == '0' ? '1' : '0';
  EXPECT_EQ(code_of([&] { import_transcript(broken); }), ErrorCode::MalformedPayload);
  EXPECT_EQ(code_of([&] { import_transcript(text.substr(0, text.rfind("{\"digest\""))); }), ErrorCode::MalformedPayload);
  EXPECT_EQ(code_of([] { import_transcript("{not json}\n"); }), ErrorCode::MalformedPayload);
}

TEST(Session, PayloadOnlyRunNeedsNoDenoiser) {
  auto cfg = oracle_cfg();
  cfg.reconstruct = false;
  const auto tr = run_session(busy_scene(), kTwoRounds, std::make_shared<Models>(), cfg);
  EXPECT_TRUE(tr.recons.empty());
  EXPECT_EQ(tr.rounds(), 2);
  EXPECT_EQ(code_of([&] { run_session(busy_scene(), kTwoRounds, std::make_shared<Models>(), oracle_cfg()); }),
            ErrorCode::ModelMissing);
  auto cam = oracle_cfg();
  cam.reconstruct = false;
  cam.attention.source = AttentionSource::Cam;
  EXPECT_EQ(code_of([&] { run_session(busy_scene(), kTwoRounds, std::make_shared<Models>(), cam); }),
            ErrorCode::ModelMissing);
}

TEST(Session, UnresolvedPromptLeavesSessionUsable) {
  auto cfg = oracle_cfg();
  cfg.reconstruct = false;
  Session s(busy_scene(), std::make_shared<Models>(), cfg);
  s.start();
  EXPECT_EQ(code_of([&] { s.feedback(TextPrompt{"quantum teapots"}); }), ErrorCode::FeedbackUnresolved);
  EXPECT_EQ(s.receiver().state(), RxState::GotInit);
  EXPECT_EQ(s.transmitter().state(), TxState::AwaitingFeedback);
  const auto req = s.feedback(ClassLabel{kPerson});
  EXPECT_EQ(req.round, 1);
  s.finish();
  EXPECT_EQ(s.transcript().rounds(), 1);
}

TEST(Session, CorruptedChannelIsDetected) {
  auto cfg = oracle_cfg();
  cfg.reconstruct = false;
  cfg.tamper = [](Bytes& f) {
    if (f[5] == static_cast<std::uint8_t>(MessageType::SemUpdate)) f[f.size() / 2] ^= 0x10;
  };
  Session s(busy_scene(), std::make_shared<Models>(), cfg);
  s.start();
  EXPECT_EQ(code_of([&] { s.feedback(ClassLabel{kCar}); }), ErrorCode::FrameCorrupt);
}

TEST(Session, HookDrivenSession) {
  int calls = 0;
  const FeedbackHook hook = [&](int round, const Raster* latest) -> std::optional<Feedback> {
    ++calls;
    EXPECT_NE(latest, nullptr);
    if (round == 0) return ClassLabel{kCar};
    return std::nullopt;
  };
  const auto tr = run_session(busy_scene(), hook, tiny_models(), oracle_cfg());
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(tr.rounds(), 1);
  EXPECT_EQ(tr.recons.size(), 2u);
}

TEST(Report, VariantParsing) {
  const auto v = parse_variant("Mix=label:car|text:cars and people");
  EXPECT_EQ(v.name, "Mix");
  ASSERT_EQ(v.policy.size(), 2u);
  EXPECT_EQ(std::get<ClassLabel>(v.policy[0]).class_id, kCar);
  EXPECT_EQ(std::get<TextPrompt>(v.policy[1]).text, "cars and people");
  EXPECT_EQ(format_variant(v), "Mix=label:car|text:cars and people");
  EXPECT_TRUE(parse_variant("None=").policy.empty());
  EXPECT_EQ(default_variants().size(), 6u);
  EXPECT_EQ(code_of([] { parse_variant("label:car"); }), ErrorCode::BadConfig);
  EXPECT_EQ(code_of([] { parse_variant("X=label:boat"); }), ErrorCode::BadConfig);
  EXPECT_EQ(code_of([] { parse_variant("X=car"); }), ErrorCode::BadConfig);
}

TEST(Report, AggregatesPerVariant) {
  const std::vector<SceneBundle> scenes = {
      busy_scene(),
      scene_with(8, {{kCar, 20, 16, 6, 3, 0}, {kPerson, 50, 16, 2, 5, 1}, {kPerson, 58, 16, 2, 5, 2}})};
  std::vector<SessionTranscript> trs;
  auto cfg = oracle_cfg();
  cfg.reconstruct = false;
  for (const auto& scene : scenes) {
    for (const char* name : {"Clean", "Blank"}) {
      cfg.variant = name;
      Session s(scene, std::make_shared<Models>(), cfg);
      s.start();
      s.feedback(ClassLabel{kCar});
      s.finish();
      auto tr = s.transcript();
      Image img = std::string(name) == "Clean" ? scene.image : Image(3, 32, 64, 0.5f);
      tr.recons.push_back({1, to_raster(img)});
      trs.push_back(tr);
    }
  }
  const auto rep = build_report(trs);
  ASSERT_EQ(rep.rows.size(), 2u);
  EXPECT_EQ(rep.rows[0].variant, "Blank");
  EXPECT_EQ(rep.rows[1].variant, "Clean");
  const auto& clean = rep.row("Clean");
  const auto& blank = rep.row("Blank");
  EXPECT_EQ(clean.scenes, 2);
  EXPECT_DOUBLE_EQ(clean.count_mse[kCar], 0.0);
  EXPECT_DOUBLE_EQ(clean.count_mse[kPerson], 0.0);
  EXPECT_GT(clean.miou[kCar], 0.9);
  EXPECT_GT(clean.miou[kPerson], 0.9);
  // Nothing detected: MSE is the mean squared true count, mIoU is zero.
  EXPECT_DOUBLE_EQ(blank.count_mse[kCar], (4.0 + 1.0) / 2.0);
  EXPECT_DOUBLE_EQ(blank.count_mse[kPerson], (1.0 + 4.0) / 2.0);
  EXPECT_DOUBLE_EQ(blank.miou[kCar], 0.0);
  const double cr = (compression_rate(trs[0].ledger) + compression_rate(trs[2].ledger)) / 2.0;
  EXPECT_DOUBLE_EQ(clean.cr, cr);
  EXPECT_EQ(code_of([&] { rep.row("Nope"); }), ErrorCode::BadConfig);

  const auto csv = report_csv(rep);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "variant,scenes,cr,car_count_mse,car_miou,person_count_mse,person_miou");
  EXPECT_NE(report_table(rep).find("Clean"), std::string::npos);

  // Without reconstructions the task metrics are undefined.
  for (auto& t : trs) t.recons.clear();
  const auto none = build_report(trs);
  EXPECT_TRUE(std::isnan(none.rows[0].count_mse[kCar]));
  EXPECT_EQ(code_of([] { build_report(std::vector<SessionTranscript>{}); }), ErrorCode::EmptyInput);
}

TEST(Report, PairedTTestMatchesReference) {
  // Reference values from an independent statistics package.
  const auto r = paired_t_test({3, 4, 5, 6, 1.5}, {2, 2, 2, 2, 1});
  EXPECT_NEAR(r.mean_diff, 2.1, 1e-12);
  EXPECT_NEAR(r.t, 3.2796489996607274, 1e-9);
  EXPECT_NEAR(r.p_greater, 0.015255406290165802, 1e-9);
  const auto q = paired_t_test({0.5, 0.1, 0.3}, {0.4, 0.2, 0.1});
  EXPECT_NEAR(q.t, 0.7559289460184544, 1e-9);
  EXPECT_NEAR(q.p_greater, 0.2642977396044842, 1e-9);
  EXPECT_EQ(paired_t_test({1, 2}, {0, 1}).p_greater, 0.0);
  EXPECT_EQ(code_of([] { paired_t_test({1}, {1}); }), ErrorCode::DimMismatch);
}
