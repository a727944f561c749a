#pragma once

// Framed messages and the transmitter/receiver state machines of the
// three-phase exchange:
//   Step 1  Tx -> Rx  SemInit    (segmentation payload)
//   Step 2  Rx -> Tx  Feedback   (class label or text prompt)
//   Step 3  Tx -> Rx  SemUpdate  (attention-masked edge patches)
// Steps 2 and 3 repeat per round until the transmitter sends SessionDone.
//
// Frame: "SEMC" | u8 version | u8 type | u32 payload length | payload | u32 CRC-32
// with the CRC taken over every preceding byte of the frame.

#include <optional>
#include <string>
#include <variant>

#include "semcom/attention.hpp"
#include "semcom/codec.hpp"

namespace semcom {

inline constexpr std::uint8_t kFrameVersion = 1;
inline constexpr char kFrameMagic[4] = {'S', 'E', 'M', 'C'};
inline constexpr std::size_t kFrameOverhead = 4 + 1 + 1 + 4 + 4;

enum class MessageType : std::uint8_t { SemInit = 1, Feedback = 2, SemUpdate = 3, SessionDone = 4 };

struct SemInit {
  SegPayload seg;
  friend bool operator==(const SemInit&, const SemInit&) = default;
};
struct FeedbackMsg {
  Feedback feedback;
  friend bool operator==(const FeedbackMsg&, const FeedbackMsg&) = default;
};
struct SemUpdate {
  PatchPayload patches;
  friend bool operator==(const SemUpdate&, const SemUpdate&) = default;
};
struct SessionDone {
  friend bool operator==(const SessionDone&, const SessionDone&) = default;
};

using Message = std::variant<SemInit, FeedbackMsg, SemUpdate, SessionDone>;

inline MessageType message_type(const Message& m) {
  return static_cast<MessageType>(static_cast<std::uint8_t>(m.index() + 1));
}

inline std::string_view message_name(MessageType t) {
  switch (t) {
    case MessageType::SemInit: return "SemInit";
    case MessageType::Feedback: return "Feedback";
    case MessageType::SemUpdate: return "SemUpdate";
    case MessageType::SessionDone: return "SessionDone";
  }
  return "?";
}

namespace detail {

// Feedback payload: u8 kind (0 label, 1 text) then u8 class or u16 length + utf-8.
inline Bytes feedback_bytes(const Feedback& fb) {
  validate(fb);
  ByteWriter w;
  if (const auto* l = std::get_if<ClassLabel>(&fb)) {
    w.u8(0);
    w.u8(static_cast<std::uint8_t>(l->class_id));
  } else {
    const auto& t = std::get<TextPrompt>(fb).text;
    require(t.size() <= 0xffff, ErrorCode::BadRange, "text prompt too long");
    w.u8(1);
    w.u16(static_cast<std::uint16_t>(t.size()));
    w.raw(t);
  }
  return std::move(w).take();
}

inline Feedback feedback_from_bytes(std::span<const std::uint8_t> b) {
  ByteReader r(b, ErrorCode::MalformedPayload);
  const std::uint8_t kind = r.u8();
  Feedback fb;
  if (kind == 0) {
    fb = ClassLabel{r.u8()};
  } else if (kind == 1) {
    const auto s = r.raw(r.u16());
    fb = TextPrompt{std::string(s.begin(), s.end())};
  } else {
    fail(ErrorCode::MalformedPayload, "unknown feedback kind");
  }
  require(r.done(), ErrorCode::MalformedPayload, "trailing bytes after feedback");
  validate(fb);
  return fb;
}

}  // namespace detail

inline Bytes message_payload(const Message& m) {
  return std::visit(
      [](const auto& v) -> Bytes {
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, SemInit>) return to_bytes(v.seg);
        if constexpr (std::is_same_v<V, FeedbackMsg>) return detail::feedback_bytes(v.feedback);
        if constexpr (std::is_same_v<V, SemUpdate>) return to_bytes(v.patches);
        return {};
      },
      m);
}

inline Bytes encode_frame(const Message& m) {
  const Bytes payload = message_payload(m);
  require(payload.size() <= 0xffffffffu, ErrorCode::BadRange, "payload too large for a frame");
  ByteWriter w;
  w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(kFrameMagic), 4));
  w.u8(kFrameVersion);
  w.u8(static_cast<std::uint8_t>(message_type(m)));
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.raw(payload);
  w.u32(crc32_of(w.bytes()));
  return std::move(w).take();
}

inline Message decode_frame(std::span<const std::uint8_t> frame) {
  require(frame.size() >= kFrameOverhead, ErrorCode::FrameCorrupt, "frame shorter than header and checksum");
  ByteReader tail(frame.subspan(frame.size() - 4), ErrorCode::FrameCorrupt);
  require(tail.u32() == crc32_of(frame.first(frame.size() - 4)), ErrorCode::FrameCorrupt, "frame checksum mismatch");
  ByteReader r(frame.first(frame.size() - 4), ErrorCode::FrameCorrupt);
  const auto magic = r.raw(4);
  require(std::equal(magic.begin(), magic.end(), kFrameMagic), ErrorCode::FrameCorrupt, "bad frame magic");
  require(r.u8() == kFrameVersion, ErrorCode::BadVersion, "unsupported frame version");
  const std::uint8_t type = r.u8();
  const std::uint32_t len = r.u32();
  require(len == r.remaining(), ErrorCode::FrameCorrupt, "frame length field mismatch");
  const auto payload = r.raw(len);
  switch (static_cast<MessageType>(type)) {
    case MessageType::SemInit: return SemInit{seg_from_bytes(payload)};
    case MessageType::Feedback: return FeedbackMsg{detail::feedback_from_bytes(payload)};
    case MessageType::SemUpdate: return SemUpdate{patches_from_bytes(payload)};
    case MessageType::SessionDone:
      require(len == 0, ErrorCode::MalformedPayload, "SessionDone carries no payload");
      return SessionDone{};
  }
  fail(ErrorCode::UnknownType, "unknown message type " + std::to_string(type));
}

enum class TxState { Idle, InitSent, AwaitingFeedback, UpdateSent, Done };
enum class RxState { Idle, GotInit, FeedbackSent, GotUpdate, Done };

inline std::string_view state_name(TxState s) {
  constexpr std::string_view n[] = {"Idle", "InitSent", "AwaitingFeedback", "UpdateSent", "Done"};
  return n[static_cast<int>(s)];
}
inline std::string_view state_name(RxState s) {
  constexpr std::string_view n[] = {"Idle", "GotInit", "FeedbackSent", "GotUpdate", "Done"};
  return n[static_cast<int>(s)];
}

struct TransmitterConfig {
  int patch_size = kDefaultPatchSize;
  bool deflate_seg = true;
  CannyParams canny = kInstanceCanny;
};

struct TxStart {};
struct TxDelivered {};  // previous downlink frame reached the receiver
struct TxFeedback {
  Feedback feedback;
};
struct TxFinish {};
using TxEvent = std::variant<TxStart, TxDelivered, TxFeedback, TxFinish>;

inline std::string_view event_name(const TxEvent& e) {
  constexpr std::string_view n[] = {"start", "delivered", "feedback", "finish"};
  return n[e.index()];
}

/// Sender side. Holds the scene, computes the instance edge map once on
/// start (it is not sent in Step 1) and masks it per feedback round.
class Transmitter {
 public:
  Transmitter(const SceneBundle& scene, const AttentionResolver& attention, TransmitterConfig cfg = {})
      : scene_(&scene), attention_(&attention), cfg_(cfg) {}

  TxState state() const { return state_; }
  int round() const { return round_; }
  const EdgeMap& edge_map() const { return edge_; }
  const AttentionMask& last_mask() const { return mask_; }

  std::optional<Message> on_event(const TxEvent& ev) {
    const auto bad = [&]() -> std::optional<Message> {
      fail(ErrorCode::ProtocolViolation,
           "transmitter: event '" + std::string(event_name(ev)) + "' illegal in state " + std::string(state_name(state_)));
    };
    switch (state_) {
      case TxState::Idle:
        if (!std::holds_alternative<TxStart>(ev)) return bad();
        edge_ = instance_edges(scene_->instance_map, cfg_.canny);
        state_ = TxState::InitSent;
        return SemInit{encode_seg(scene_->seg, kNumClasses, cfg_.deflate_seg)};
      case TxState::InitSent:
        if (!std::holds_alternative<TxDelivered>(ev)) return bad();
        state_ = TxState::AwaitingFeedback;
        return std::nullopt;
      case TxState::UpdateSent:
        if (std::holds_alternative<TxDelivered>(ev)) {
          state_ = TxState::AwaitingFeedback;
          return std::nullopt;
        }
        [[fallthrough]];
      case TxState::AwaitingFeedback:
        if (std::holds_alternative<TxFinish>(ev)) {
          state_ = TxState::Done;
          return SessionDone{};
        }
        if (state_ == TxState::AwaitingFeedback && std::holds_alternative<TxFeedback>(ev)) {
          mask_ = attention_->mask(std::get<TxFeedback>(ev).feedback, *scene_);
          auto payload = encode_patches(mask_edge(edge_, mask_), cfg_.patch_size);
          state_ = TxState::UpdateSent;
          ++round_;
          return SemUpdate{std::move(payload)};
        }
        return bad();
      case TxState::Done:
        return bad();
    }
    return bad();
  }

 private:
  const SceneBundle* scene_;
  const AttentionResolver* attention_;
  TransmitterConfig cfg_;
  TxState state_ = TxState::Idle;
  int round_ = 0;
  EdgeMap edge_;
  AttentionMask mask_;
};

struct RxFrame {
  Message message;
};
struct RxOperatorFeedback {
  Feedback feedback;
};
struct RxFinish {};
using RxEvent = std::variant<RxFrame, RxOperatorFeedback, RxFinish>;

inline std::string_view event_name(const RxEvent& e) {
  if (const auto* f = std::get_if<RxFrame>(&e)) return message_name(message_type(f->message));
  return e.index() == 1 ? "operator-feedback" : "finish";
}

/// Conditioning for one reconstruction: round 0 uses an all-zero edge map.
struct ReconRequest {
  int round = 0;
  ClassMap seg;
  EdgeMap edge;
};

struct RxOutput {
  std::optional<Message> reply;
  std::optional<ReconRequest> recon;
};

class Receiver {
 public:
  RxState state() const { return state_; }
  int round() const { return round_; }
  const ClassMap& seg() const { return seg_; }

  RxOutput on_event(const RxEvent& ev) {
    const auto bad = [&]() -> RxOutput {
      fail(ErrorCode::ProtocolViolation,
           "receiver: event '" + std::string(event_name(ev)) + "' illegal in state " + std::string(state_name(state_)));
    };
    const auto* frame = std::get_if<RxFrame>(&ev);
    const MessageType type = frame ? message_type(frame->message) : MessageType{};
    if (state_ == RxState::Done) return bad();
    if (std::holds_alternative<RxFinish>(ev) && state_ != RxState::Idle) {
      state_ = RxState::Done;
      return {};
    }
    if (frame && type == MessageType::SessionDone && state_ != RxState::Idle) {
      state_ = RxState::Done;
      return {};
    }
    switch (state_) {
      case RxState::Idle:
        if (!frame || type != MessageType::SemInit) return bad();
        seg_ = decode_seg(std::get<SemInit>(frame->message).seg);
        state_ = RxState::GotInit;
        return {std::nullopt, ReconRequest{0, seg_, EdgeMap(seg_.height(), seg_.width(), 0)}};
      case RxState::GotInit:
      case RxState::GotUpdate:
        if (const auto* fb = std::get_if<RxOperatorFeedback>(&ev)) {
          validate(fb->feedback);
          state_ = RxState::FeedbackSent;
          return {FeedbackMsg{fb->feedback}, std::nullopt};
        }
        return bad();
      case RxState::FeedbackSent: {
        if (!frame || type != MessageType::SemUpdate) return bad();
        const auto& patches = std::get<SemUpdate>(frame->message).patches;
        EdgeMap edge = decode_patches(patches);
        require(edge.same_dims(seg_), ErrorCode::DimMismatch, "update dims differ from segmentation");
        ++round_;
        state_ = RxState::GotUpdate;
        return {std::nullopt, ReconRequest{round_, seg_, std::move(edge)}};
      }
      case RxState::Done:
        break;
    }
    return bad();
  }

 private:
  RxState state_ = RxState::Idle;
  int round_ = 0;
  ClassMap seg_;
};

}  // namespace semcom
