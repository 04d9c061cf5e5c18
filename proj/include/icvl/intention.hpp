// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "icvl/error.hpp"
#include "icvl/matrix.hpp"

namespace icvl::intention {

inline constexpr const char* kIntentionPrompt = "What does the person want to do?";
inline constexpr std::size_t kDefaultFrameCount = 8;

struct FrameRef {
  std::string video_id;
  std::size_t frame_index = 0;
  std::string uri;

  friend bool operator==(const FrameRef&, const FrameRef&) = default;
};

/// "fixture://<video_id>/<frame_index>"
FrameRef make_frame_ref(const std::string& video_id, std::size_t frame_index);

/// Midpoint sampling: floor((i + 0.5) · total / n) for i in [0, n).
std::vector<std::size_t> sample_frames(std::size_t total_frames, std::size_t n_frm);
std::vector<FrameRef> sample_frame_refs(const std::string& video_id, std::size_t total_frames,
                                        std::size_t n_frm);

struct VlmRequest {
  std::string prompt;
  FrameRef frame;
  /// Intentions returned for the earlier frames, oldest first.
  std::vector<std::string> context;
};

enum class VlmStatus { kOk, kTransient, kPermanent };

struct VlmResponse {
  std::string text;
  double latency_ms = 0.0;
  VlmStatus status = VlmStatus::kOk;
  std::string debug;
};

class VlmClient {
 public:
  virtual ~VlmClient() = default;
  /// May throw TransportError for connection-level failures; those are
  /// retried like a transient status.
  virtual VlmResponse query(const VlmRequest& request) = 0;
};

struct TraceEntry {
  FrameRef frame;
  std::string intention;
  std::size_t attempts = 1;

  friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

struct IntentionTrace {
  std::vector<TraceEntry> per_frame;
  std::string final_intention;

  std::string to_json() const;
  static IntentionTrace from_json(const std::string& text);

  friend bool operator==(const IntentionTrace&, const IntentionTrace&) = default;
};

/// Client failure that could not be recovered. `partial()` holds the
/// frames that completed before the failure.
class TransportError : public Error {
 public:
  explicit TransportError(const std::string& what, IntentionTrace partial = {})
      : Error(ErrorKind::kTransport, what), partial_(std::move(partial)) {}

  const IntentionTrace& partial() const noexcept { return partial_; }

 private:
  IntentionTrace partial_;
};

struct RetryPolicy {
  /// Total attempts per frame, including the first.
  std::size_t max_attempts = 3;
  std::chrono::milliseconds initial_backoff{50};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{2000};
  /// Defaults to std::this_thread::sleep_for.
  std::function<void(std::chrono::milliseconds)> sleep;
};

/// Delay before retry number `retry` (0-based).
std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, std::size_t retry);

/// Sequential loop: frame t is queried with the t−1 earlier intentions as
/// context. Empty response text raises ProtocolError; a permanent status or
/// exhausted retries raise TransportError carrying the partial trace.
IntentionTrace infer_intentions(const std::vector<FrameRef>& frames, VlmClient& client,
                                const std::string& prompt = kIntentionPrompt,
                                const RetryPolicy& policy = {});

/// Context list as sent over the wire: one intention per line.
std::string join_context(const std::vector<std::string>& context);

// Socket client. Endpoint forms: "unix:/path/to.sock", "/path/to.sock",
// "tcp://host:port" or "host:port". Each query opens a connection, writes
// one frame and reads one frame back. A frame is a u32 little-endian byte
// count followed by that many bytes of UTF-8. The request document is
//   {"prompt": ..., "frame_uri": ..., "video_id": ..., "frame_index": ...,
//    "context": [...]}
// and the response frame is the raw intention text.
class SocketVlmClient : public VlmClient {
 public:
  explicit SocketVlmClient(std::string endpoint,
                           std::chrono::milliseconds timeout = std::chrono::milliseconds(10000));
  VlmResponse query(const VlmRequest& request) override;

  const std::string& endpoint() const noexcept { return endpoint_; }

 private:
  std::string endpoint_;
  std::chrono::milliseconds timeout_;
};

std::string encode_request(const VlmRequest& request);
VlmRequest decode_request(const std::string& document);

/// Length-prefixed framing on a connected socket descriptor.
void write_frame(int fd, const std::string& payload);
std::string read_frame(int fd);

/// Listening socket for `endpoint` (same forms as SocketVlmClient). Returns
/// the descriptor; used by test servers and the mock server command.
int listen_endpoint(const std::string& endpoint);

// Text encoding.

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::size_t dims() const = 0;
  /// One row per word. Throws DataError when the text has no words.
  virtual Matrix encode_words(const std::string& text) const = 0;
};

/// Lowercased words split on anything that is not a letter, digit or
/// non-ASCII byte.
std::vector<std::string> split_words(const std::string& text);

/// Signed feature hashing of the character trigrams of "<word>" plus the
/// whole word, unit-normalised per row.
class HashingTextEncoder : public TextEncoder {
 public:
  explicit HashingTextEncoder(std::size_t dims, std::uint64_t seed = 0x1c71);
  std::size_t dims() const override { return dims_; }
  Matrix encode_words(const std::string& text) const override;

 private:
  std::size_t dims_;
  std::uint64_t seed_;
};

/// Fixed-height intention embedding: the first `length` rows hold word
/// encodings, the rest are zero.
struct IntentionEmbedding {
  Matrix rows;
  std::size_t length = 0;
};

inline constexpr std::size_t kDefaultSeqLen = 16;

IntentionEmbedding embed_intention(const std::string& text, const TextEncoder& encoder,
                                   std::size_t seq = kDefaultSeqLen);

/// Mean of the word rows (1 × dims).
Matrix pooled_text_embedding(const std::string& text, const TextEncoder& encoder);

}  // namespace icvl::intention
