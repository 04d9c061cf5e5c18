// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sys/socket.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <thread>

#include "icvl/error.hpp"
#include "icvl/intention.hpp"

using namespace icvl;
using namespace icvl::intention;

namespace {

struct Recording : VlmClient {
  std::vector<VlmRequest> seen;
  std::function<VlmResponse(const VlmRequest&, std::size_t call)> script;
  VlmResponse query(const VlmRequest& r) override {
    seen.push_back(r);
    return script(r, seen.size() - 1);
  }
};

RetryPolicy no_sleep(std::vector<std::chrono::milliseconds>* slept = nullptr) {
  RetryPolicy p;
  p.sleep = [slept](std::chrono::milliseconds d) {
    if (slept) slept->push_back(d);
  };
  return p;
}

}  // namespace

TEST(SampleFrames, Cases) {
  EXPECT_EQ(sample_frames(10, 10), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
  EXPECT_EQ(sample_frames(100, 4), (std::vector<std::size_t>{12, 37, 62, 87}));
  EXPECT_EQ(sample_frames(5, 1), (std::vector<std::size_t>{2}));
  EXPECT_THROW(sample_frames(3, 4), DataError);
  EXPECT_THROW(sample_frames(3, 0), DataError);
  for (std::size_t total = 1; total < 60; ++total) {
    for (std::size_t n = 1; n <= total; ++n) {
      const auto idx = sample_frames(total, n);
      ASSERT_EQ(idx.size(), n);
      for (std::size_t i = 0; i < n; ++i) {
        ASSERT_EQ(idx[i], static_cast<std::size_t>(std::floor((i + 0.5) * total / n)));
        if (i > 0) ASSERT_LT(idx[i - 1], idx[i]);
      }
    }
  }
  const auto refs = sample_frame_refs("vid7", 100, 2);
  EXPECT_EQ(refs[1], make_frame_ref("vid7", 75));
  EXPECT_EQ(refs[1].uri, "fixture://vid7/75");
}

TEST(InferIntentions, SingleFrame) {
  Recording client;
  client.script = [](const VlmRequest&, std::size_t) { return VlmResponse{"make tea", 1.0, VlmStatus::kOk, ""}; };
  const auto trace = infer_intentions(sample_frame_refs("v", 10, 1), client);
  EXPECT_EQ(client.seen.size(), 1u);
  EXPECT_TRUE(client.seen[0].context.empty());
  EXPECT_EQ(client.seen[0].prompt, "What does the person want to do?");
  EXPECT_EQ(trace.final_intention, "make tea");
}

TEST(InferIntentions, ContextGrowsInOrder) {
  Recording client;
  client.script = [](const VlmRequest& r, std::size_t) {
    return VlmResponse{std::to_string(r.context.size()), 0.0, VlmStatus::kOk, ""};
  };
  const auto trace = infer_intentions(sample_frame_refs("v", 30, 3), client);
  ASSERT_EQ(trace.per_frame.size(), 3u);
  EXPECT_EQ(trace.per_frame[0].intention, "0");
  EXPECT_EQ(trace.per_frame[1].intention, "1");
  EXPECT_EQ(trace.per_frame[2].intention, "2");
  EXPECT_EQ(client.seen[2].context, (std::vector<std::string>{"0", "1"}));
  EXPECT_EQ(client.seen[2].frame.frame_index, 25u);
  EXPECT_EQ(trace.final_intention, "2");
}

TEST(InferIntentions, RetriesTransientFailures) {
  Recording client;
  client.script = [](const VlmRequest&, std::size_t call) {
    if (call < 2) return VlmResponse{"", 0.0, VlmStatus::kTransient, ""};
    return VlmResponse{"  open the door \n", 0.0, VlmStatus::kOk, ""};
  };
  std::vector<std::chrono::milliseconds> slept;
  const auto trace = infer_intentions(sample_frame_refs("v", 4, 1), client, kIntentionPrompt, no_sleep(&slept));
  EXPECT_EQ(trace.per_frame[0].attempts, 3u);
  EXPECT_EQ(trace.final_intention, "open the door");
  EXPECT_EQ(slept, (std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(50), std::chrono::milliseconds(100)}));
}

TEST(InferIntentions, ThrownTransportErrorsAreRetried) {
  Recording client;
  client.script = [](const VlmRequest&, std::size_t call) -> VlmResponse {
    if (call == 0) throw TransportError("connection refused");
    return {"ok", 0.0, VlmStatus::kOk, ""};
  };
  EXPECT_EQ(infer_intentions(sample_frame_refs("v", 4, 1), client, kIntentionPrompt, no_sleep()).per_frame[0].attempts, 2u);
}

TEST(InferIntentions, ExhaustedRetriesCarryPartialTrace) {
  Recording client;
  client.script = [](const VlmRequest&, std::size_t call) {
    if (call == 0) return VlmResponse{"first", 0.0, VlmStatus::kOk, ""};
    return VlmResponse{"", 0.0, VlmStatus::kTransient, ""};
  };
  try {
    infer_intentions(sample_frame_refs("v", 10, 3), client, kIntentionPrompt, no_sleep());
    FAIL() << "expected TransportError";
  } catch (const TransportError& e) {
    ASSERT_EQ(e.partial().per_frame.size(), 1u);
    EXPECT_EQ(e.partial().per_frame[0].intention, "first");
  }
  EXPECT_EQ(client.seen.size(), 4u);  // 1 + 3 attempts on frame 2
}

TEST(InferIntentions, PermanentFailureIsNotRetried) {
  Recording client;
  client.script = [](const VlmRequest&, std::size_t) { return VlmResponse{"", 0.0, VlmStatus::kPermanent, ""}; };
  EXPECT_THROW(infer_intentions(sample_frame_refs("v", 10, 2), client, kIntentionPrompt, no_sleep()), TransportError);
  EXPECT_EQ(client.seen.size(), 1u);
}

TEST(InferIntentions, EmptyTextIsProtocolError) {
  Recording client;
  client.script = [](const VlmRequest&, std::size_t) { return VlmResponse{" \t", 0.0, VlmStatus::kOk, ""}; };
  EXPECT_THROW(infer_intentions(sample_frame_refs("v", 10, 2), client), ProtocolError);
}

TEST(InferIntentions, RejectsUnorderedFrames) {
  Recording client;
  client.script = [](const VlmRequest&, std::size_t) { return VlmResponse{"x", 0.0, VlmStatus::kOk, ""}; };
  const std::vector<FrameRef> frames{make_frame_ref("v", 5), make_frame_ref("v", 2)};
  EXPECT_THROW(infer_intentions(frames, client), DataError);
  EXPECT_THROW(infer_intentions({}, client), DataError);
}

TEST(Backoff, ExponentialWithCap) {
  RetryPolicy p;
  EXPECT_EQ(backoff_delay(p, 0).count(), 50);
  EXPECT_EQ(backoff_delay(p, 1).count(), 100);
  EXPECT_EQ(backoff_delay(p, 5).count(), 1600);
  EXPECT_EQ(backoff_delay(p, 6).count(), 2000);
  EXPECT_EQ(backoff_delay(p, 60).count(), 2000);
}

TEST(Trace, JsonRoundTrip) {
  IntentionTrace t;
  t.per_frame = {{make_frame_ref("a", 1), "wash \"the\" cup", 1}, {make_frame_ref("a", 9), "dry\nit", 3}};
  t.final_intention = "dry\nit";
  EXPECT_EQ(IntentionTrace::from_json(t.to_json()), t);
  EXPECT_THROW(IntentionTrace::from_json("{not json"), ParseError);
}

TEST(Wire, RequestRoundTrip) {
  VlmRequest r{"What?", make_frame_ref("vid", 4), {"one", "two"}};
  const VlmRequest back = decode_request(encode_request(r));
  EXPECT_EQ(back.prompt, r.prompt);
  EXPECT_EQ(back.frame, r.frame);
  EXPECT_EQ(back.context, r.context);
  EXPECT_EQ(join_context(r.context), "one\ntwo");
  EXPECT_THROW(decode_request("[]"), ProtocolError);
}

TEST(Wire, FramingOverSocketPair) {
  int fds[2];
  ASSERT_EQ(socketpair(AF_UNIX, SOCK_STREAM, 0, fds), 0);
  const std::string payload = "héllo\0world";
  write_frame(fds[0], payload);
  write_frame(fds[0], "");
  EXPECT_EQ(read_frame(fds[1]), payload);
  EXPECT_EQ(read_frame(fds[1]), "");
  close(fds[0]);
  EXPECT_THROW(read_frame(fds[1]), Error);
  close(fds[1]);
}

TEST(SocketClient, UnixEndpointRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / ("icvl_vlm_" + std::to_string(getpid()) + ".sock");
  const std::string endpoint = "unix:" + path.string();
  const int listener = listen_endpoint(endpoint);
  std::thread server([listener] {
    for (int i = 0; i < 2; ++i) {
      const int c = accept(listener, nullptr, nullptr);
      const VlmRequest r = decode_request(read_frame(c));
      write_frame(c, r.frame.video_id + ":" + std::to_string(r.context.size()));
      close(c);
    }
  });
  SocketVlmClient client(endpoint, std::chrono::milliseconds(2000));
  const auto trace = infer_intentions(sample_frame_refs("vidA", 20, 2), client);
  server.join();
  close(listener);
  std::filesystem::remove(path);
  EXPECT_EQ(trace.per_frame[0].intention, "vidA:0");
  EXPECT_EQ(trace.final_intention, "vidA:1");
}

TEST(SocketClient, UnreachableEndpointIsTransportError) {
  SocketVlmClient client("unix:/nonexistent/icvl.sock", std::chrono::milliseconds(100));
  EXPECT_THROW(client.query({kIntentionPrompt, make_frame_ref("v", 0), {}}), TransportError);
  RetryPolicy p = no_sleep();
  EXPECT_THROW(infer_intentions(sample_frame_refs("v", 4, 1), client, kIntentionPrompt, p), TransportError);
}

TEST(TextEncoder, SplitWords) {
  EXPECT_EQ(split_words("Take the BOWL, then wash-it!"),
            (std::vector<std::string>{"take", "the", "bowl", "then", "wash", "it"}));
  EXPECT_TRUE(split_words(" ,.;").empty());
}

TEST(TextEncoder, UnitRowsAndDeterminism) {
  const HashingTextEncoder enc(32);
  const Matrix m = enc.encode_words("prepare a cup of tea for a friend");
  ASSERT_EQ(m.rows(), 8u);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (double v : m.row(r)) s += v * v;
    EXPECT_NEAR(std::sqrt(s), 1.0, 1e-9);
  }
  EXPECT_EQ(enc.encode_words("prepare a cup of tea for a friend"), m);
  // Repeated words encode identically; different seeds differ.
  EXPECT_TRUE(std::equal(m.row(1).begin(), m.row(1).end(), m.row(6).begin()));
  EXPECT_NE(HashingTextEncoder(32, 1).encode_words("tea"), enc.encode_words("tea"));
  EXPECT_THROW(enc.encode_words("  "), DataError);
}

TEST(EmbedIntention, PaddingAndTruncation) {
  const HashingTextEncoder enc(16);
  const auto e = embed_intention("wash the dishes", enc, 5);
  EXPECT_EQ(e.rows.rows(), 5u);
  EXPECT_EQ(e.length, 3u);
  for (std::size_t r = 3; r < 5; ++r)
    for (double v : e.rows.row(r)) EXPECT_EQ(v, 0.0);
  const auto t = embed_intention("a b c d e f g", enc, 4);
  EXPECT_EQ(t.length, 4u);
  EXPECT_EQ(embed_intention("wash the dishes", enc, 5).rows, e.rows);
  EXPECT_THROW(embed_intention("", enc), DataError);
  const Matrix pooled = pooled_text_embedding("wash the dishes", enc);
  EXPECT_EQ(pooled.rows(), 1u);
  EXPECT_NEAR(pooled(0, 0), (e.rows(0, 0) + e.rows(1, 0) + e.rows(2, 0)) / 3.0, 1e-15);
}
