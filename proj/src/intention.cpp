// SPDX-License-Identifier: Apache-2.0

#include "icvl/intention.hpp"

#include <netdb.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <sys/un.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <optional>
#include <thread>

#include <json.hpp>

#include "icvl/random.hpp"

namespace icvl::intention {

using nlohmann::json;

FrameRef make_frame_ref(const std::string& video_id, std::size_t frame_index) {
  return {video_id, frame_index, "fixture://" + video_id + "/" + std::to_string(frame_index)};
}

std::vector<std::size_t> sample_frames(std::size_t total_frames, std::size_t n_frm) {
  if (n_frm == 0) throw DataError("sample_frames: n_frm must be >= 1");
  if (n_frm > total_frames) {
    throw DataError("sample_frames: cannot sample " + std::to_string(n_frm) + " frames from " +
                    std::to_string(total_frames));
  }
  // floor((2i + 1) · total / 2n) in integers.
  std::vector<std::size_t> out(n_frm);
  for (std::size_t i = 0; i < n_frm; ++i) out[i] = (2 * i + 1) * total_frames / (2 * n_frm);
  return out;
}

std::vector<FrameRef> sample_frame_refs(const std::string& video_id, std::size_t total_frames,
                                        std::size_t n_frm) {
  std::vector<FrameRef> out;
  for (std::size_t idx : sample_frames(total_frames, n_frm)) out.push_back(make_frame_ref(video_id, idx));
  return out;
}

std::string IntentionTrace::to_json() const {
  json frames = json::array();
  for (const auto& e : per_frame) {
    frames.push_back({{"video_id", e.frame.video_id},
                      {"frame_index", e.frame.frame_index},
                      {"uri", e.frame.uri},
                      {"intention", e.intention},
                      {"attempts", e.attempts}});
  }
  return json{{"per_frame", frames}, {"final_intention", final_intention}}.dump();
}

IntentionTrace IntentionTrace::from_json(const std::string& text) {
  try {
    const json doc = json::parse(text);
    IntentionTrace t;
    for (const auto& f : doc.at("per_frame")) {
      TraceEntry e;
      e.frame.video_id = f.at("video_id").get<std::string>();
      e.frame.frame_index = f.at("frame_index").get<std::size_t>();
      e.frame.uri = f.at("uri").get<std::string>();
      e.intention = f.at("intention").get<std::string>();
      e.attempts = f.at("attempts").get<std::size_t>();
      t.per_frame.push_back(std::move(e));
    }
    t.final_intention = doc.at("final_intention").get<std::string>();
    return t;
  } catch (const json::exception& e) {
    throw ParseError(std::string("intention trace: ") + e.what(), text);
  }
}

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, std::size_t retry) {
  const double ms = static_cast<double>(policy.initial_backoff.count()) *
                    std::pow(policy.multiplier, static_cast<double>(retry));
  const double capped = std::min(ms, static_cast<double>(policy.max_backoff.count()));
  return std::chrono::milliseconds(static_cast<long long>(capped));
}

std::string join_context(const std::vector<std::string>& context) {
  std::string out;
  for (std::size_t i = 0; i < context.size(); ++i) {
    if (i > 0) out += '\n';
    out += context[i];
  }
  return out;
}

IntentionTrace infer_intentions(const std::vector<FrameRef>& frames, VlmClient& client,
                                const std::string& prompt, const RetryPolicy& policy) {
  if (frames.empty()) throw DataError("infer_intentions: no frames");
  if (policy.max_attempts == 0) throw ConfigError("infer_intentions: max_attempts must be >= 1");
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].frame_index <= frames[i - 1].frame_index) {
      throw DataError("infer_intentions: frame indices must be strictly increasing");
    }
  }
  const auto sleep = policy.sleep ? policy.sleep : [](std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
  };

  IntentionTrace trace;
  std::vector<std::string> context;
  for (const FrameRef& frame : frames) {
    const VlmRequest request{prompt, frame, context};
    std::string last_failure;
    std::optional<VlmResponse> answer;
    std::size_t attempt = 0;
    while (attempt < policy.max_attempts && !answer) {
      if (attempt > 0) sleep(backoff_delay(policy, attempt - 1));
      ++attempt;
      VlmResponse r;
      try {
        r = client.query(request);
      } catch (const TransportError& e) {
        last_failure = e.what();
        continue;
      }
      if (r.status == VlmStatus::kOk) {
        answer = std::move(r);
      } else if (r.status == VlmStatus::kPermanent) {
        throw TransportError("vlm: permanent failure on " + frame.uri +
                                 (r.text.empty() ? "" : ": " + r.text),
                             trace);
      } else {
        last_failure = r.text.empty() ? "transient failure" : r.text;
      }
    }
    if (!answer) {
      throw TransportError("vlm: " + frame.uri + " failed after " + std::to_string(attempt) +
                               " attempts: " + last_failure,
                           trace);
    }
    const auto first = answer->text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) throw ProtocolError("vlm: empty response for " + frame.uri);
    const auto last = answer->text.find_last_not_of(" \t\r\n");
    std::string text = answer->text.substr(first, last - first + 1);
    trace.per_frame.push_back({frame, text, attempt});
    context.push_back(std::move(text));
  }
  trace.final_intention = trace.per_frame.back().intention;
  return trace;
}

// Wire format.

std::string encode_request(const VlmRequest& request) {
  return json{{"prompt", request.prompt},
              {"frame_uri", request.frame.uri},
              {"video_id", request.frame.video_id},
              {"frame_index", request.frame.frame_index},
              {"context", request.context}}
      .dump();
}

VlmRequest decode_request(const std::string& document) {
  try {
    const json doc = json::parse(document);
    VlmRequest r;
    r.prompt = doc.at("prompt").get<std::string>();
    r.frame.uri = doc.at("frame_uri").get<std::string>();
    r.frame.video_id = doc.value("video_id", std::string());
    r.frame.frame_index = doc.value("frame_index", std::size_t{0});
    r.context = doc.value("context", std::vector<std::string>{});
    return r;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("vlm request: ") + e.what());
  }
}

namespace {

struct Fd {
  int fd = -1;
  explicit Fd(int f) : fd(f) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() {
    if (fd >= 0) ::close(fd);
  }
};

void write_all(int fd, const char* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("socket write: ") + std::strerror(errno));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

void read_all(int fd, char* data, std::size_t n) {
  while (n > 0) {
    const ssize_t r = ::recv(fd, data, n, 0);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("socket read: ") + std::strerror(errno));
    }
    if (r == 0) throw TransportError("socket read: connection closed");
    data += r;
    n -= static_cast<std::size_t>(r);
  }
}

struct Endpoint {
  bool unix_socket = false;
  std::string path;
  std::string host;
  std::string port;
};

Endpoint parse_endpoint(const std::string& spec) {
  if (spec.empty()) throw ConfigError("vlm endpoint is empty");
  Endpoint e;
  std::string s = spec;
  if (s.starts_with("unix:")) {
    e.unix_socket = true;
    e.path = s.substr(5);
  } else if (s.starts_with("/") || s.starts_with("./")) {
    e.unix_socket = true;
    e.path = s;
  } else {
    if (s.starts_with("tcp://")) s = s.substr(6);
    const auto colon = s.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == s.size()) {
      throw ConfigError("vlm endpoint '" + spec + "' is neither a socket path nor host:port");
    }
    e.host = s.substr(0, colon);
    e.port = s.substr(colon + 1);
  }
  if (e.unix_socket && (e.path.empty() || e.path.size() >= sizeof(sockaddr_un::sun_path))) {
    throw ConfigError("vlm endpoint: bad unix socket path '" + e.path + "'");
  }
  return e;
}

void set_timeouts(int fd, std::chrono::milliseconds timeout) {
  timeval tv{};
  tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
  tv.tv_usec = static_cast<suseconds_t>((timeout.count() % 1000) * 1000);
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

int connect_endpoint(const Endpoint& e, std::chrono::milliseconds timeout) {
  if (e.unix_socket) {
    const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd < 0) throw TransportError(std::string("socket: ") + std::strerror(errno));
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    std::strncpy(addr.sun_path, e.path.c_str(), sizeof(addr.sun_path) - 1);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      const int err = errno;
      ::close(fd);
      throw TransportError("connect " + e.path + ": " + std::strerror(err));
    }
    set_timeouts(fd, timeout);
    return fd;
  }
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (const int rc = ::getaddrinfo(e.host.c_str(), e.port.c_str(), &hints, &res); rc != 0) {
    throw TransportError("resolve " + e.host + ": " + ::gai_strerror(rc));
  }
  std::string failure = "no addresses";
  for (addrinfo* p = res; p != nullptr; p = p->ai_next) {
    const int fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) {
      ::freeaddrinfo(res);
      set_timeouts(fd, timeout);
      return fd;
    }
    failure = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(res);
  throw TransportError("connect " + e.host + ":" + e.port + ": " + failure);
}

}  // namespace

void write_frame(int fd, const std::string& payload) {
  if (payload.size() > 0xffffffffULL) throw ProtocolError("frame too large");
  const auto n = static_cast<std::uint32_t>(payload.size());
  const char header[4] = {static_cast<char>(n & 0xff), static_cast<char>((n >> 8) & 0xff),
                          static_cast<char>((n >> 16) & 0xff), static_cast<char>((n >> 24) & 0xff)};
  write_all(fd, header, 4);
  write_all(fd, payload.data(), payload.size());
}

std::string read_frame(int fd) {
  unsigned char header[4];
  read_all(fd, reinterpret_cast<char*>(header), 4);
  const std::uint32_t n = header[0] | (header[1] << 8) | (header[2] << 16) |
                          (static_cast<std::uint32_t>(header[3]) << 24);
  if (n > (64u << 20)) throw ProtocolError("frame of " + std::to_string(n) + " bytes exceeds 64 MiB");
  std::string payload(n, '\0');
  read_all(fd, payload.data(), n);
  return payload;
}

int listen_endpoint(const std::string& endpoint) {
  const Endpoint e = parse_endpoint(endpoint);
  if (e.unix_socket) {
    const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd < 0) throw TransportError(std::string("socket: ") + std::strerror(errno));
    ::unlink(e.path.c_str());
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    std::strncpy(addr.sun_path, e.path.c_str(), sizeof(addr.sun_path) - 1);
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd, 16) != 0) {
      const int err = errno;
      ::close(fd);
      throw TransportError("listen " + e.path + ": " + std::strerror(err));
    }
    return fd;
  }
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  if (const int rc = ::getaddrinfo(e.host.c_str(), e.port.c_str(), &hints, &res); rc != 0) {
    throw TransportError("resolve " + e.host + ": " + ::gai_strerror(rc));
  }
  const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  const bool ok = fd >= 0 && ::bind(fd, res->ai_addr, res->ai_addrlen) == 0 && ::listen(fd, 16) == 0;
  const int err = errno;
  ::freeaddrinfo(res);
  if (!ok) {
    if (fd >= 0) ::close(fd);
    throw TransportError("listen " + endpoint + ": " + std::strerror(err));
  }
  return fd;
}

SocketVlmClient::SocketVlmClient(std::string endpoint, std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), timeout_(timeout) {
  (void)parse_endpoint(endpoint_);
}

VlmResponse SocketVlmClient::query(const VlmRequest& request) {
  const auto start = std::chrono::steady_clock::now();
  Fd conn(connect_endpoint(parse_endpoint(endpoint_), timeout_));
  write_frame(conn.fd, encode_request(request));
  VlmResponse r;
  r.text = read_frame(conn.fd);
  r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// Text encoding.

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      cur += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

HashingTextEncoder::HashingTextEncoder(std::size_t dims, std::uint64_t seed) : dims_(dims), seed_(seed) {
  if (dims == 0) throw ConfigError("text encoder: dims must be positive");
}

Matrix HashingTextEncoder::encode_words(const std::string& text) const {
  const auto words = split_words(text);
  if (words.empty()) throw DataError("text encoder: no words in '" + text + "'");
  Matrix out(words.size(), dims_);
  const std::uint64_t basis = derive_seed(seed_, "text-encoder");
  for (std::size_t w = 0; w < words.size(); ++w) {
    const std::string padded = "<" + words[w] + ">";
    auto feature = [&](std::string_view gram) {
      const std::uint64_t h = fnv1a(gram, basis);
      out(w, h % dims_) += (h >> 63) ? -1.0 : 1.0;
    };
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) feature(std::string_view(padded).substr(i, 3));
    feature(padded);
    double norm = 0.0;
    for (double v : out.row(w)) norm += v * v;
    if (norm == 0.0) {
      out(w, fnv1a(padded, basis) % dims_) = 1.0;
      continue;
    }
    const double inv = 1.0 / std::sqrt(norm);
    for (double& v : out.row(w)) v *= inv;
  }
  return out;
}

IntentionEmbedding embed_intention(const std::string& text, const TextEncoder& encoder,
                                   std::size_t seq) {
  if (seq == 0) throw ConfigError("embed_intention: seq must be >= 1");
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw DataError("embed_intention: empty intention text");
  }
  const Matrix words = encoder.encode_words(text);
  IntentionEmbedding e{Matrix(seq, encoder.dims()), std::min(seq, words.rows())};
  for (std::size_t r = 0; r < e.length; ++r) {
    std::copy(words.row(r).begin(), words.row(r).end(), e.rows.row(r).begin());
  }
  return e;
}

Matrix pooled_text_embedding(const std::string& text, const TextEncoder& encoder) {
  const auto mean = column_means(encoder.encode_words(text));
  return Matrix::row_vector(mean);
}

}  // namespace icvl::intention
