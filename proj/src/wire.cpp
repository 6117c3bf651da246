#include "relens/wire.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "relens/error.hpp"
#include "relens/log.hpp"

namespace relens {

namespace {

using nlohmann::json;

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

std::string sys_error(const std::string& what) { return what + ": " + std::strerror(errno); }

json parse_frame(const std::string& line) {
  try {
    json j = json::parse(line);
    if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
      throw ProtocolError("frame has no string \"type\"", line);
    }
    return j;
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("malformed JSON: ") + e.what(), line);
  }
}

std::vector<std::string> split_command(const std::string& command) {
  std::istringstream in(command);
  std::vector<std::string> argv;
  for (std::string word; in >> word;) argv.push_back(word);
  return argv;
}

}  // namespace

FdTransport::FdTransport(int read_fd, int write_fd, bool owns)
    : read_fd_(read_fd), write_fd_(write_fd), owns_(owns) {
  ignore_sigpipe();
}

FdTransport::~FdTransport() { close_fds(); }

void FdTransport::close_fds() {
  if (!owns_) return;
  if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
  if (read_fd_ >= 0) ::close(read_fd_);
  read_fd_ = write_fd_ = -1;
  owns_ = false;
}

void FdTransport::send_line(std::string_view line) {
  std::string frame(line);
  frame.push_back('\n');
  std::size_t sent = 0;
  while (sent < frame.size()) {
    const ssize_t n = ::write(write_fd_, frame.data() + sent, frame.size() - sent);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw BackendError(sys_error("write to peer failed"));
    }
    sent += static_cast<std::size_t>(n);
  }
}

std::optional<std::string> FdTransport::receive_line(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw TimeoutError("timed out waiting for a frame");
    pollfd pfd{read_fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw BackendError(sys_error("poll failed"));
    }
    if (ready == 0) throw TimeoutError("timed out waiting for a frame");
    char chunk[65536];
    const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw BackendError(sys_error("read from peer failed"));
    }
    if (n == 0) {
      if (buffer_.empty()) return std::nullopt;
      std::string line = std::move(buffer_);
      buffer_.clear();
      return line;
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

ProcessTransport::ProcessTransport(const std::vector<std::string>& argv) : FdTransport(-1, -1, true) {
  if (argv.empty()) throw ConfigError("remote backend command is empty");
  int to_child[2];
  int from_child[2];
  if (::pipe2(to_child, O_CLOEXEC) != 0) throw BackendError(sys_error("pipe"));
  if (::pipe2(from_child, O_CLOEXEC) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw BackendError(sys_error("pipe"));
  }
  std::vector<char*> cargv;
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);

  pid_ = ::fork();
  if (pid_ < 0) throw BackendError(sys_error("fork"));
  if (pid_ == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::execvp(cargv[0], cargv.data());
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  read_fd_ = from_child[0];
  write_fd_ = to_child[1];
}

ProcessTransport::~ProcessTransport() {
  close_fds();
  if (pid_ <= 0) return;
  // Closing its stdin ends a well-behaved server; a stuck one gets SIGTERM.
  int status = 0;
  for (int i = 0; i < 100; ++i) {
    if (::waitpid(pid_, &status, WNOHANG) != 0) return;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  ::kill(pid_, SIGTERM);
  ::waitpid(pid_, &status, 0);
}

SocketTransport::SocketTransport(const std::string& host, std::uint16_t port)
    : FdTransport(-1, -1, true) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* found = nullptr;
  const std::string service = std::to_string(port);
  if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &found); rc != 0) {
    throw BackendError("cannot resolve " + host + ": " + ::gai_strerror(rc));
  }
  int fd = -1;
  for (addrinfo* ai = found; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(found);
  if (fd < 0) throw BackendError(sys_error("cannot connect to " + host + ":" + service));
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  read_fd_ = write_fd_ = fd;
}

std::string encode_hello(const HelloFrame& hello) {
  return json{{"type", "hello"}, {"name", hello.name}, {"vocab_size", hello.vocab_size}}.dump();
}

HelloFrame decode_hello(const std::string& line) {
  const json j = parse_frame(line);
  if (j["type"] != "hello") throw ProtocolError("expected hello frame", line);
  try {
    return {j.at("name").get<std::string>(), j.at("vocab_size").get<std::size_t>()};
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("bad hello frame: ") + e.what(), line);
  }
}

std::string encode_next(std::span<const TokenId> context) {
  return json{{"type", "next"}, {"context_ids", std::vector<TokenId>(context.begin(), context.end())}}
      .dump();
}

std::vector<TokenId> decode_next(const std::string& line) {
  const json j = parse_frame(line);
  if (j["type"] != "next") throw ProtocolError("expected next frame", line);
  try {
    return j.at("context_ids").get<std::vector<TokenId>>();
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("bad next frame: ") + e.what(), line);
  }
}

std::string encode_dense(std::span<const double> probs) {
  return json{{"type", "dist"}, {"probs", std::vector<double>(probs.begin(), probs.end())}}.dump();
}

std::string encode_sparse(std::span<const TokenId> ids, std::span<const double> probs, double rest) {
  return json{{"type", "dist_sparse"},
              {"ids", std::vector<TokenId>(ids.begin(), ids.end())},
              {"probs", std::vector<double>(probs.begin(), probs.end())},
              {"rest", rest}}
      .dump();
}

bool is_bye(const std::string& line) {
  try {
    const json j = json::parse(line);
    return j.is_object() && j.value("type", "") == "bye";
  } catch (const json::exception&) {
    return false;
  }
}

std::vector<double> decode_distribution(const std::string& line, std::size_t vocab_size) {
  const json j = parse_frame(line);
  std::vector<double> dense;
  try {
    if (j["type"] == "dist") {
      dense = j.at("probs").get<std::vector<double>>();
      if (dense.size() != vocab_size) {
        throw ProtocolError("dist frame has " + std::to_string(dense.size()) + " probs, expected " +
                                std::to_string(vocab_size),
                            line);
      }
    } else if (j["type"] == "dist_sparse") {
      const auto ids = j.at("ids").get<std::vector<TokenId>>();
      const auto probs = j.at("probs").get<std::vector<double>>();
      const double rest = j.at("rest").get<double>();
      if (ids.size() != probs.size()) throw ProtocolError("ids and probs differ in length", line);
      if (!(rest >= 0.0)) throw ProtocolError("negative rest mass", line);
      dense.assign(vocab_size, 0.0);
      std::vector<bool> listed(vocab_size, false);
      for (std::size_t k = 0; k < ids.size(); ++k) {
        if (ids[k] >= vocab_size) throw ProtocolError("token id out of range", line);
        if (listed[ids[k]]) throw ProtocolError("duplicate token id", line);
        listed[ids[k]] = true;
        dense[ids[k]] = probs[k];
      }
      const std::size_t unlisted = vocab_size - ids.size();
      if (unlisted == 0) {
        if (rest > 1e-6) throw ProtocolError("rest mass with no unlisted ids", line);
      } else {
        const double share = rest / static_cast<double>(unlisted);
        for (std::size_t i = 0; i < vocab_size; ++i) {
          if (!listed[i]) dense[i] = share;
        }
      }
    } else {
      throw ProtocolError("expected dist or dist_sparse frame", line);
    }
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("bad distribution frame: ") + e.what(), line);
  }
  try {
    check_distribution(dense);
  } catch (const ArgumentError& e) {
    throw ProtocolError(e.what(), line);
  }
  return dense;
}

RemoteBackend::RemoteBackend(std::unique_ptr<LineTransport> transport,
                             std::size_t expected_vocab_size, std::chrono::milliseconds timeout)
    : transport_(std::move(transport)), timeout_(timeout) {
  auto line = transport_->receive_line(timeout_);
  if (!line) throw BackendError("remote closed the connection before hello");
  const HelloFrame hello = decode_hello(*line);
  if (hello.vocab_size != expected_vocab_size) {
    throw BackendError("remote model '" + hello.name + "' announces vocab_size " +
                       std::to_string(hello.vocab_size) + " but the vocabulary file has " +
                       std::to_string(expected_vocab_size) + " tokens");
  }
  name_ = hello.name;
  vocab_size_ = hello.vocab_size;
}

RemoteBackend::~RemoteBackend() {
  try {
    transport_->send_line(R"({"type":"bye"})");
  } catch (const std::exception&) {
  }
}

AbsoluteDistribution RemoteBackend::next_distribution(std::span<const TokenId> context) {
  transport_->send_line(encode_next(context));
  auto line = transport_->receive_line(timeout_);
  if (!line) throw BackendError("remote model '" + name_ + "' closed the connection");
  return {decode_distribution(*line, vocab_size_), 0};
}

std::unique_ptr<RemoteBackend> remote_backend(const std::vector<std::string>& argv,
                                              std::size_t expected_vocab_size,
                                              std::chrono::milliseconds timeout) {
  return std::make_unique<RemoteBackend>(std::make_unique<ProcessTransport>(argv),
                                         expected_vocab_size, timeout);
}

std::unique_ptr<RemoteBackend> remote_backend(const std::string& endpoint, Transport transport,
                                              std::size_t expected_vocab_size,
                                              std::chrono::milliseconds timeout) {
  if (transport == Transport::standard_stream) {
    return remote_backend(split_command(endpoint), expected_vocab_size, timeout);
  }
  const auto colon = endpoint.rfind(':');
  if (colon == std::string::npos) throw ConfigError("socket endpoint must be host:port");
  int port = 0;
  try {
    port = std::stoi(endpoint.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("bad port in endpoint '" + endpoint + "'");
  }
  if (port < 1 || port > 65535) throw ConfigError("bad port in endpoint '" + endpoint + "'");
  return std::make_unique<RemoteBackend>(
      std::make_unique<SocketTransport>(endpoint.substr(0, colon), static_cast<std::uint16_t>(port)),
      expected_vocab_size, timeout);
}

void serve_session(ModelBackend& backend, LineTransport& transport, const ServeOptions& options) {
  transport.send_line(encode_hello({backend.name(), backend.vocab_size()}));
  constexpr auto kIdle = std::chrono::hours(24);
  while (auto line = transport.receive_line(kIdle)) {
    if (line->empty()) continue;
    if (is_bye(*line)) return;
    const auto context = decode_next(*line);
    for (TokenId id : context) {
      if (id >= backend.vocab_size()) throw ProtocolError("context id out of range", *line);
    }
    const auto p = backend.next_distribution(context).values;
    if (!options.sparse_top) {
      transport.send_line(encode_dense(p));
      continue;
    }
    std::vector<TokenId> order(p.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t k = std::min(*options.sparse_top, p.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](TokenId a, TokenId b) { return p[a] > p[b] || (p[a] == p[b] && a < b); });
    order.resize(k);
    std::vector<double> probs;
    double listed = 0.0;
    for (TokenId id : order) {
      probs.push_back(p[id]);
      listed += p[id];
    }
    transport.send_line(encode_sparse(order, probs, std::max(0.0, 1.0 - listed)));
  }
}

void serve_socket(ModelBackend& backend, std::uint16_t port, const ServeOptions& options,
                  std::optional<std::size_t> max_sessions, std::function<void(std::uint16_t)> bound) {
  ignore_sigpipe();
  const int listener = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (listener < 0) throw BackendError(sys_error("socket"));
  int one = 1;
  ::setsockopt(listener, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(listener, 4) != 0) {
    const std::string err = sys_error("cannot listen on port " + std::to_string(port));
    ::close(listener);
    throw BackendError(err);
  }
  socklen_t len = sizeof addr;
  ::getsockname(listener, reinterpret_cast<sockaddr*>(&addr), &len);
  const auto actual = ntohs(addr.sin_port);
  logger().info("serving '{}' on 127.0.0.1:{}", backend.name(), actual);
  if (bound) bound(actual);

  for (std::size_t served = 0; !max_sessions || served < *max_sessions; ++served) {
    const int fd = ::accept4(listener, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) {
      if (errno == EINTR) continue;
      ::close(listener);
      throw BackendError(sys_error("accept"));
    }
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    FdTransport session(fd, fd, true);
    try {
      serve_session(backend, session, options);
    } catch (const BackendError& e) {
      logger().warn("session ended with error: {}", e.what());
    }
  }
  ::close(listener);
}

}  // namespace relens
