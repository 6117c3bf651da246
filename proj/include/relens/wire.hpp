#pragma once

// Newline-delimited JSON protocol between the ensemble and external
// inference servers:
//   server -> {"type":"hello","name":s,"vocab_size":n}   on connect
//   client -> {"type":"next","context_ids":[...]}
//   server -> {"type":"dist","probs":[...]}
//          |  {"type":"dist_sparse","ids":[...],"probs":[...],"rest":x}
//   client -> {"type":"bye"}
// One frame per line, no pipelining.

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "relens/backends.hpp"

namespace relens {

class LineTransport {
 public:
  virtual ~LineTransport() = default;
  virtual void send_line(std::string_view line) = 0;
  // Returns nullopt on orderly end of stream; throws TimeoutError on timeout.
  virtual std::optional<std::string> receive_line(std::chrono::milliseconds timeout) = 0;
};

// Reads and writes existing file descriptors (a server's stdin/stdout, or
// one accepted socket). Does not own them unless `owns` is set.
class FdTransport : public LineTransport {
 public:
  FdTransport(int read_fd, int write_fd, bool owns = false);
  ~FdTransport() override;
  FdTransport(const FdTransport&) = delete;
  FdTransport& operator=(const FdTransport&) = delete;

  void send_line(std::string_view line) override;
  std::optional<std::string> receive_line(std::chrono::milliseconds timeout) override;

 protected:
  void close_fds();
  int read_fd_;
  int write_fd_;
  bool owns_;
  std::string buffer_;
};

// Spawns `argv` and talks to it over its standard streams.
class ProcessTransport : public FdTransport {
 public:
  explicit ProcessTransport(const std::vector<std::string>& argv);
  ~ProcessTransport() override;

 private:
  int pid_ = -1;
};

// TCP stream socket to host:port.
class SocketTransport : public FdTransport {
 public:
  SocketTransport(const std::string& host, std::uint16_t port);
};

struct HelloFrame {
  std::string name;
  std::size_t vocab_size = 0;
};

std::string encode_hello(const HelloFrame& hello);
HelloFrame decode_hello(const std::string& line);
std::string encode_next(std::span<const TokenId> context);
std::vector<TokenId> decode_next(const std::string& line);  // throws on non-"next" frames
std::string encode_dense(std::span<const double> probs);
std::string encode_sparse(std::span<const TokenId> ids, std::span<const double> probs, double rest);
// Parses "dist" or "dist_sparse" into a dense distribution over `vocab_size` ids.
std::vector<double> decode_distribution(const std::string& line, std::size_t vocab_size);
bool is_bye(const std::string& line);

class RemoteBackend : public ModelBackend {
 public:
  // Completes the handshake; throws BackendError when the announced
  // vocabulary size differs from `expected_vocab_size`.
  RemoteBackend(std::unique_ptr<LineTransport> transport, std::size_t expected_vocab_size,
                std::chrono::milliseconds timeout = std::chrono::seconds(30));
  ~RemoteBackend() override;

  const std::string& name() const override { return name_; }
  std::size_t vocab_size() const override { return vocab_size_; }
  AbsoluteDistribution next_distribution(std::span<const TokenId> context) override;

 private:
  std::unique_ptr<LineTransport> transport_;
  std::string name_;
  std::size_t vocab_size_ = 0;
  std::chrono::milliseconds timeout_;
};

enum class Transport { standard_stream, socket };

// endpoint: a command line for standard_stream ("prog arg ..."), or
// "host:port" for socket.
std::unique_ptr<RemoteBackend> remote_backend(const std::string& endpoint, Transport transport,
                                              std::size_t expected_vocab_size,
                                              std::chrono::milliseconds timeout = std::chrono::seconds(30));
std::unique_ptr<RemoteBackend> remote_backend(const std::vector<std::string>& argv,
                                              std::size_t expected_vocab_size,
                                              std::chrono::milliseconds timeout = std::chrono::seconds(30));

struct ServeOptions {
  std::optional<std::size_t> sparse_top;  // answer with dist_sparse frames of this many ids
};

// Serves one session: sends hello, answers "next" frames until "bye" or EOF.
void serve_session(ModelBackend& backend, LineTransport& transport, const ServeOptions& options = {});

// Listens on 127.0.0.1:port and serves sessions one at a time. Stops after
// `max_sessions` sessions when set. Returns the bound port through `bound`
// before accepting (port 0 picks a free port).
void serve_socket(ModelBackend& backend, std::uint16_t port, const ServeOptions& options,
                  std::optional<std::size_t> max_sessions = std::nullopt,
                  std::function<void(std::uint16_t)> bound = {});

}  // namespace relens
