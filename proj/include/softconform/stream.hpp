#pragma once

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "softconform/errors.hpp"
#include "softconform/event_log.hpp"
#include "softconform/rng.hpp"

namespace softconform {

/// One event on the wire. Lines are UTF-8, newline terminated:
///   <case>,<accomplishment>[,<timestamp>]
/// The split is on the first and second comma, so neither field may contain
/// a literal comma. The timestamp, when present, is carried but ignored:
/// ordering is arrival order.
struct WireEvent {
  std::string case_id;
  std::string accomplishment;
};

/// Parses one line (without its newline). Returns nothing when the line is
/// malformed: no comma, or an empty case or accomplishment field.
inline std::optional<WireEvent> parse_wire_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  const std::size_t first = line.find(',');
  if (first == std::string_view::npos || first == 0) return std::nullopt;
  std::string_view rest = line.substr(first + 1);
  const std::size_t second = rest.find(',');
  if (second != std::string_view::npos) rest = rest.substr(0, second);
  if (rest.empty()) return std::nullopt;
  return WireEvent{std::string(line.substr(0, first)), std::string(rest)};
}

enum class ReplayMode { sequential, round_robin, shuffle };

struct ReplaySchedule {
  ReplayMode mode = ReplayMode::sequential;
  std::uint64_t seed = 0;              // shuffle only
  double events_per_second = 0.0;      // 0 = as fast as possible
};

/// Flattens a log into a stream: cases c1..cN in canonical order, each
/// case's events in trace order, interleaved per the schedule. Shuffle picks
/// a random interleaving but never reorders events within a case.
inline std::vector<StreamEvent> replay_log(const EventLog& log, std::string_view attribute,
                                           const ReplaySchedule& schedule) {
  const std::vector<CaseInstance> instances = expand_cases(log);
  std::vector<std::vector<std::string>> sequences;
  sequences.reserve(instances.size());
  for (const auto& instance : instances)
    sequences.push_back(project(*instance.trace, attribute, MissingPolicy::fail));

  std::vector<std::size_t> order;  // one token per event, naming its case
  switch (schedule.mode) {
    case ReplayMode::sequential:
      for (std::size_t i = 0; i < sequences.size(); ++i)
        order.insert(order.end(), sequences[i].size(), i);
      break;
    case ReplayMode::round_robin: {
      std::size_t remaining = 0;
      for (const auto& s : sequences) remaining += s.size();
      std::vector<std::size_t> taken(sequences.size(), 0);
      while (remaining > 0)
        for (std::size_t i = 0; i < sequences.size(); ++i)
          if (taken[i] < sequences[i].size()) {
            order.push_back(i);
            ++taken[i];
            --remaining;
          }
      break;
    }
    case ReplayMode::shuffle: {
      for (std::size_t i = 0; i < sequences.size(); ++i)
        order.insert(order.end(), sequences[i].size(), i);
      SeededRng rng(schedule.seed);
      rng.shuffle(order);
      break;
    }
  }

  std::vector<StreamEvent> events;
  events.reserve(order.size());
  std::vector<std::size_t> cursor(sequences.size(), 0);
  for (const std::size_t i : order) {
    events.push_back(StreamEvent{instances[i].case_id, sequences[i][cursor[i]++],
                                 static_cast<std::uint64_t>(events.size() + 1)});
  }
  return events;
}

namespace detail {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Socket& operator=(Socket&& other) noexcept {
    if (this != &other) {
      reset();
      fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { reset(); }

  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};

inline Endpoint parse_endpoint(std::string_view address) {
  const std::size_t colon = address.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 == address.size())
    throw ValidationError("address must be host:port, got '" + std::string(address) + "'");
  const std::string_view port_text = address.substr(colon + 1);
  unsigned long port = 0;
  for (const char c : port_text) {
    if (c < '0' || c > '9')
      throw ValidationError("invalid port in '" + std::string(address) + "'");
    port = port * 10 + static_cast<unsigned long>(c - '0');
    if (port > 65535)
      throw ValidationError("port out of range in '" + std::string(address) + "'");
  }
  return Endpoint{std::string(address.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

inline void send_all(int fd, const char* data, std::size_t size) {
  while (size > 0) {
    const ssize_t sent = ::send(fd, data, size, MSG_NOSIGNAL);
    if (sent < 0) {
      if (errno == EINTR) continue;
      throw IoError(std::string("send failed: ") + std::strerror(errno));
    }
    data += sent;
    size -= static_cast<std::size_t>(sent);
  }
}

/// Connects with a few retries so a listener that is still starting up is
/// not a hard failure.
inline Socket connect_tcp(std::string_view address, int attempts = 3) {
  const auto endpoint = parse_endpoint(address);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(endpoint.port);
  if (endpoint.host == "localhost") {
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  } else if (::inet_pton(AF_INET, endpoint.host.c_str(), &addr.sin_addr) != 1) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* found = nullptr;
    const int rc = ::getaddrinfo(endpoint.host.c_str(), nullptr, &hints, &found);
    if (rc != 0 || !found)
      throw IoError("cannot resolve '" + endpoint.host + "': " + ::gai_strerror(rc));
    addr.sin_addr = reinterpret_cast<sockaddr_in*>(found->ai_addr)->sin_addr;
    ::freeaddrinfo(found);
  }

  Socket sock;
  for (int attempt = 1;; ++attempt) {
    sock = Socket(::socket(AF_INET, SOCK_STREAM, 0));
    if (!sock.valid()) throw IoError(std::string("socket failed: ") + std::strerror(errno));
    if (::connect(sock.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0) break;
    sock.reset();
    if (attempt >= attempts)
      throw IoError("cannot connect to " + std::string(address) + ": " + std::strerror(errno));
    std::this_thread::sleep_for(std::chrono::milliseconds(250));
  }
  const int one = 1;
  ::setsockopt(sock.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return sock;
}

}  // namespace detail

struct ListenStats {
  std::uint64_t events = 0;
  std::uint64_t malformed = 0;
  std::uint64_t connections = 0;
};

struct ListenOptions {
  /// false: return once every accepted connection has closed (at least one
  /// must connect first). true: keep accepting until request_stop().
  bool keep_listening = false;
  std::ostream* diagnostics = nullptr;
};

/// Single threaded TCP ingest. One poll loop owns every connection, so the
/// order events are handed to the callback is the order they were read, and
/// that is the stream's total order. Backpressure is the socket buffer
/// filling up. Memory stays bounded: per connection, at most one partial
/// line; a line longer than 64 KiB is discarded as malformed.
class TcpListener {
 public:
  explicit TcpListener(std::string_view address) {
    const auto endpoint = detail::parse_endpoint(address);
    detail::Socket fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (!fd.valid()) throw IoError(std::string("socket failed: ") + std::strerror(errno));
    const int one = 1;
    ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(endpoint.port);
    if (endpoint.host == "localhost") {
      addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    } else if (::inet_pton(AF_INET, endpoint.host.c_str(), &addr.sin_addr) != 1) {
      throw ValidationError("listen host must be an IPv4 address or localhost, got '" +
                            endpoint.host + "'");
    }
    if (::bind(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
      throw IoError("cannot bind " + std::string(address) + ": " + std::strerror(errno));
    if (::listen(fd.get(), 16) != 0)
      throw IoError(std::string("listen failed: ") + std::strerror(errno));
    const int flags = ::fcntl(fd.get(), F_GETFL, 0);
    ::fcntl(fd.get(), F_SETFL, flags | O_NONBLOCK);

    sockaddr_in bound{};
    socklen_t len = sizeof bound;
    if (::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&bound), &len) != 0)
      throw IoError(std::string("getsockname failed: ") + std::strerror(errno));
    port_ = ntohs(bound.sin_port);

    int pipe_fds[2];
    if (::pipe(pipe_fds) != 0)
      throw IoError(std::string("pipe failed: ") + std::strerror(errno));
    // non-blocking so draining stops at empty instead of hanging the loop
    for (const int pfd : pipe_fds) {
      const int pflags = ::fcntl(pfd, F_GETFL, 0);
      ::fcntl(pfd, F_SETFL, pflags | O_NONBLOCK);
    }
    stop_read_ = detail::Socket(pipe_fds[0]);
    stop_write_ = detail::Socket(pipe_fds[1]);
    listen_fd_ = std::move(fd);
  }

  /// The bound port; useful after asking for port 0.
  std::uint16_t port() const { return port_; }

  /// May be called from any thread, any number of times.
  void request_stop() {
    const char byte = 1;
    [[maybe_unused]] ssize_t n = ::write(stop_write_.get(), &byte, 1);
  }

  /// Runs the ingest loop. `on_event` is invoked once per well formed line.
  template <typename OnEvent>
  ListenStats run(OnEvent&& on_event, const ListenOptions& options = {}) {
    static constexpr std::size_t kMaxLine = 64 * 1024;
    struct Client {
      detail::Socket fd;
      std::string buffer;
      bool overlong = false;
    };

    ListenStats stats;
    std::vector<Client> clients;
    std::vector<pollfd> fds;
    std::vector<char> chunk(64 * 1024);
    bool stopping = false;

    auto consume = [&](Client& client) {
      std::size_t start = 0;
      while (true) {
        const std::size_t nl = client.buffer.find('\n', start);
        if (nl == std::string::npos) break;
        const std::string_view line(client.buffer.data() + start, nl - start);
        start = nl + 1;
        if (client.overlong) {
          client.overlong = false;  // tail of a discarded line
          continue;
        }
        if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
        if (auto event = parse_wire_line(line)) {
          ++stats.events;
          on_event(*event);
        } else {
          ++stats.malformed;
          log_malformed(options, stats.malformed, line);
        }
      }
      client.buffer.erase(0, start);
      if (client.buffer.size() > kMaxLine) {
        ++stats.malformed;
        log_malformed(options, stats.malformed, "<line over 64 KiB>");
        client.buffer.clear();
        client.overlong = true;
      }
    };

    while (true) {
      const bool listen_polled = !stopping;
      fds.clear();
      fds.push_back(pollfd{stop_read_.get(), POLLIN, 0});
      if (listen_polled) fds.push_back(pollfd{listen_fd_.get(), POLLIN, 0});
      for (const auto& client : clients) fds.push_back(pollfd{client.fd.get(), POLLIN, 0});

      const int ready = ::poll(fds.data(), fds.size(), -1);
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw IoError(std::string("poll failed: ") + std::strerror(errno));
      }

      std::size_t at = 0;
      if (fds[at++].revents & POLLIN) {
        char drain[64];
        while (::read(stop_read_.get(), drain, sizeof drain) > 0) {
        }
        stopping = true;
      }
      if (listen_polled) {
        const bool acceptable = (fds[at++].revents & (POLLIN | POLLERR)) != 0;
        if (acceptable && !stopping) {
          while (true) {
            const int accepted = ::accept(listen_fd_.get(), nullptr, nullptr);
            if (accepted < 0) break;
            const int one = 1;
            ::setsockopt(accepted, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            const int flags = ::fcntl(accepted, F_GETFL, 0);
            ::fcntl(accepted, F_SETFL, flags | O_NONBLOCK);
            clients.push_back(Client{detail::Socket(accepted), {}, false});
            ++stats.connections;
            if (options.diagnostics)
              *options.diagnostics << "connection " << stats.connections << " accepted\n";
          }
        }
      }

      for (std::size_t c = 0; c < clients.size() && at < fds.size(); ++c, ++at) {
        if (!(fds[at].revents & (POLLIN | POLLHUP | POLLERR))) continue;
        Client& client = clients[c];
        bool closed = false;
        while (true) {
          const ssize_t got = ::recv(client.fd.get(), chunk.data(), chunk.size(), 0);
          if (got > 0) {
            client.buffer.append(chunk.data(), static_cast<std::size_t>(got));
            consume(client);
            continue;
          }
          if (got == 0) {
            closed = true;
          } else if (errno == EAGAIN || errno == EWOULDBLOCK) {
            break;
          } else if (errno == EINTR) {
            continue;
          } else {
            closed = true;  // reset by peer and the like
          }
          break;
        }
        if (closed) {
          std::string_view tail = client.buffer;
          if (!tail.empty() && tail.back() == '\r') tail.remove_suffix(1);
          if (!tail.empty() && !client.overlong) {
            // tolerate a final line without its newline
            if (auto event = parse_wire_line(tail)) {
              ++stats.events;
              on_event(*event);
            } else {
              ++stats.malformed;
              log_malformed(options, stats.malformed, tail);
            }
          }
          client.fd.reset();
        }
      }
      std::erase_if(clients, [](const Client& c) { return !c.fd.valid(); });

      if (stopping && clients.empty()) break;
      if (!options.keep_listening && stats.connections > 0 && clients.empty()) break;
    }
    return stats;
  }

 private:
  static void log_malformed(const ListenOptions& options, std::uint64_t count,
                            std::string_view line) {
    if (!options.diagnostics) return;
    if (count <= 20)
      *options.diagnostics << "malformed line skipped: " << line << '\n';
    else if (count == 21)
      *options.diagnostics << "further malformed lines suppressed\n";
  }

  detail::Socket listen_fd_;
  detail::Socket stop_read_;
  detail::Socket stop_write_;
  std::uint16_t port_ = 0;
};

struct EmitReport {
  std::uint64_t events_sent = 0;
  double seconds = 0.0;
  double achieved_rate = 0.0;
};

/// Connects to `address` and streams the events in order, newline separated.
/// Rate 0 sends flat out in 64 KiB chunks; otherwise each event is paced to
/// its slot on an absolute schedule, so a slow patch is caught up rather than
/// dragging the average down. Connection attempts are retried a few times.
inline EmitReport emit_tcp(std::span<const StreamEvent> events, std::string_view address,
                           double events_per_second = 0.0) {
  if (events_per_second < 0.0) throw ValidationError("rate must be >= 0");
  detail::Socket sock = detail::connect_tcp(address);

  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  std::string buffer;
  buffer.reserve(64 * 1024 + 256);

  auto render = [&buffer](const StreamEvent& event) {
    buffer += event.case_id;
    buffer += ',';
    buffer += event.accomplishment;
    buffer += '\n';
  };

  if (events_per_second == 0.0) {
    for (const auto& event : events) {
      render(event);
      if (buffer.size() >= 64 * 1024) {
        detail::send_all(sock.get(), buffer.data(), buffer.size());
        buffer.clear();
      }
    }
    if (!buffer.empty()) detail::send_all(sock.get(), buffer.data(), buffer.size());
  } else {
    const auto interval = std::chrono::duration<double>(1.0 / events_per_second);
    for (std::size_t i = 0; i < events.size(); ++i) {
      std::this_thread::sleep_until(
          start + std::chrono::duration_cast<clock::duration>(interval * i));
      render(events[i]);
      detail::send_all(sock.get(), buffer.data(), buffer.size());
      buffer.clear();
    }
  }
  ::shutdown(sock.get(), SHUT_WR);

  EmitReport report;
  report.events_sent = events.size();
  report.seconds = std::chrono::duration<double>(clock::now() - start).count();
  report.achieved_rate = report.seconds > 0 ? static_cast<double>(report.events_sent) /
                                                  report.seconds
                                            : 0.0;
  return report;
}

}  // namespace softconform
