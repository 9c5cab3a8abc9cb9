#pragma once

#include <atomic>
#include <functional>
#include <iosfwd>
#include <list>
#include <mutex>
#include <string>
#include <thread>

#include "svff/qmp.hpp"

namespace svff::qmp {

// Serves a dispatcher on a Unix stream socket, one thread per connection.
class UnixServer {
 public:
  // Throws Error(BindFailure).
  UnixServer(Dispatcher& dispatcher, std::string socket_path);
  ~UnixServer();

  UnixServer(const UnixServer&) = delete;
  UnixServer& operator=(const UnixServer&) = delete;

  const std::string& path() const { return path_; }
  // Called after each handled command (e.g. to persist state).
  void set_after_command(std::function<void()> hook) { after_command_ = std::move(hook); }
  void stop();
  void wait();

 private:
  void accept_loop();
  void serve_connection(int fd);

  Dispatcher* dispatcher_;
  std::string path_;
  int listen_fd_ = -1;
  std::atomic<bool> stopping_{false};
  std::function<void()> after_command_;
  std::thread acceptor_;
  std::mutex workers_mutex_;
  std::list<std::thread> workers_;
  std::list<int> client_fds_;
};

// Greeting, then one response line per request line until EOF.
void serve_stream(Dispatcher& dispatcher, std::istream& in, std::ostream& out);

class UnixClient final : public Channel {
 public:
  // Connects and consumes the greeting. Throws Error(BindFailure) when the
  // socket cannot be reached.
  explicit UnixClient(const std::string& socket_path);
  ~UnixClient() override;

  UnixClient(const UnixClient&) = delete;
  UnixClient& operator=(const UnixClient&) = delete;

  const Json& greeting() const { return greeting_; }
  std::string roundtrip(const std::string& line);
  Json execute(std::string_view command, const Json& arguments) override;

 private:
  std::string read_line();

  int fd_ = -1;
  std::string buffer_;
  Json greeting_;
};

}  // namespace svff::qmp
