#include "svff/qmp_server.hpp"

#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <istream>
#include <ostream>

namespace svff::qmp {

namespace {

sockaddr_un make_addr(const std::string& path) {
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path.size() >= sizeof(addr.sun_path))
    throw Error(Errc::BindFailure, "socket path too long: " + path);
  std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
  return addr;
}

bool write_all(int fd, const std::string& data) {
  std::size_t done = 0;
  while (done < data.size()) {
    ssize_t n = ::send(fd, data.data() + done, data.size() - done, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    done += static_cast<std::size_t>(n);
  }
  return true;
}

}  // namespace

UnixServer::UnixServer(Dispatcher& dispatcher, std::string socket_path)
    : dispatcher_(&dispatcher), path_(std::move(socket_path)) {
  auto addr = make_addr(path_);
  listen_fd_ = ::socket(AF_UNIX, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error(Errc::BindFailure, std::strerror(errno));
  ::unlink(path_.c_str());
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 ||
      ::listen(listen_fd_, 8) < 0) {
    std::string why = std::strerror(errno);
    ::close(listen_fd_);
    throw Error(Errc::BindFailure, path_ + ": " + why);
  }
  acceptor_ = std::thread([this] { accept_loop(); });
}

UnixServer::~UnixServer() {
  stop();
  wait();
}

void UnixServer::accept_loop() {
  while (!stopping_) {
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      break;
    }
    std::lock_guard lock(workers_mutex_);
    if (stopping_) {
      ::close(fd);
      break;
    }
    client_fds_.push_back(fd);
    workers_.emplace_back([this, fd] { serve_connection(fd); });
  }
}

void UnixServer::serve_connection(int fd) {
  if (write_all(fd, dispatcher_->greeting() + "\n")) {
    std::string pending;
    char buf[4096];
    bool open = true;
    while (open) {
      ssize_t n = ::recv(fd, buf, sizeof(buf), 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      pending.append(buf, static_cast<std::size_t>(n));
      std::size_t nl;
      while ((nl = pending.find('\n')) != std::string::npos) {
        std::string line = pending.substr(0, nl);
        pending.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::string response = dispatcher_->handle_line(line);
        if (after_command_) after_command_();
        if (!write_all(fd, response + "\n")) {
          open = false;
          break;
        }
      }
    }
  }
  ::shutdown(fd, SHUT_RDWR);
}

void UnixServer::stop() {
  if (stopping_.exchange(true)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  std::lock_guard lock(workers_mutex_);
  for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
}

void UnixServer::wait() {
  if (acceptor_.joinable()) acceptor_.join();
  std::list<std::thread> workers;
  {
    std::lock_guard lock(workers_mutex_);
    workers.swap(workers_);
  }
  for (auto& t : workers)
    if (t.joinable()) t.join();
  std::lock_guard lock(workers_mutex_);
  for (int fd : client_fds_) ::close(fd);
  client_fds_.clear();
  if (listen_fd_ >= 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    ::unlink(path_.c_str());
  }
}

void serve_stream(Dispatcher& dispatcher, std::istream& in, std::ostream& out) {
  out << dispatcher.greeting() << '\n' << std::flush;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    out << dispatcher.handle_line(line) << '\n' << std::flush;
  }
}

UnixClient::UnixClient(const std::string& socket_path) {
  auto addr = make_addr(socket_path);
  fd_ = ::socket(AF_UNIX, SOCK_STREAM, 0);
  if (fd_ < 0 || ::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    std::string why = std::strerror(errno);
    if (fd_ >= 0) ::close(fd_);
    throw Error(Errc::BindFailure, "cannot connect to " + socket_path + ": " + why);
  }
  greeting_ = Json::parse(read_line());
}

UnixClient::~UnixClient() {
  if (fd_ >= 0) ::close(fd_);
}

std::string UnixClient::read_line() {
  std::size_t nl;
  char buf[4096];
  while ((nl = buffer_.find('\n')) == std::string::npos) {
    ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error(Errc::BindFailure, "connection closed by server");
    buffer_.append(buf, static_cast<std::size_t>(n));
  }
  std::string line = buffer_.substr(0, nl);
  buffer_.erase(0, nl + 1);
  return line;
}

std::string UnixClient::roundtrip(const std::string& line) {
  if (!write_all(fd_, line + "\n"))
    throw Error(Errc::BindFailure, "cannot write to server");
  return read_line();
}

Json UnixClient::execute(std::string_view command, const Json& arguments) {
  Json request{{"execute", std::string(command)}, {"arguments", arguments}};
  return unwrap_response(Json::parse(roundtrip(request.dump())));
}

}  // namespace svff::qmp
