#pragma once

#include <array>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"
#include "svff/error.hpp"
#include "svff/vmm.hpp"

namespace svff::qmp {

using Json = nlohmann::ordered_json;

inline constexpr std::array<std::string_view, 4> kCapabilities = {
    "device_pause", "device_add", "device_del", "query-devices"};

// Closed mapping: every Errc has exactly one wire class and back.
std::string_view error_class(Errc code) noexcept;
std::optional<Errc> errc_from_class(std::string_view cls) noexcept;

// Executes JSON-line commands against a VMM. Commands run one at a time
// regardless of how many connections feed this dispatcher.
class Dispatcher {
 public:
  explicit Dispatcher(Vmm& vmm) : vmm_(&vmm) {}

  std::string greeting() const;
  // One request line in, one response line out (no trailing newline).
  std::string handle_line(std::string_view line);
  Json execute(const Json& command);

 private:
  Json dispatch(const std::string& name, const Json& args);
  Json device_add(const Json& args);
  Json device_del(const Json& args);
  Json device_pause(const Json& args);
  Json query_devices(const Json& args);
  std::pair<std::string, std::string> locate(const Json& args) const;

  Vmm* vmm_;
  std::mutex mutex_;
};

// Client side used by the orchestrator.
class Channel {
 public:
  virtual ~Channel() = default;
  // Returns the "return" payload; error responses throw Error with the code
  // recovered from the error class.
  virtual Json execute(std::string_view command, const Json& arguments) = 0;
};

// Talks to a dispatcher in the same process, still through the wire format.
class InProcessChannel final : public Channel {
 public:
  explicit InProcessChannel(Dispatcher& dispatcher) : dispatcher_(&dispatcher) {}
  Json execute(std::string_view command, const Json& arguments) override;

 private:
  Dispatcher* dispatcher_;
};

// Turns a response object into a payload or an Error.
Json unwrap_response(const Json& response);

}  // namespace svff::qmp
