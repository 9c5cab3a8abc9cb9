#include "svff/qmp.hpp"

#include <map>

namespace svff::qmp {

std::string_view error_class(Errc code) noexcept {
  switch (code) {
    case Errc::UnknownDevice: return "DeviceNotFound";
    case Errc::MalformedCommand: return "GenericError";
    default: return errc_name(code);
  }
}

std::optional<Errc> errc_from_class(std::string_view cls) noexcept {
  for (Errc code : kAllErrc)
    if (error_class(code) == cls) return code;
  return std::nullopt;
}

namespace {

Json error_response(Errc code, const std::string& desc, const Json* id) {
  Json out;
  out["error"] = Json{{"class", std::string(error_class(code))}, {"desc", desc}};
  if (id) out["id"] = *id;
  return out;
}

const std::string& require_string(const Json& args, const char* key) {
  auto it = args.find(key);
  if (it == args.end() || !it->is_string())
    throw Error(Errc::InvalidParameter, std::string("'") + key + "' must be a string");
  return it->get_ref<const std::string&>();
}

std::optional<std::string> optional_string(const Json& args, const char* key) {
  auto it = args.find(key);
  if (it == args.end()) return std::nullopt;
  if (!it->is_string())
    throw Error(Errc::InvalidParameter, std::string("'") + key + "' must be a string");
  return it->get<std::string>();
}

}  // namespace

std::string Dispatcher::greeting() const {
  Json caps = Json::array();
  for (auto c : kCapabilities) caps.push_back(std::string(c));
  return Json{{"QMP", Json{{"capabilities", caps}}}}.dump();
}

std::string Dispatcher::handle_line(std::string_view line) {
  Json command;
  try {
    command = Json::parse(line);
  } catch (const Json::parse_error&) {
    return error_response(Errc::MalformedCommand, "malformed JSON", nullptr).dump();
  }
  return execute(command).dump(-1, ' ', false, Json::error_handler_t::replace);
}

Json Dispatcher::execute(const Json& command) {
  std::lock_guard lock(mutex_);
  const Json* id = nullptr;
  if (command.is_object() && command.contains("id")) id = &command.at("id");
  try {
    if (!command.is_object() || !command.contains("execute") ||
        !command.at("execute").is_string())
      throw Error(Errc::MalformedCommand, "expected an object with an 'execute' string");
    Json args = Json::object();
    if (command.contains("arguments")) {
      args = command.at("arguments");
      if (!args.is_object())
        throw Error(Errc::InvalidParameter, "'arguments' must be an object");
    }
    Json out;
    out["return"] = dispatch(command.at("execute").get<std::string>(), args);
    if (id) out["id"] = *id;
    return out;
  } catch (const Error& e) {
    return error_response(e.code(), e.detail(), id);
  }
}

Json Dispatcher::dispatch(const std::string& name, const Json& args) {
  if (name == "device_pause") return device_pause(args);
  if (name == "device_add") return device_add(args);
  if (name == "device_del") return device_del(args);
  if (name == "query-devices") return query_devices(args);
  throw Error(Errc::CommandNotFound, "the command " + name + " has not been found");
}

std::pair<std::string, std::string> Dispatcher::locate(const Json& args) const {
  const std::string& id = require_string(args, "id");
  if (auto vm = optional_string(args, "vm")) {
    vmm_->device(*vm, id);  // UnknownVm / UnknownDevice
    return {*vm, id};
  }
  std::optional<std::string> found;
  for (const auto& [name, domain] : vmm_->vms()) {
    if (!domain.devices.contains(id)) continue;
    if (found)
      throw Error(Errc::InvalidParameter, "device '" + id + "' exists in several VMs; pass 'vm'");
    found = name;
  }
  if (!found) throw Error(Errc::UnknownDevice, "device '" + id + "' not found");
  return {*found, id};
}

Json Dispatcher::device_add(const Json& args) {
  if (auto driver = optional_string(args, "driver"); driver && *driver != "vfio-pci")
    throw Error(Errc::InvalidParameter, "only driver 'vfio-pci' is supported");
  const std::string& id = require_string(args, "id");
  auto host = PciAddress::try_parse(require_string(args, "host"));
  if (!host) throw Error(Errc::InvalidParameter, "'host' must be DDDD:BB:SS.F");
  std::string vm;
  if (auto v = optional_string(args, "vm")) {
    vm = *v;
  } else if (vmm_->vms().size() == 1) {
    vm = vmm_->vms().begin()->first;
  } else {
    throw Error(Errc::InvalidParameter, "'vm' is required when several VMs exist");
  }
  vmm_->realize(vm, *host, id);
  return Json::object();
}

Json Dispatcher::device_del(const Json& args) {
  auto [vm, id] = locate(args);
  vmm_->exit_device(vm, id);
  return Json::object();
}

Json Dispatcher::device_pause(const Json& args) {
  auto [vm, id] = locate(args);
  auto paused = args.find("paused");
  if (paused == args.end() || !paused->is_boolean())
    throw Error(Errc::InvalidParameter, "'paused' must be a boolean");
  if (!vmm_->is_pausable(vm, id))
    throw Error(Errc::NotPausable, "device '" + id + "' does not support pause");
  if (paused->get<bool>())
    vmm_->pause(vm, id);
  else
    vmm_->unpause(vm, id);
  return Json::object();
}

Json Dispatcher::query_devices(const Json& args) {
  auto only = optional_string(args, "vm");
  Json out = Json::array();
  for (const auto& [name, domain] : vmm_->vms()) {
    if (only && *only != name) continue;
    for (const auto& e : vmm_->guest_view(name)) {
      out.push_back(Json{{"vm", name},
                         {"id", e.guest_id},
                         {"host", e.host_addr.to_string()},
                         {"status", e.status == GuestStatus::Paused ? "paused" : "attached"},
                         {"vendor-id", e.vendor_id},
                         {"device-id", e.device_id}});
    }
  }
  if (only && !vmm_->has_vm(*only)) throw Error(Errc::UnknownVm, "no VM named '" + *only + "'");
  return out;
}

Json unwrap_response(const Json& response) {
  if (response.contains("return")) return response.at("return");
  if (response.contains("error")) {
    const auto& err = response.at("error");
    auto cls = err.value("class", std::string("GenericError"));
    auto desc = err.value("desc", std::string());
    throw Error(errc_from_class(cls).value_or(Errc::MalformedCommand), desc);
  }
  throw Error(Errc::MalformedCommand, "response has neither 'return' nor 'error'");
}

Json InProcessChannel::execute(std::string_view command, const Json& arguments) {
  Json request{{"execute", std::string(command)}, {"arguments", arguments}};
  return unwrap_response(Json::parse(dispatcher_->handle_line(request.dump())));
}

}  // namespace svff::qmp
