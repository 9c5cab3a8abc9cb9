#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace svff {

// Every failure the simulator can report. The QMP layer maps each code to
// exactly one wire error class (see qmp.hpp).
enum class Errc {
  // device plane
  InvalidProfile,
  NonZeroTransition,
  ExceedsCapability,
  NotAPf,
  NotBound,
  OutOfRange,
  NotPresent,
  ReadOnlyField,
  Detached,
  InUse,
  // driver manager
  IdNotRegistered,
  AlreadyBound,
  IdMismatch,
  DriverMismatch,
  GuestOnlyDriver,
  // vmm
  DuplicateName,
  UnknownVm,
  VmNotLive,
  NotBoundToVfio,
  AlreadyAttached,
  DuplicateDeviceId,
  UnknownDevice,
  PausedDevice,
  AlreadyPaused,
  NotPaused,
  NotPausable,
  HostDeviceGone,
  // control protocol
  MalformedCommand,
  CommandNotFound,
  InvalidParameter,
  BindFailure,
  // orchestrator
  PlanInvalid,
  RecordExists,
  RecordMissing,
  PausedVfVanished,
  StorageError,
  // bench
  DegenerateFit,
  UnknownFormat,
  InvalidArgument,
};

inline constexpr Errc kAllErrc[] = {
    Errc::InvalidProfile,   Errc::NonZeroTransition, Errc::ExceedsCapability,
    Errc::NotAPf,           Errc::NotBound,          Errc::OutOfRange,
    Errc::NotPresent,       Errc::ReadOnlyField,     Errc::Detached,
    Errc::InUse,            Errc::IdNotRegistered,   Errc::AlreadyBound,
    Errc::IdMismatch,       Errc::DriverMismatch,    Errc::GuestOnlyDriver,
    Errc::DuplicateName,    Errc::UnknownVm,         Errc::VmNotLive,
    Errc::NotBoundToVfio,   Errc::AlreadyAttached,   Errc::DuplicateDeviceId,
    Errc::UnknownDevice,    Errc::PausedDevice,      Errc::AlreadyPaused,
    Errc::NotPaused,        Errc::NotPausable,       Errc::HostDeviceGone,
    Errc::MalformedCommand, Errc::CommandNotFound,   Errc::InvalidParameter,
    Errc::BindFailure,
    Errc::PlanInvalid,      Errc::RecordExists,      Errc::RecordMissing,
    Errc::PausedVfVanished, Errc::StorageError,      Errc::DegenerateFit,
    Errc::UnknownFormat,    Errc::InvalidArgument,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(errc_name(code)) + ": " + detail),
        code_(code),
        detail_(detail) {}

  Errc code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace svff
