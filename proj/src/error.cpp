#include "svff/error.hpp"

namespace svff {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::InvalidProfile: return "InvalidProfile";
    case Errc::NonZeroTransition: return "NonZeroTransition";
    case Errc::ExceedsCapability: return "ExceedsCapability";
    case Errc::NotAPf: return "NotAPf";
    case Errc::NotBound: return "NotBound";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::NotPresent: return "NotPresent";
    case Errc::ReadOnlyField: return "ReadOnlyField";
    case Errc::Detached: return "Detached";
    case Errc::InUse: return "InUse";
    case Errc::IdNotRegistered: return "IdNotRegistered";
    case Errc::AlreadyBound: return "AlreadyBound";
    case Errc::IdMismatch: return "IdMismatch";
    case Errc::DriverMismatch: return "DriverMismatch";
    case Errc::GuestOnlyDriver: return "GuestOnlyDriver";
    case Errc::DuplicateName: return "DuplicateName";
    case Errc::UnknownVm: return "UnknownVm";
    case Errc::VmNotLive: return "VmNotLive";
    case Errc::NotBoundToVfio: return "NotBoundToVfio";
    case Errc::AlreadyAttached: return "AlreadyAttached";
    case Errc::DuplicateDeviceId: return "DuplicateDeviceId";
    case Errc::UnknownDevice: return "UnknownDevice";
    case Errc::PausedDevice: return "PausedDevice";
    case Errc::AlreadyPaused: return "AlreadyPaused";
    case Errc::NotPaused: return "NotPaused";
    case Errc::NotPausable: return "NotPausable";
    case Errc::HostDeviceGone: return "HostDeviceGone";
    case Errc::MalformedCommand: return "MalformedCommand";
    case Errc::CommandNotFound: return "CommandNotFound";
    case Errc::InvalidParameter: return "InvalidParameter";
    case Errc::BindFailure: return "BindFailure";
    case Errc::PlanInvalid: return "PlanInvalid";
    case Errc::RecordExists: return "RecordExists";
    case Errc::RecordMissing: return "RecordMissing";
    case Errc::PausedVfVanished: return "PausedVfVanished";
    case Errc::StorageError: return "StorageError";
    case Errc::DegenerateFit: return "DegenerateFit";
    case Errc::UnknownFormat: return "UnknownFormat";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace svff
