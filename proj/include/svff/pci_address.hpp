#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace svff {

// Segment/bus/device/function triple, rendered as DDDD:BB:SS.F.
struct PciAddress {
  std::uint16_t domain = 0;
  std::uint8_t bus = 0;
  std::uint8_t device = 0;    // 0..31
  std::uint8_t function = 0;  // 0..7

  // Throws Error(InvalidArgument) when device/function are out of range.
  static PciAddress make(std::uint16_t domain, std::uint8_t bus,
                         std::uint8_t device, std::uint8_t function);

  static std::optional<PciAddress> try_parse(std::string_view text);
  // Throws Error(InvalidArgument) on malformed text.
  static PciAddress parse(std::string_view text);

  // Routing id within the segment: bus << 8 | device << 3 | function.
  std::uint32_t routing_id() const noexcept {
    return (std::uint32_t{bus} << 8) | (std::uint32_t{device} << 3) | function;
  }
  static PciAddress from_routing_id(std::uint16_t domain, std::uint32_t rid);

  std::string to_string() const;

  friend auto operator<=>(const PciAddress&, const PciAddress&) = default;
};

}  // namespace svff

template <>
struct std::hash<svff::PciAddress> {
  std::size_t operator()(const svff::PciAddress& a) const noexcept {
    return (std::size_t{a.domain} << 16) | a.routing_id();
  }
};
