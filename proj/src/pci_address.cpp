#include "svff/pci_address.hpp"

#include <cctype>
#include <cstdio>

#include "svff/error.hpp"

namespace svff {

namespace {

std::optional<unsigned> parse_hex(std::string_view s, std::size_t digits) {
  if (s.size() != digits) return std::nullopt;
  unsigned value = 0;
  for (char c : s) {
    if (!std::isxdigit(static_cast<unsigned char>(c))) return std::nullopt;
    value = value * 16 +
            static_cast<unsigned>(std::isdigit(static_cast<unsigned char>(c))
                                      ? c - '0'
                                      : std::tolower(c) - 'a' + 10);
  }
  return value;
}

}  // namespace

PciAddress PciAddress::make(std::uint16_t domain, std::uint8_t bus,
                            std::uint8_t device, std::uint8_t function) {
  if (device > 31 || function > 7)
    throw Error(Errc::InvalidArgument, "device must be <= 31 and function <= 7");
  return PciAddress{domain, bus, device, function};
}

std::optional<PciAddress> PciAddress::try_parse(std::string_view text) {
  // DDDD:BB:SS.F
  if (text.size() != 12 || text[4] != ':' || text[7] != ':' || text[10] != '.')
    return std::nullopt;
  auto domain = parse_hex(text.substr(0, 4), 4);
  auto bus = parse_hex(text.substr(5, 2), 2);
  auto device = parse_hex(text.substr(8, 2), 2);
  auto function = parse_hex(text.substr(11, 1), 1);
  if (!domain || !bus || !device || !function) return std::nullopt;
  if (*device > 31 || *function > 7) return std::nullopt;
  return PciAddress{static_cast<std::uint16_t>(*domain),
                    static_cast<std::uint8_t>(*bus),
                    static_cast<std::uint8_t>(*device),
                    static_cast<std::uint8_t>(*function)};
}

PciAddress PciAddress::parse(std::string_view text) {
  auto addr = try_parse(text);
  if (!addr)
    throw Error(Errc::InvalidArgument,
                "malformed PCI address '" + std::string(text) + "'");
  return *addr;
}

PciAddress PciAddress::from_routing_id(std::uint16_t domain, std::uint32_t rid) {
  if (rid > 0xFFFF) throw Error(Errc::OutOfRange, "routing id beyond bus 255");
  return PciAddress{domain, static_cast<std::uint8_t>(rid >> 8),
                    static_cast<std::uint8_t>((rid >> 3) & 0x1F),
                    static_cast<std::uint8_t>(rid & 0x7)};
}

std::string PciAddress::to_string() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04x:%02x:%02x.%x", domain, bus, device,
                function);
  return buf;
}

}  // namespace svff
