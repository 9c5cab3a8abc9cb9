#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace svff {

inline constexpr std::size_t kConfigSpaceSize = 4096;

// Type-0 header layout plus the two capabilities every simulated function
// carries (MSI, then a vendor-specific block holding the VF flag).
namespace cfg {
inline constexpr std::size_t kVendorId = 0x00;
inline constexpr std::size_t kDeviceId = 0x02;
inline constexpr std::size_t kCommand = 0x04;
inline constexpr std::size_t kStatus = 0x06;
inline constexpr std::size_t kRevision = 0x08;
inline constexpr std::size_t kClassCode = 0x09;  // 3 bytes: prog-if, sub, base
inline constexpr std::size_t kHeaderType = 0x0E;
inline constexpr std::size_t kBar0 = 0x10;
inline constexpr std::size_t kBarCount = 6;
inline constexpr std::size_t kSubsystemVendorId = 0x2C;
inline constexpr std::size_t kSubsystemId = 0x2E;
inline constexpr std::size_t kCapPointer = 0x34;
inline constexpr std::size_t kInterruptLine = 0x3C;
inline constexpr std::size_t kInterruptPin = 0x3D;

inline constexpr std::size_t kMsiCap = 0x50;
inline constexpr std::size_t kMsiControl = kMsiCap + 2;
inline constexpr std::size_t kMsiAddressLo = kMsiCap + 4;
inline constexpr std::size_t kMsiAddressHi = kMsiCap + 8;
inline constexpr std::size_t kMsiData = kMsiCap + 12;
inline constexpr std::uint16_t kMsiEnable = 0x0001;

inline constexpr std::size_t kVendorCap = 0x60;
inline constexpr std::size_t kVendorCapFlags = kVendorCap + 3;
inline constexpr std::uint8_t kVfFlag = 0x01;

inline constexpr std::uint16_t kStatusCapList = 0x0010;
inline constexpr std::uint8_t kClassMemoryController = 0x05;
inline constexpr std::uint8_t kSubclassOtherMemory = 0x80;

constexpr std::size_t bar_offset(std::size_t index) { return kBar0 + 4 * index; }
}  // namespace cfg

// Flat little-endian 4 KiB configuration space. Bounds are enforced here;
// register semantics (read-only ids, BAR sizing) live in the bus.
class ConfigSpace {
 public:
  ConfigSpace() = default;

  // Throws Error(OutOfRange) when offset + len exceeds 4096.
  std::vector<std::uint8_t> read(std::size_t offset, std::size_t len) const;
  void write(std::size_t offset, std::span<const std::uint8_t> data);

  std::uint8_t read8(std::size_t offset) const;
  std::uint16_t read16(std::size_t offset) const;
  std::uint32_t read32(std::size_t offset) const;
  void write8(std::size_t offset, std::uint8_t value);
  void write16(std::size_t offset, std::uint16_t value);
  void write32(std::size_t offset, std::uint32_t value);

  std::span<const std::uint8_t, kConfigSpaceSize> bytes() const { return bytes_; }

  friend bool operator==(const ConfigSpace&, const ConfigSpace&) = default;

 private:
  static void check_range(std::size_t offset, std::size_t len);

  std::array<std::uint8_t, kConfigSpaceSize> bytes_{};
};

}  // namespace svff
