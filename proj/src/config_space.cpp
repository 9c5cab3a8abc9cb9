#include "svff/config_space.hpp"

#include <algorithm>
#include <string>

#include "svff/error.hpp"

namespace svff {

void ConfigSpace::check_range(std::size_t offset, std::size_t len) {
  if (offset > kConfigSpaceSize || len > kConfigSpaceSize - offset)
    throw Error(Errc::OutOfRange, "config access [" + std::to_string(offset) +
                                      ", +" + std::to_string(len) +
                                      ") beyond 4096 bytes");
}

std::vector<std::uint8_t> ConfigSpace::read(std::size_t offset,
                                            std::size_t len) const {
  check_range(offset, len);
  return {bytes_.begin() + static_cast<std::ptrdiff_t>(offset),
          bytes_.begin() + static_cast<std::ptrdiff_t>(offset + len)};
}

void ConfigSpace::write(std::size_t offset, std::span<const std::uint8_t> data) {
  check_range(offset, data.size());
  std::copy(data.begin(), data.end(),
            bytes_.begin() + static_cast<std::ptrdiff_t>(offset));
}

std::uint8_t ConfigSpace::read8(std::size_t offset) const {
  check_range(offset, 1);
  return bytes_[offset];
}

std::uint16_t ConfigSpace::read16(std::size_t offset) const {
  check_range(offset, 2);
  return static_cast<std::uint16_t>(bytes_[offset] | (bytes_[offset + 1] << 8));
}

std::uint32_t ConfigSpace::read32(std::size_t offset) const {
  check_range(offset, 4);
  return std::uint32_t{bytes_[offset]} | (std::uint32_t{bytes_[offset + 1]} << 8) |
         (std::uint32_t{bytes_[offset + 2]} << 16) |
         (std::uint32_t{bytes_[offset + 3]} << 24);
}

void ConfigSpace::write8(std::size_t offset, std::uint8_t value) {
  check_range(offset, 1);
  bytes_[offset] = value;
}

void ConfigSpace::write16(std::size_t offset, std::uint16_t value) {
  check_range(offset, 2);
  bytes_[offset] = static_cast<std::uint8_t>(value);
  bytes_[offset + 1] = static_cast<std::uint8_t>(value >> 8);
}

void ConfigSpace::write32(std::size_t offset, std::uint32_t value) {
  check_range(offset, 4);
  for (std::size_t i = 0; i < 4; ++i)
    bytes_[offset + i] = static_cast<std::uint8_t>(value >> (8 * i));
}

}  // namespace svff
