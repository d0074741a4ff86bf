#pragma once

#include <string>

#include "msinfluence/trainer.hpp"

namespace msi {

// Checkpoint container: magic "MSIF", format version u32, config hash,
// training metadata, segment table (name, offset, length), little-endian
// 64-bit float payload, trailing CRC-32 over everything before it.
// Round-trips are bit-exact.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// CRC-32 (IEEE 802.3 polynomial, reflected).
std::uint32_t crc32(const unsigned char* data, std::size_t len);

}  // namespace msi
