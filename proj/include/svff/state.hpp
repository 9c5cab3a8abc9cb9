#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "svff/host.hpp"
#include "svff/records.hpp"

namespace svff {

// Full host state as JSON: profile, nodes (config and region memory as hex),
// the vfio-pci id table, VMs with their guest devices and snapshots.
nlohmann::json host_to_json(const Host& host);
// Throws Error(StorageError) on a malformed document.
Host host_from_json(const nlohmann::json& j);

// Atomic write through a sibling temporary file.
void save_host(const Host& host, const std::filesystem::path& file);
Host load_host(const std::filesystem::path& file);

// FNV-1a over every field that participates in Host equality plus the
// records (created_at excluded). Equal states hash equal.
std::uint64_t state_hash(const Host& host, const RecordStore& records);

// Cross-layer consistency rules. Returns one message per violation.
std::vector<std::string> check_invariants(const Host& host, const RecordStore& records);

}  // namespace svff
