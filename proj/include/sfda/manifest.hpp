#ifndef SFDA_MANIFEST_HPP
#define SFDA_MANIFEST_HPP

#include <json.hpp>

#include <string>
#include <utility>
#include <vector>

namespace sfda {

inline constexpr const char* kToolVersion = "0.1.0";

// Every artifact-producing command writes one of these next to its outputs:
// re-running with the recorded config and seed reproduces the outputs.
struct RunManifest {
    std::string command;
    std::string tool_version = kToolVersion;
    std::string timestamp;
    uint64_t seed = 0;
    nlohmann::json config;
    std::vector<std::pair<std::string, std::string>> inputs; // path, fnv1a64 hex
    std::vector<std::string> outputs;
};

uint64_t fnv1a64_bytes(const void* data, size_t n);
uint64_t fnv1a64_file(const std::string& path);
std::string checksum_hex(uint64_t h);
std::string iso8601_now();

void write_manifest(const RunManifest& manifest, const std::string& path);
RunManifest read_manifest(const std::string& path);

} // namespace sfda

#endif
