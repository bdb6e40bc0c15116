#include "sfda/manifest.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "sfda/error.hpp"

namespace sfda {

uint64_t fnv1a64_bytes(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open for checksum: " + path);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

std::string checksum_hex(uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string iso8601_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_manifest(const RunManifest& manifest, const std::string& path) {
    nlohmann::json j;
    j["command"] = manifest.command;
    j["tool_version"] = manifest.tool_version;
    j["timestamp"] = manifest.timestamp;
    j["seed"] = manifest.seed;
    j["config"] = manifest.config;
    j["inputs"] = nlohmann::json::array();
    for (const auto& [p, sum] : manifest.inputs)
        j["inputs"].push_back({{"path", p}, {"fnv1a64", sum}});
    j["outputs"] = manifest.outputs;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

RunManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read manifest: " + path);
    nlohmann::json j;
    in >> j;
    RunManifest m;
    m.command = j.value("command", "");
    m.tool_version = j.value("tool_version", "");
    m.timestamp = j.value("timestamp", "");
    m.seed = j.value("seed", 0ull);
    m.config = j.value("config", nlohmann::json::object());
    for (const auto& e : j.value("inputs", nlohmann::json::array()))
        m.inputs.emplace_back(e.value("path", ""), e.value("fnv1a64", ""));
    for (const auto& e : j.value("outputs", nlohmann::json::array()))
        m.outputs.push_back(e.get<std::string>());
    return m;
}

} // namespace sfda
