#pragma once

// Run manifests: everything needed to repeat a command and check that it
// reproduced its outputs bitwise.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace entrain::cli {

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

struct Manifest {
    std::string command;
    std::string tool_version;
    std::string working_directory;
    nlohmann::json config;             // resolved options of the command
    std::vector<std::uint64_t> seeds;  // every seed the command consumed
    std::map<std::string, std::string> inputs;   // path -> sha256
    std::map<std::string, std::string> outputs;  // path -> sha256
};

nlohmann::json to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);

void write_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

}  // namespace entrain::cli
