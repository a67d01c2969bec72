#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace densetune {

using json = nlohmann::json;

/// Calls `fn(object, line_number)` for every non-blank line. Parse failures
/// raise DataError with the path and line number.
void read_jsonl(const std::filesystem::path& path,
                const std::function<void(const json&, std::size_t)>& fn);

/// Field accessors that raise DataError naming the field and line.
std::string require_string(const json& obj, std::string_view field, std::size_t line);
double require_number(const json& obj, std::string_view field, std::size_t line);

std::ofstream open_output(const std::filesystem::path& path,
                          std::ios::openmode mode = std::ios::out);
std::ifstream open_input(const std::filesystem::path& path,
                         std::ios::openmode mode = std::ios::in);

/// Compact single-line dump used by every JSON-Lines writer.
std::string dump_line(const json& obj);

void write_json_file(const std::filesystem::path& path, const json& obj);
json read_json_file(const std::filesystem::path& path);

/// Hex SHA-256 of a file's bytes; used by stage manifests.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_string(std::string_view data);

}  // namespace densetune
