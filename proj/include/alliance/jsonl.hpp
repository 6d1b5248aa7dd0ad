#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace alliance {

std::string read_file(const std::filesystem::path& file);

/// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& file, std::string_view contents);

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& file);
void write_jsonl(const std::filesystem::path& file, const std::vector<nlohmann::json>& rows);
void append_jsonl(const std::filesystem::path& file, const nlohmann::json& row);

/// Splits on '\n'; a trailing newline does not produce an empty last line.
std::vector<std::string_view> split_lines(std::string_view text);

}  // namespace alliance
