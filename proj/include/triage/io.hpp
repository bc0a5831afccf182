#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace triage::io {

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

nlohmann::json load_json(const std::filesystem::path& path);
void save_json(const nlohmann::json& doc, const std::filesystem::path& path);

/// Backslash escapes for tab, newline, carriage return and backslash, so a
/// value fits in one field of a tab-separated line.
std::string escape_field(std::string_view raw);
std::string unescape_field(std::string_view escaped);

std::vector<std::string> split_tabs(std::string_view line);

/// Reads a text file one line at a time, tracking 1-based line numbers.
class LineReader {
 public:
  explicit LineReader(const std::filesystem::path& path);

  /// False at end of file. A trailing '\r' is stripped.
  bool next(std::string& line);
  std::size_t line_number() const { return line_number_; }
  /// Whether the line last returned ended with a newline.
  bool terminated() const { return terminated_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t line_number_ = 0;
  bool terminated_ = true;
};

}  // namespace triage::io
