#pragma once

#include "graphdps/common.hpp"

#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>

namespace graphdps {

// "FIELD n" followed by n values, 17 significant digits.
void write_field(std::ostream& out, const NodeField& field);
NodeField read_field(std::istream& in);
void save_field(const std::filesystem::path& path, const NodeField& field, std::string_view header_comment = {});
NodeField load_field(const std::filesystem::path& path);

/// Ordered key=value document.
using KeyValues = std::map<std::string, std::string, std::less<>>;

/// Parses `key = value` lines; `#` starts a comment. Malformed or duplicate keys throw
/// Error("config", "<source>:<line>: ...").
KeyValues parse_key_values(std::istream& in, std::string_view source = "<input>");
KeyValues load_key_values(const std::filesystem::path& path);
void write_key_values(std::ostream& out, const KeyValues& values);
void save_key_values(const std::filesystem::path& path, const KeyValues& values, std::string_view header_comment = {});

/// Shortest text that parses back to the same double.
std::string format_double(double value);

/// Opens `path` for writing, creating parent directories. Throws Error("io", ...) on failure.
std::ofstream open_output(const std::filesystem::path& path);

}  // namespace graphdps
