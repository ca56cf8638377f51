#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

namespace dreamstory {

using json = nlohmann::json;

// Reads and parses a JSON file; throws IOError / SchemaError.
json read_json_file(const std::filesystem::path& path);

// Serializes and writes atomically (write temp file, then rename).
void write_json_atomic(const std::filesystem::path& path, const json& value, int indent = 2);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

// Checks j["schema"] == expected; throws SchemaError otherwise.
void require_schema(const json& j, const std::string& expected, const std::string& location);

// Number of whitespace-separated words.
int word_count(const std::string& text);

// Case-sensitive whole-word occurrence test; word boundaries are
// non-alphanumeric characters.
bool contains_word(const std::string& text, const std::string& word);

// Jaccard similarity of lowercase word sets (punctuation stripped).
double jaccard_words(const std::string& a, const std::string& b);

}  // namespace dreamstory
