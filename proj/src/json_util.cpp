#include "dreamstory/json_util.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "dreamstory/errors.hpp"

namespace dreamstory {

namespace fs = std::filesystem;

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IOError("cannot open " + path.string());
    json j = json::parse(in, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw SchemaError("invalid JSON", path.string());
    return j;
}

void write_json_atomic(const fs::path& path, const json& value, int indent) {
    write_text_file(path, value.dump(indent) + "\n");
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IOError("cannot write " + tmp.string());
        out << content;
        if (!out) throw IOError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

void require_schema(const json& j, const std::string& expected, const std::string& location) {
    if (!j.is_object() || !j.contains("schema") || !j["schema"].is_string())
        throw SchemaError("missing schema field, expected \"" + expected + "\"", location);
    std::string got = j["schema"].get<std::string>();
    if (got != expected)
        throw SchemaError("schema is \"" + got + "\", expected \"" + expected + "\"", location);
}

int word_count(const std::string& text) {
    std::istringstream ss(text);
    std::string w;
    int n = 0;
    while (ss >> w) ++n;
    return n;
}

namespace {
bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::set<std::string> word_set(const std::string& text) {
    std::set<std::string> out;
    std::string cur;
    for (char c : text) {
        if (is_word_char(c)) {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!cur.empty()) {
            out.insert(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.insert(cur);
    return out;
}
}  // namespace

bool contains_word(const std::string& text, const std::string& word) {
    if (word.empty()) return false;
    size_t pos = 0;
    while ((pos = text.find(word, pos)) != std::string::npos) {
        bool left_ok = pos == 0 || !is_word_char(text[pos - 1]);
        size_t end = pos + word.size();
        bool right_ok = end >= text.size() || !is_word_char(text[end]);
        if (left_ok && right_ok) return true;
        pos += 1;
    }
    return false;
}

double jaccard_words(const std::string& a, const std::string& b) {
    auto sa = word_set(a);
    auto sb = word_set(b);
    if (sa.empty() && sb.empty()) return 1.0;
    size_t inter = 0;
    for (const auto& w : sa)
        if (sb.count(w)) ++inter;
    size_t uni = sa.size() + sb.size() - inter;
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace dreamstory
