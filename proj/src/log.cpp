#include "dreamstory/log.hpp"

#include <iostream>
#include <mutex>

#include <json.hpp>

namespace dreamstory::log {

namespace {
Format g_format = Format::text;
std::mutex g_mutex;

void emit(const char* level, const std::string& event, const std::string& detail) {
    std::lock_guard<std::mutex> lock(g_mutex);
    if (g_format == Format::json) {
        nlohmann::json line{{"level", level}, {"event", event}};
        if (!detail.empty()) line["detail"] = detail;
        std::cerr << line.dump() << "\n";
    } else {
        std::cerr << "[" << level << "] " << event;
        if (!detail.empty()) std::cerr << ": " << detail;
        std::cerr << "\n";
    }
}
}  // namespace

void set_format(Format f) { g_format = f; }
Format format() { return g_format; }

void info(const std::string& event, const std::string& detail) { emit("info", event, detail); }
void warn(const std::string& event, const std::string& detail) { emit("warn", event, detail); }
void error(const std::string& event, const std::string& detail) { emit("error", event, detail); }

}  // namespace dreamstory::log
