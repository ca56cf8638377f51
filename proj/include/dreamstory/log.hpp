#pragma once

#include <string>

namespace dreamstory::log {

enum class Format { text, json };

void set_format(Format f);
Format format();

void info(const std::string& event, const std::string& detail = "");
void warn(const std::string& event, const std::string& detail = "");
void error(const std::string& event, const std::string& detail = "");

}  // namespace dreamstory::log
