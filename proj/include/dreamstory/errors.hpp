#pragma once

#include <stdexcept>
#include <string>

namespace dreamstory {

// Base for all library errors. `kind()` is stable and used by the CLI to
// map failures onto exit codes.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(kind + ": " + msg), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

#define DREAMSTORY_ERROR(Name)                                        \
    class Name : public Error {                                       \
    public:                                                           \
        explicit Name(const std::string& msg) : Error(#Name, msg) {}  \
    }

DREAMSTORY_ERROR(LLMTransportError);
DREAMSTORY_ERROR(SceneCountMismatch);
DREAMSTORY_ERROR(RewriteLeak);
DREAMSTORY_ERROR(ReplayMiss);
DREAMSTORY_ERROR(ShapeMismatch);
DREAMSTORY_ERROR(TimestepMisalignment);
DREAMSTORY_ERROR(InputError);
DREAMSTORY_ERROR(ConfigError);
DREAMSTORY_ERROR(PlanIntegrityError);
DREAMSTORY_ERROR(InvalidSpec);
DREAMSTORY_ERROR(SegmenterFailure);
DREAMSTORY_ERROR(KeyMismatch);
DREAMSTORY_ERROR(PoolExhausted);
DREAMSTORY_ERROR(IOError);

#undef DREAMSTORY_ERROR

// LLM response failed to parse or validate; carries the offending text
// and the pipeline stage that produced it.
class LLMFormatError : public Error {
public:
    LLMFormatError(const std::string& msg, std::string stage = "", std::string offending = "")
        : Error("LLMFormatError", stage.empty() ? msg : stage + ": " + msg),
          stage_(std::move(stage)),
          offending_(std::move(offending)) {}
    const std::string& stage() const { return stage_; }
    const std::string& offending_text() const { return offending_; }

private:
    std::string stage_;
    std::string offending_;
};

// A file did not match its declared schema; carries a location hint.
class SchemaError : public Error {
public:
    SchemaError(const std::string& msg, std::string location = "")
        : Error("SchemaError", location.empty() ? msg : msg + " (at " + location + ")"),
          location_(std::move(location)) {}
    const std::string& location() const { return location_; }

private:
    std::string location_;
};

}  // namespace dreamstory
