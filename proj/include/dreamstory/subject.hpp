#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace dreamstory {

// One character of a story: identity for prompts, detection, and metrics.
struct SubjectSpec {
    std::string name;              // as used in the story, unique within a plan
    std::string portrait_prompt;   // detailed visual description for the portrait
    std::string short_descriptor;  // concise visual phrase replacing the name
    std::string type_token;        // detector category noun, e.g. "man", "gorilla"
    std::vector<std::string> style_tags;

    nlohmann::json to_json() const;
    static SubjectSpec from_json(const nlohmann::json& j);
    bool operator==(const SubjectSpec& other) const;
};

// Throws InvalidSpec when a field invariant is broken. type_token must be
// a single noun phrase without punctuation; short_descriptor must not
// contain the name.
void validate_subject(const SubjectSpec& subject);

}  // namespace dreamstory
