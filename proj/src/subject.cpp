#include "dreamstory/subject.hpp"

#include <cctype>

#include "dreamstory/errors.hpp"
#include "dreamstory/json_util.hpp"

namespace dreamstory {

nlohmann::json SubjectSpec::to_json() const {
    return {{"name", name},
            {"portrait_prompt", portrait_prompt},
            {"short_descriptor", short_descriptor},
            {"type_token", type_token},
            {"style_tags", style_tags}};
}

SubjectSpec SubjectSpec::from_json(const nlohmann::json& j) {
    SubjectSpec s;
    try {
        s.name = j.at("name").get<std::string>();
        s.portrait_prompt = j.at("portrait_prompt").get<std::string>();
        s.short_descriptor = j.at("short_descriptor").get<std::string>();
        s.type_token = j.at("type_token").get<std::string>();
        if (j.contains("style_tags")) s.style_tags = j["style_tags"].get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("subject record: ") + e.what(), "subject");
    }
    return s;
}

bool SubjectSpec::operator==(const SubjectSpec& o) const {
    return name == o.name && portrait_prompt == o.portrait_prompt &&
           short_descriptor == o.short_descriptor && type_token == o.type_token &&
           style_tags == o.style_tags;
}

void validate_subject(const SubjectSpec& s) {
    if (s.name.empty()) throw InvalidSpec("subject name is empty");
    if (s.portrait_prompt.empty())
        throw InvalidSpec("subject '" + s.name + "' has empty portrait prompt");
    if (s.type_token.empty()) throw InvalidSpec("subject '" + s.name + "' has empty type token");
    for (char c : s.type_token) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == ' ' || c == '-'))
            throw InvalidSpec("type token '" + s.type_token + "' contains punctuation");
    }
    if (word_count(s.type_token) > 3)
        throw InvalidSpec("type token '" + s.type_token + "' is not a single noun phrase");
    if (!s.name.empty() && s.short_descriptor.find(s.name) != std::string::npos)
        throw InvalidSpec("short descriptor of '" + s.name + "' repeats the name");
}

}  // namespace dreamstory
