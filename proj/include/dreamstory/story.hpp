#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dreamstory/subject.hpp"

namespace dreamstory {

struct SceneSpec {
    int index = 0;
    std::string raw_prompt;        // may contain subject names
    std::string rewritten_prompt;  // names replaced by short descriptors
    std::vector<std::string> present_subjects;
    int word_count = 0;  // of raw_prompt

    nlohmann::json to_json() const;
    static SceneSpec from_json(const nlohmann::json& j);
};

struct StoryPlan {
    std::string story_text;
    std::vector<SubjectSpec> subjects;
    std::vector<SceneSpec> scenes;
    std::optional<int> n_scenes_requested;
    std::string director_model_id;
    // (stage name, raw LLM response) for audit; "flag:" stages record
    // surviving violations.
    std::vector<std::pair<std::string, std::string>> creation_trace;

    nlohmann::json to_json() const;  // schema dreamstory.plan.v1
    static StoryPlan from_json(const nlohmann::json& j);

    const SubjectSpec* find_subject(const std::string& name) const;
};

// Checks every plan invariant; throws InvalidSpec or PlanIntegrityError.
void validate_story_plan(const StoryPlan& plan);

// Stable content hash of the serialized plan.
uint64_t plan_hash(const StoryPlan& plan);

void write_plan(const StoryPlan& plan, const std::string& path);
StoryPlan read_plan(const std::string& path);

}  // namespace dreamstory
