#include "dreamstory/story.hpp"

#include <set>

#include "dreamstory/errors.hpp"
#include "dreamstory/hash.hpp"
#include "dreamstory/json_util.hpp"

namespace dreamstory {

nlohmann::json SceneSpec::to_json() const {
    return {{"index", index},
            {"raw_prompt", raw_prompt},
            {"rewritten_prompt", rewritten_prompt},
            {"present_subjects", present_subjects},
            {"word_count", word_count}};
}

SceneSpec SceneSpec::from_json(const nlohmann::json& j) {
    SceneSpec s;
    try {
        s.index = j.at("index").get<int>();
        s.raw_prompt = j.at("raw_prompt").get<std::string>();
        s.rewritten_prompt = j.at("rewritten_prompt").get<std::string>();
        s.present_subjects = j.at("present_subjects").get<std::vector<std::string>>();
        s.word_count = j.value("word_count", dreamstory::word_count(s.raw_prompt));
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("scene record: ") + e.what(), "scenes");
    }
    return s;
}

nlohmann::json StoryPlan::to_json() const {
    nlohmann::json subj = nlohmann::json::array();
    for (const auto& s : subjects) subj.push_back(s.to_json());
    nlohmann::json scn = nlohmann::json::array();
    for (const auto& s : scenes) scn.push_back(s.to_json());
    nlohmann::json trace = nlohmann::json::array();
    for (const auto& [stage, response] : creation_trace)
        trace.push_back({{"stage", stage}, {"response", response}});
    nlohmann::json j{{"schema", "dreamstory.plan.v1"},
                     {"story_text", story_text},
                     {"subjects", subj},
                     {"scenes", scn},
                     {"director_model_id", director_model_id},
                     {"creation_trace", trace}};
    if (n_scenes_requested) j["n_scenes_requested"] = *n_scenes_requested;
    return j;
}

StoryPlan StoryPlan::from_json(const nlohmann::json& j) {
    require_schema(j, "dreamstory.plan.v1", "plan");
    StoryPlan p;
    try {
        p.story_text = j.at("story_text").get<std::string>();
        for (const auto& e : j.at("subjects")) p.subjects.push_back(SubjectSpec::from_json(e));
        for (const auto& e : j.at("scenes")) p.scenes.push_back(SceneSpec::from_json(e));
        p.director_model_id = j.value("director_model_id", std::string{});
        if (j.contains("n_scenes_requested")) p.n_scenes_requested = j["n_scenes_requested"].get<int>();
        for (const auto& e : j.value("creation_trace", nlohmann::json::array()))
            p.creation_trace.emplace_back(e.at("stage").get<std::string>(),
                                          e.at("response").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("plan: ") + e.what(), "plan");
    }
    return p;
}

const SubjectSpec* StoryPlan::find_subject(const std::string& name) const {
    for (const auto& s : subjects)
        if (s.name == name) return &s;
    return nullptr;
}

void validate_story_plan(const StoryPlan& plan) {
    std::set<std::string> names;
    for (const auto& s : plan.subjects) {
        validate_subject(s);
        if (!names.insert(s.name).second)
            throw InvalidSpec("duplicate subject name '" + s.name + "'");
    }
    for (size_t i = 0; i < plan.scenes.size(); ++i) {
        const SceneSpec& sc = plan.scenes[i];
        if (sc.index != static_cast<int>(i))
            throw PlanIntegrityError("scene indices are not contiguous from 0");
        if (sc.raw_prompt.empty())
            throw PlanIntegrityError("scene " + std::to_string(i) + " has an empty prompt");
        std::set<std::string> seen;
        for (const auto& name : sc.present_subjects) {
            if (!names.count(name))
                throw PlanIntegrityError("scene " + std::to_string(i) +
                                         " references unknown subject '" + name + "'");
            if (!seen.insert(name).second)
                throw PlanIntegrityError("scene " + std::to_string(i) +
                                         " lists subject '" + name + "' twice");
            if (contains_word(sc.rewritten_prompt, name))
                throw PlanIntegrityError("scene " + std::to_string(i) + " rewrite leaks name '" +
                                         name + "'");
        }
        if (!sc.present_subjects.empty() && sc.rewritten_prompt.empty())
            throw PlanIntegrityError("scene " + std::to_string(i) + " lacks a rewritten prompt");
    }
}

uint64_t plan_hash(const StoryPlan& plan) { return fnv1a64(plan.to_json().dump()); }

void write_plan(const StoryPlan& plan, const std::string& path) {
    write_json_atomic(path, plan.to_json());
}

StoryPlan read_plan(const std::string& path) { return StoryPlan::from_json(read_json_file(path)); }

}  // namespace dreamstory
