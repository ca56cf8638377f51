#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dreamstory/backends.hpp"
#include "dreamstory/story.hpp"
#include "dreamstory/templates.hpp"

namespace dreamstory {

struct DirectorConfig {
    int max_subjects = 8;
    std::optional<int> n_scenes;  // unset: the model chooses, capped
    int scene_cap = 12;
    int word_limit = 40;
    int retries = 3;  // re-asks after the first attempt
    int descriptor_word_cap = 6;
    double jaccard_floor = 0.3;  // lexical overlap a rewrite must keep
    bool annotate_uses_rewritten = false;
};

// Finds the first JSON island in an LLM response that validates against
// the named schema, skipping code fences and surrounding prose.
// Schemas: subject_names.v1, subject_attributes.v1, scenes.v1,
// presence.v1, rewrite.v1, pool.v1, case.v1.
nlohmann::json parse_structured_response(const std::string& text, const std::string& schema_id);

// Outcome of a content check on a parsed response. Severity picks the
// error thrown when retries run out; soft means the last value is accepted
// with a flag recorded in the trace instead of failing.
struct Check {
    bool ok = false;
    std::string reason;
    enum class Severity { schema, count, leak, soft } severity = Severity::schema;
};

struct AskSpec {
    std::string stage;
    std::string rendered;
    std::string schema_id;
    int retries = 3;
};

// Shared retry loop: ask, parse, check, re-ask quoting the invalid answer.
nlohmann::json ask_llm(LLMClient& llm, const AskSpec& spec,
                       const std::function<Check(const nlohmann::json&)>& checker,
                       std::vector<std::pair<std::string, std::string>>* trace);

// Drives the LLM through the staged construction of a StoryPlan. Every
// exchange is appended to the trace; invalid answers are re-asked with the
// offending text quoted back, up to config.retries times per stage.
class StoryDirector {
  public:
    StoryDirector(LLMClient& llm, TemplateRegistry registry, DirectorConfig config = {});

    std::vector<SubjectSpec> extract_subjects(const std::string& story_text, int max_subjects,
                                              bool allow_empty = false);
    std::vector<SceneSpec> generate_scenes(const std::string& story_text,
                                           const std::vector<SubjectSpec>& subjects,
                                           std::optional<int> n_scenes);
    std::vector<std::string> annotate_presence(const SceneSpec& scene,
                                               const std::vector<SubjectSpec>& subjects);
    std::string rewrite_scene(const SceneSpec& scene, const std::vector<SubjectSpec>& subjects);
    StoryPlan build_story_plan(const std::string& story_text);

    const std::vector<std::pair<std::string, std::string>>& trace() const { return trace_; }
    void clear_trace() { trace_.clear(); }
    const DirectorConfig& config() const { return config_; }

  private:
    nlohmann::json ask(const std::string& stage, const std::string& rendered,
                       const std::string& schema_id);

    LLMClient& llm_;
    TemplateRegistry registry_;
    DirectorConfig config_;
    std::vector<std::pair<std::string, std::string>> trace_;
};

}  // namespace dreamstory
