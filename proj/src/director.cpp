#include "dreamstory/director.hpp"

#include <algorithm>
#include <set>

#include "dreamstory/errors.hpp"
#include "dreamstory/json_util.hpp"

namespace dreamstory {

namespace {

// Balanced {...} / [...] substrings in order of appearance, string-aware.
std::vector<std::string> json_islands(const std::string& text) {
    std::vector<std::string> out;
    for (size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '{' && text[i] != '[') continue;
        int depth = 0;
        bool in_str = false, esc = false;
        for (size_t j = i; j < text.size(); ++j) {
            const char c = text[j];
            if (in_str) {
                if (esc)
                    esc = false;
                else if (c == '\\')
                    esc = true;
                else if (c == '"')
                    in_str = false;
                continue;
            }
            if (c == '"') {
                in_str = true;
            } else if (c == '{' || c == '[') {
                ++depth;
            } else if (c == '}' || c == ']') {
                if (--depth == 0) {
                    out.push_back(text.substr(i, j - i + 1));
                    break;
                }
            }
        }
    }
    return out;
}

bool nonempty_string(const nlohmann::json& j, const char* key) {
    return j.contains(key) && j[key].is_string() && !j[key].get<std::string>().empty();
}

bool valid_for_schema(const nlohmann::json& j, const std::string& id) {
    if (id == "subject_names.v1") {
        if (!j.is_array()) return false;
        return std::all_of(j.begin(), j.end(), [](const nlohmann::json& e) {
            return e.is_string() && !e.get<std::string>().empty();
        });
    }
    if (id == "subject_attributes.v1") {
        return j.is_object() && nonempty_string(j, "portrait_prompt") &&
               nonempty_string(j, "short_descriptor") && nonempty_string(j, "type_token");
    }
    if (id == "scenes.v1") {
        if (!j.is_array() || j.empty()) return false;
        return std::all_of(j.begin(), j.end(), [](const nlohmann::json& e) {
            if (e.is_string()) return !e.get<std::string>().empty();
            return e.is_object() && nonempty_string(e, "prompt");
        });
    }
    if (id == "presence.v1") return j.is_object() && j.contains("present") && j["present"].is_boolean();
    if (id == "rewrite.v1") return j.is_object() && nonempty_string(j, "rewritten");
    if (id == "pool.v1") {
        if (!j.is_array()) return false;
        return std::all_of(j.begin(), j.end(), [](const nlohmann::json& e) {
            return e.is_object() && nonempty_string(e, "name") &&
                   nonempty_string(e, "portrait_prompt") && nonempty_string(e, "short_descriptor") &&
                   nonempty_string(e, "type_token");
        });
    }
    if (id == "case.v1") return j.is_object() && nonempty_string(j, "prompt");
    throw ConfigError("unknown response schema '" + id + "'");
}

}  // namespace

nlohmann::json parse_structured_response(const std::string& text, const std::string& schema_id) {
    for (const auto& island : json_islands(text)) {
        nlohmann::json j = nlohmann::json::parse(island, nullptr, false);
        if (j.is_discarded()) continue;
        if (valid_for_schema(j, schema_id)) return j;
    }
    throw LLMFormatError("no JSON matching schema " + schema_id + " in response", "parse", text);
}

nlohmann::json ask_llm(LLMClient& llm, const AskSpec& spec,
                       const std::function<Check(const nlohmann::json&)>& checker,
                       std::vector<std::pair<std::string, std::string>>* trace) {
    std::vector<ChatMessage> messages{
        {"system", "You are a precise story director that answers with exactly the requested JSON."},
        {"user", spec.rendered}};

    Check last{false, "no attempt made", Check::Severity::schema};
    nlohmann::json last_value;
    bool have_value = false;

    const int attempts = 1 + std::max(0, spec.retries);
    for (int attempt = 0; attempt < attempts; ++attempt) {
        const std::string response = llm.complete(messages);
        if (trace) trace->emplace_back(spec.stage, response);

        try {
            nlohmann::json value = parse_structured_response(response, spec.schema_id);
            last = checker ? checker(value) : Check{true, "", Check::Severity::schema};
            if (last.ok) return value;
            last_value = std::move(value);
            have_value = true;
        } catch (const LLMFormatError& e) {
            last = {false, e.what(), Check::Severity::schema};
            have_value = false;
        }

        messages.push_back({"assistant", response});
        messages.push_back({"user", "Your previous answer could not be used: " + last.reason +
                                        "\nThe invalid answer was:\n" + response +
                                        "\nAnswer again, strictly following the requested format."});
    }

    switch (last.severity) {
        case Check::Severity::soft:
            if (have_value) {
                if (trace) trace->emplace_back("flag:" + spec.stage, last.reason);
                return last_value;
            }
            break;
        case Check::Severity::count:
            throw SceneCountMismatch("stage " + spec.stage + ": " + last.reason);
        case Check::Severity::leak:
            throw RewriteLeak("stage " + spec.stage + ": " + last.reason);
        case Check::Severity::schema:
            break;
    }
    throw LLMFormatError("stage failed after " + std::to_string(attempts) + " attempts: " +
                             last.reason,
                         spec.stage, have_value ? last_value.dump() : "");
}

StoryDirector::StoryDirector(LLMClient& llm, TemplateRegistry registry, DirectorConfig config)
    : llm_(llm), registry_(std::move(registry)), config_(config) {}

nlohmann::json StoryDirector::ask(const std::string& stage, const std::string& rendered,
                                  const std::string& schema_id) {
    return ask_llm(llm_, {stage, rendered, schema_id, config_.retries}, nullptr, &trace_);
}

std::vector<SubjectSpec> StoryDirector::extract_subjects(const std::string& story_text,
                                                         int max_subjects, bool allow_empty) {
    if (story_text.empty()) throw InputError("story text is empty");
    if (max_subjects < 1) throw InputError("max_subjects must be >= 1");

    const std::string rendered = registry_.render(
        "subject_extract",
        {{"story", story_text}, {"max_subjects", std::to_string(max_subjects)}});
    auto name_check = [&](const nlohmann::json& j) -> Check {
        if (static_cast<int>(j.size()) > max_subjects)
            return {false, "more than " + std::to_string(max_subjects) + " names",
                    Check::Severity::schema};
        std::set<std::string> seen;
        for (const auto& e : j)
            if (!seen.insert(e.get<std::string>()).second)
                return {false, "duplicate name '" + e.get<std::string>() + "'",
                        Check::Severity::schema};
        if (j.empty() && !allow_empty)
            return {false, "the story must yield at least one subject", Check::Severity::schema};
        return {true, "", Check::Severity::schema};
    };
    nlohmann::json names = ask_llm(llm_, {"subject_extract", rendered, "subject_names.v1",
                                          config_.retries},
                                   name_check, &trace_);

    std::vector<SubjectSpec> subjects;
    for (const auto& e : names) {
        const std::string name = e.get<std::string>();
        const std::string attr_rendered = registry_.render(
            "subject_attributes", {{"story", story_text},
                                   {"subject", name},
                                   {"descriptor_words", std::to_string(config_.descriptor_word_cap)}});
        auto attr_check = [&](const nlohmann::json& j) -> Check {
            SubjectSpec s;
            s.name = name;
            s.portrait_prompt = j["portrait_prompt"].get<std::string>();
            s.short_descriptor = j["short_descriptor"].get<std::string>();
            s.type_token = j["type_token"].get<std::string>();
            if (word_count(s.short_descriptor) > config_.descriptor_word_cap)
                return {false, "short descriptor longer than " +
                                   std::to_string(config_.descriptor_word_cap) + " words",
                        Check::Severity::schema};
            try {
                validate_subject(s);
            } catch (const InvalidSpec& err) {
                return {false, err.what(), Check::Severity::schema};
            }
            return {true, "", Check::Severity::schema};
        };
        nlohmann::json attrs = ask_llm(llm_, {"subject_attributes", attr_rendered,
                                              "subject_attributes.v1", config_.retries},
                                       attr_check, &trace_);
        SubjectSpec s;
        s.name = name;
        s.portrait_prompt = attrs["portrait_prompt"].get<std::string>();
        s.short_descriptor = attrs["short_descriptor"].get<std::string>();
        s.type_token = attrs["type_token"].get<std::string>();
        subjects.push_back(std::move(s));
    }
    return subjects;
}

std::vector<SceneSpec> StoryDirector::generate_scenes(const std::string& story_text,
                                                      const std::vector<SubjectSpec>& subjects,
                                                      std::optional<int> n_scenes) {
    std::string names;
    for (const auto& s : subjects) {
        if (!names.empty()) names += ", ";
        names += s.name;
    }
    const std::string rendered = registry_.render(
        "scene_generate", {{"story", story_text},
                           {"names", names},
                           {"count", n_scenes ? std::to_string(*n_scenes) : "auto"},
                           {"word_limit", std::to_string(config_.word_limit)},
                           {"max_scenes", std::to_string(config_.scene_cap)}});

    auto prompt_of = [](const nlohmann::json& e) {
        return e.is_string() ? e.get<std::string>() : e["prompt"].get<std::string>();
    };
    auto scene_check = [&](const nlohmann::json& j) -> Check {
        if (n_scenes && static_cast<int>(j.size()) != *n_scenes)
            return {false, "expected " + std::to_string(*n_scenes) + " scenes, got " +
                               std::to_string(j.size()),
                    Check::Severity::count};
        for (const auto& e : j) {
            const int wc = word_count(prompt_of(e));
            if (wc > config_.word_limit)
                return {false, "scene prompt of " + std::to_string(wc) + " words exceeds the " +
                                   std::to_string(config_.word_limit) + "-word limit",
                        Check::Severity::soft};
        }
        return {true, "", Check::Severity::schema};
    };
    nlohmann::json arr = ask_llm(llm_, {"scene_generate", rendered, "scenes.v1", config_.retries},
                                 scene_check, &trace_);

    std::vector<SceneSpec> scenes;
    const size_t cap = n_scenes ? arr.size() : std::min<size_t>(arr.size(), config_.scene_cap);
    for (size_t i = 0; i < cap; ++i) {
        SceneSpec sc;
        sc.index = static_cast<int>(i);
        sc.raw_prompt = prompt_of(arr[i]);
        sc.word_count = word_count(sc.raw_prompt);
        scenes.push_back(std::move(sc));
    }
    return scenes;
}

std::vector<std::string> StoryDirector::annotate_presence(const SceneSpec& scene,
                                                          const std::vector<SubjectSpec>& subjects) {
    const std::string& prompt_text =
        (config_.annotate_uses_rewritten && !scene.rewritten_prompt.empty())
            ? scene.rewritten_prompt
            : scene.raw_prompt;
    std::vector<std::string> present;
    for (const auto& s : subjects) {
        const std::string rendered = registry_.render(
            "presence_annotate", {{"scene", prompt_text}, {"subject", s.name}});
        nlohmann::json j = ask("presence_annotate", rendered, "presence.v1");
        if (j["present"].get<bool>()) present.push_back(s.name);
    }
    return present;
}

std::string StoryDirector::rewrite_scene(const SceneSpec& scene,
                                         const std::vector<SubjectSpec>& subjects) {
    std::vector<const SubjectSpec*> present;
    for (const auto& name : scene.present_subjects) {
        auto it = std::find_if(subjects.begin(), subjects.end(),
                               [&](const SubjectSpec& s) { return s.name == name; });
        if (it == subjects.end())
            throw PlanIntegrityError("scene references unknown subject '" + name + "'");
        if (it->short_descriptor.empty())
            throw InputError("subject '" + name + "' has no short descriptor");
        present.push_back(&*it);
    }
    if (present.empty()) return scene.raw_prompt;

    std::string replacements;
    for (const auto* s : present)
        replacements += "REPLACE: " + s->name + " => " + s->short_descriptor + "\n";
    const std::string rendered = registry_.render(
        "scene_rewrite", {{"scene", scene.raw_prompt}, {"replacements", replacements}});

    auto rewrite_check = [&](const nlohmann::json& j) -> Check {
        const std::string text = j["rewritten"].get<std::string>();
        for (const auto* s : present) {
            if (contains_word(text, s->name))
                return {false, "name '" + s->name + "' still present", Check::Severity::leak};
        }
        for (const auto* s : present) {
            if (text.find(s->short_descriptor) == std::string::npos)
                return {false, "descriptor '" + s->short_descriptor + "' missing",
                        Check::Severity::schema};
        }
        if (jaccard_words(scene.raw_prompt, text) < config_.jaccard_floor)
            return {false, "rewrite drifted too far from the scene", Check::Severity::schema};
        return {true, "", Check::Severity::schema};
    };
    nlohmann::json j = ask_llm(llm_, {"scene_rewrite", rendered, "rewrite.v1", config_.retries},
                               rewrite_check, &trace_);
    return j["rewritten"].get<std::string>();
}

StoryPlan StoryDirector::build_story_plan(const std::string& story_text) {
    clear_trace();
    StoryPlan plan;
    plan.story_text = story_text;
    plan.director_model_id = llm_.model_id();
    plan.n_scenes_requested = config_.n_scenes;

    plan.subjects = extract_subjects(story_text, config_.max_subjects, /*allow_empty=*/true);
    plan.scenes = generate_scenes(story_text, plan.subjects, config_.n_scenes);
    for (auto& scene : plan.scenes) {
        if (!plan.subjects.empty())
            scene.present_subjects = annotate_presence(scene, plan.subjects);
        scene.rewritten_prompt = rewrite_scene(scene, plan.subjects);
    }

    plan.creation_trace = trace_;
    validate_story_plan(plan);
    return plan;
}

}  // namespace dreamstory
