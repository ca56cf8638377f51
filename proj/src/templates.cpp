#include "dreamstory/templates.hpp"

#include <filesystem>

#include "dreamstory/errors.hpp"
#include "dreamstory/json_util.hpp"

namespace dreamstory {

namespace {

// Example lines inside templates use -EXAMPLE suffixed markers so the
// response parsers never confuse them with the live input block.
const std::map<std::string, std::string>& builtin_templates() {
    static const std::map<std::string, std::string> kTemplates = {
        {"subject_extract",
         R"(TASK: subject_extract

You are a story director. List the named characters that visually appear in the story below. Answer with a JSON array of their names, most important first, at most {{max_subjects}} names. Name only concrete visual subjects such as people, animals, or creatures. Answer with an empty array if the story has none.

Example 1:
STORY-EXAMPLE: Anna fed her cat Whiskers before the storm rolled in.
Answer: ["Anna", "Whiskers"]

Example 2:
STORY-EXAMPLE: The lighthouse keeper Tomas watched the gulls wheel over the cliffs.
Answer: ["Tomas"]

STORY: {{story}}
)"},
        {"subject_attributes",
         R"(TASK: subject_attributes

For the story subject named below, answer with a JSON object holding three keys: "portrait_prompt" (a detailed one-sentence visual description for a standalone portrait), "short_descriptor" (a visual phrase of at most {{descriptor_words}} words that can replace the name in a sentence and never contains the name), and "type_token" (a one-word detector category such as man, girl, dog).

Example 1:
SUBJECT-EXAMPLE: Kondo
Answer: {"portrait_prompt": "a towering gorilla with silver-streaked fur and watchful amber eyes", "short_descriptor": "towering gorilla", "type_token": "gorilla"}

Example 2:
SUBJECT-EXAMPLE: Mira
Answer: {"portrait_prompt": "a young girl in a red raincoat with freckles and windswept hair", "short_descriptor": "girl in a red raincoat", "type_token": "girl"}

STORY: {{story}}
SUBJECT: {{subject}}
)"},
        {"scene_generate",
         R"(TASK: scene_generate

Split the story into visual scenes. Answer with a JSON array of objects, each {"prompt": "..."} holding one vivid present-tense scene description of at most {{word_limit}} words on a single line. Mention subjects by name. COUNT gives the number of scenes to produce; "auto" means you choose a natural count of at most {{max_scenes}}.

Example 1:
COUNT-EXAMPLE: 2
Answer: [{"prompt": "Anna kneels by the hearth feeding Whiskers as rain lashes the window"}, {"prompt": "Whiskers curls on the sill while Anna reads by candlelight"}]

Example 2:
COUNT-EXAMPLE: auto
Answer: [{"prompt": "Tomas climbs the spiral lighthouse stairs at dusk, lamp oil in hand"}]

STORY: {{story}}
NAMES: {{names}}
COUNT: {{count}}
)"},
        {"presence_annotate",
         R"(TASK: presence_annotate

Decide whether the named subject is visually present in the scene described below. Answer with a JSON object, either {"present": true} or {"present": false}.

Example 1:
SCENE-EXAMPLE: Anna kneels by the hearth feeding Whiskers
SUBJECT-EXAMPLE: Whiskers
Answer: {"present": true}

Example 2:
SCENE-EXAMPLE: The empty lighthouse beam sweeps the dark sea
SUBJECT-EXAMPLE: Tomas
Answer: {"present": false}

SCENE: {{scene}}
SUBJECT: {{subject}}
)"},
        {"scene_rewrite",
         R"(TASK: scene_rewrite

Rewrite the scene so that every name listed in a REPLACE line is replaced by its visual descriptor, keeping the rest of the wording intact. The rewritten text must not contain any of the original names. Answer with a JSON object {"rewritten": "..."}.

Example 1:
SCENE-EXAMPLE: Kondo climbs the tower
REPLACE-EXAMPLE: Kondo => towering gorilla
Answer: {"rewritten": "towering gorilla climbs the tower"}

Example 2:
SCENE-EXAMPLE: Anna waves at Tomas from the pier
REPLACE-EXAMPLE: Anna => girl in a red raincoat
REPLACE-EXAMPLE: Tomas => weathered lighthouse keeper
Answer: {"rewritten": "girl in a red raincoat waves at weathered lighthouse keeper from the pier"}

SCENE: {{scene}}
{{replacements}}
)"},
        {"pool_subjects",
         R"(TASK: pool_subjects

Invent distinct story subjects for an image-generation benchmark. Answer with a JSON array of objects, each holding "name", "portrait_prompt", "short_descriptor", and "type_token". Names must be unique and portrait prompts non-repetitive; type_token is a one-word detector category. Never use a name listed in an AVOID line. Produce exactly COUNT subjects.

Example 1:
COUNT-EXAMPLE: 1
Answer: [{"name": "Bruno", "portrait_prompt": "a stocky brown bear with a scarred muzzle standing in morning mist", "short_descriptor": "stocky brown bear", "type_token": "bear"}]

Example 2:
COUNT-EXAMPLE: 2
Answer: [{"name": "Sel", "portrait_prompt": "a silver-haired woman in a star-charted indigo cloak", "short_descriptor": "silver-haired astronomer", "type_token": "woman"}, {"name": "Pip", "portrait_prompt": "a small terrier with one folded ear and muddy paws", "short_descriptor": "small scruffy terrier", "type_token": "dog"}]

COUNT: {{count}}
{{avoid}}
)"},
        {"case_prompt",
         R"(TASK: case_prompt

Write one scene prompt of at most {{word_limit}} words on a single line. It must feature exactly the subjects listed in SUBJECTS lines, described by those descriptors, and no other named character. If no SUBJECTS lines are given, describe a scene containing no characters at all. Answer with a JSON object {"prompt": "..."}.

Example 1:
SUBJECTS-EXAMPLE: stocky brown bear
Answer: {"prompt": "A stocky brown bear wades into a mountain stream at dawn, mist curling over the cold water"}

Example 2, with no subjects:
Answer: {"prompt": "Lanterns drift over a silent harbor at midnight, reflections trembling on the tide"}

{{subjects}}
)"},
    };
    return kTemplates;
}

}  // namespace

const std::vector<std::string>& TemplateRegistry::stage_names() {
    static const std::vector<std::string> kStages = {
        "subject_extract", "subject_attributes", "scene_generate", "presence_annotate",
        "scene_rewrite",   "pool_subjects",      "case_prompt"};
    return kStages;
}

TemplateRegistry TemplateRegistry::builtin() {
    TemplateRegistry r;
    r.templates_ = builtin_templates();
    r.validate();
    return r;
}

TemplateRegistry TemplateRegistry::from_dir(const std::string& dir) {
    TemplateRegistry r;
    r.templates_ = builtin_templates();
    for (const auto& stage : stage_names()) {
        const std::filesystem::path p = std::filesystem::path(dir) / (stage + ".txt");
        if (std::filesystem::exists(p)) r.templates_[stage] = read_text_file(p.string());
    }
    r.validate();
    return r;
}

void TemplateRegistry::validate() const {
    for (const auto& stage : stage_names()) {
        auto it = templates_.find(stage);
        if (it == templates_.end() || it->second.empty())
            throw ConfigError("missing prompt template for stage '" + stage + "'");
        const std::string& text = it->second;
        if (text.find("TASK: " + stage) == std::string::npos)
            throw ConfigError("template '" + stage + "' lacks its TASK marker");
        size_t examples = 0, pos = 0;
        while ((pos = text.find("Example", pos)) != std::string::npos) {
            ++examples;
            pos += 7;
        }
        if (examples < 2)
            throw ConfigError("template '" + stage + "' needs at least two in-context examples");
    }
}

std::string TemplateRegistry::render(const std::string& stage,
                                     const std::map<std::string, std::string>& vars) const {
    std::string out = raw(stage);
    for (const auto& [key, value] : vars) {
        const std::string needle = "{{" + key + "}}";
        size_t pos = 0;
        while ((pos = out.find(needle, pos)) != std::string::npos) {
            out.replace(pos, needle.size(), value);
            pos += value.size();
        }
    }
    if (out.find("{{") != std::string::npos)
        throw ConfigError("unbound placeholder rendering template '" + stage + "'");
    return out;
}

const std::string& TemplateRegistry::raw(const std::string& stage) const {
    auto it = templates_.find(stage);
    if (it == templates_.end()) throw ConfigError("unknown template stage '" + stage + "'");
    return it->second;
}

void TemplateRegistry::export_dir(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    for (const auto& [stage, text] : templates_)
        write_text_file((std::filesystem::path(dir) / (stage + ".txt")).string(), text);
}

}  // namespace dreamstory
