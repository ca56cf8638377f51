#include "dreamstory/llm.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <thread>

#include "dreamstory/errors.hpp"
#include "dreamstory/hash.hpp"
#include "dreamstory/json_util.hpp"

namespace dreamstory {

uint64_t message_list_hash(const std::vector<ChatMessage>& messages) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& m : messages) arr.push_back({{"role", m.role}, {"content", m.content}});
    return fnv1a64(arr.dump());
}

ReplayLLM::ReplayLLM(const std::string& transcript_path) {
    nlohmann::json j = read_json_file(transcript_path);
    require_schema(j, "dreamstory.replay.v1", transcript_path);
    if (!j.contains("entries") || !j["entries"].is_object())
        throw SchemaError("transcript has no entries object", transcript_path);
    for (auto& [key, value] : j["entries"].items()) {
        if (!value.is_string()) throw SchemaError("entry is not a string", transcript_path);
        entries_[key] = value.get<std::string>();
    }
    if (j.contains("model_id")) model_id_ = j["model_id"].get<std::string>();
}

std::string ReplayLLM::complete(const std::vector<ChatMessage>& messages) {
    const std::string key = hex64(message_list_hash(messages));
    auto it = entries_.find(key);
    if (it == entries_.end()) {
        std::string tail = messages.empty() ? "" : messages.back().content.substr(0, 120);
        throw ReplayMiss("no transcript entry for message hash " + key + " (last message: \"" +
                         tail + "\")");
    }
    return it->second;
}

std::string RecordingLLM::complete(const std::vector<ChatMessage>& messages) {
    std::string response = inner_.complete(messages);
    std::lock_guard<std::mutex> lock(mu_);
    entries_[hex64(message_list_hash(messages))] = response;
    return response;
}

void RecordingLLM::save(const std::string& path) const {
    std::lock_guard<std::mutex> lock(mu_);
    nlohmann::json j{{"schema", "dreamstory.replay.v1"},
                     {"model_id", inner_.model_id()},
                     {"entries", entries_}};
    write_json_atomic(path, j);
}

RateLimitedLLM::RateLimitedLLM(LLMClient& inner, double requests_per_minute) : inner_(inner) {
    if (requests_per_minute <= 0) throw ConfigError("requests per minute must be positive");
    interval_ = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(60.0 / requests_per_minute));
    next_slot_ = std::chrono::steady_clock::now();
}

std::string RateLimitedLLM::complete(const std::vector<ChatMessage>& messages) {
    std::chrono::steady_clock::time_point slot;
    {
        std::lock_guard<std::mutex> lock(mu_);
        const auto now = std::chrono::steady_clock::now();
        slot = std::max(next_slot_, now);
        next_slot_ = slot + interval_;
    }
    std::this_thread::sleep_until(slot);
    return inner_.complete(messages);
}

// ---------------------------------------------------------------------------

namespace {

// Value of a "MARKER: value" line; empty when absent.
std::string marker_value(const std::string& text, const std::string& marker) {
    const std::string needle = marker + ":";
    size_t pos = 0;
    while ((pos = text.find(needle, pos)) != std::string::npos) {
        const bool at_line_start = pos == 0 || text[pos - 1] == '\n';
        if (!at_line_start) {
            pos += needle.size();
            continue;
        }
        size_t start = pos + needle.size();
        while (start < text.size() && text[start] == ' ') ++start;
        size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        return text.substr(start, end - start);
    }
    return "";
}

// All values of repeated "MARKER: value" lines.
std::vector<std::string> marker_values(const std::string& text, const std::string& marker) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    const std::string needle = marker + ":";
    while (std::getline(in, line)) {
        if (line.rfind(needle, 0) != 0) continue;
        std::string v = line.substr(needle.size());
        const size_t first = v.find_first_not_of(' ');
        out.push_back(first == std::string::npos ? "" : v.substr(first));
    }
    return out;
}

std::string replace_whole_word(const std::string& text, const std::string& word,
                               const std::string& replacement) {
    if (word.empty()) return text;
    std::string out;
    size_t pos = 0;
    while (pos < text.size()) {
        const size_t hit = text.find(word, pos);
        if (hit == std::string::npos) {
            out += text.substr(pos);
            break;
        }
        const bool left_ok = hit == 0 || !std::isalnum(static_cast<unsigned char>(text[hit - 1]));
        const size_t after = hit + word.size();
        const bool right_ok =
            after >= text.size() || !std::isalnum(static_cast<unsigned char>(text[after]));
        out += text.substr(pos, hit - pos);
        if (left_ok && right_ok) {
            out += replacement;
        } else {
            out += word;
        }
        pos = after;
    }
    return out;
}

}  // namespace

nlohmann::json ScriptedStoryLLM::Script::to_json() const {
    nlohmann::json subj = nlohmann::json::array();
    for (const auto& s : subjects) subj.push_back(s.to_json());
    nlohmann::json scn = nlohmann::json::array();
    for (const auto& s : scenes) scn.push_back({{"prompt", s.prompt}, {"present", s.present}});
    nlohmann::json pl = nlohmann::json::array();
    for (const auto& s : pool) pl.push_back(s.to_json());
    return {{"schema", "dreamstory.script.v1"}, {"subjects", subj}, {"scenes", scn}, {"pool", pl}};
}

ScriptedStoryLLM::Script ScriptedStoryLLM::Script::from_json(const nlohmann::json& j) {
    Script s;
    for (const auto& e : j.value("subjects", nlohmann::json::array()))
        s.subjects.push_back(SubjectSpec::from_json(e));
    for (const auto& e : j.value("scenes", nlohmann::json::array())) {
        ScriptScene scene;
        scene.prompt = e.at("prompt").get<std::string>();
        scene.present = e.value("present", std::vector<std::string>{});
        s.scenes.push_back(std::move(scene));
    }
    for (const auto& e : j.value("pool", nlohmann::json::array()))
        s.pool.push_back(SubjectSpec::from_json(e));
    return s;
}

ScriptedStoryLLM ScriptedStoryLLM::from_file(const std::string& path) {
    return ScriptedStoryLLM(Script::from_json(read_json_file(path)));
}

std::string ScriptedStoryLLM::complete(const std::vector<ChatMessage>& messages) {
    if (messages.empty()) throw LLMTransportError("empty message list");
    std::string text;
    for (const auto& m : messages) {
        text += m.content;
        text += "\n";
    }
    const std::string stage = marker_value(text, "TASK");

    if (stage == "subject_extract") {
        nlohmann::json names = nlohmann::json::array();
        for (const auto& s : script_.subjects) names.push_back(s.name);
        return names.dump();
    }

    if (stage == "subject_attributes") {
        const std::string name = marker_value(text, "SUBJECT");
        for (const auto& s : script_.subjects) {
            if (s.name != name) continue;
            return nlohmann::json{{"portrait_prompt", s.portrait_prompt},
                                  {"short_descriptor", s.short_descriptor},
                                  {"type_token", s.type_token}}
                .dump();
        }
        return "I do not know that subject.";
    }

    if (stage == "scene_generate") {
        const std::string count = marker_value(text, "COUNT");
        size_t n = script_.scenes.size();
        if (!count.empty() && count != "auto") n = std::stoul(count);
        nlohmann::json scenes = nlohmann::json::array();
        for (size_t i = 0; i < n; ++i) {
            if (i < script_.scenes.size()) {
                scenes.push_back({{"prompt", script_.scenes[i].prompt}});
            } else {
                scenes.push_back(
                    {{"prompt", "A quiet interlude in the story, part " + std::to_string(i)}});
            }
        }
        return scenes.dump();
    }

    if (stage == "presence_annotate") {
        const std::string name = marker_value(text, "SUBJECT");
        const std::string scene = marker_value(text, "SCENE");
        for (const auto& s : script_.scenes) {
            if (s.prompt != scene) continue;
            const bool present =
                std::find(s.present.begin(), s.present.end(), name) != s.present.end();
            return nlohmann::json{{"present", present}}.dump();
        }
        // Scenes outside the script (benchmark cases) are judged lexically:
        // the name as a whole word, or the pool subject's descriptor as a
        // case-insensitive substring.
        bool present = contains_word(scene, name);
        if (!present) {
            const auto lower = [](std::string v) {
                std::transform(v.begin(), v.end(), v.begin(),
                               [](unsigned char c) { return std::tolower(c); });
                return v;
            };
            for (const auto& s : script_.pool)
                if (s.name == name && !s.short_descriptor.empty() &&
                    lower(scene).find(lower(s.short_descriptor)) != std::string::npos)
                    present = true;
        }
        return nlohmann::json{{"present", present}}.dump();
    }

    if (stage == "scene_rewrite") {
        std::string scene = marker_value(text, "SCENE");
        for (const auto& repl : marker_values(text, "REPLACE")) {
            const size_t sep = repl.find(" => ");
            if (sep == std::string::npos) continue;
            scene = replace_whole_word(scene, repl.substr(0, sep), repl.substr(sep + 4));
        }
        return nlohmann::json{{"rewritten", scene}}.dump();
    }

    if (stage == "pool_subjects") {
        const std::string count = marker_value(text, "COUNT");
        const size_t n = count.empty() ? script_.pool.size() : std::stoul(count);
        std::vector<std::string> avoid = marker_values(text, "AVOID");
        nlohmann::json out = nlohmann::json::array();
        size_t emitted = 0;
        for (size_t i = 0; emitted < n; ++i) {
            SubjectSpec s;
            if (i < script_.pool.size()) {
                s = script_.pool[i];
            } else {
                const auto tag = std::to_string(i);
                s.name = "Wanderer" + tag;
                s.portrait_prompt = "a weathered traveler with pack and staff, variant " + tag;
                s.short_descriptor = "weathered traveler";
                s.type_token = "man";
            }
            if (std::find(avoid.begin(), avoid.end(), s.name) != avoid.end()) continue;
            out.push_back(s.to_json());
            ++emitted;
        }
        return out.dump();
    }

    if (stage == "case_prompt") {
        std::vector<std::string> descriptors = marker_values(text, "SUBJECTS");
        std::string prompt;
        if (descriptors.empty()) {
            prompt = "A mist-covered valley at dawn, pines and a winding river below the ridge";
        } else {
            prompt = "In a sunlit plaza, ";
            for (size_t i = 0; i < descriptors.size(); ++i) {
                if (i > 0) prompt += i + 1 == descriptors.size() ? " and " : ", ";
                prompt += descriptors[i];
            }
            prompt += " pause near the fountain as market banners ripple overhead";
        }
        return nlohmann::json{{"prompt", prompt}}.dump();
    }

    return "I cannot help with that request.";
}

std::unique_ptr<LLMClient> make_llm_client(const std::string& spec) {
    const size_t sep = spec.find(':');
    const std::string kind = sep == std::string::npos ? spec : spec.substr(0, sep);
    const std::string arg = sep == std::string::npos ? "" : spec.substr(sep + 1);
    if (kind == "replay") {
        if (arg.empty()) throw ConfigError("replay client needs a transcript path");
        return std::make_unique<ReplayLLM>(arg);
    }
    if (kind == "scripted") {
        if (arg.empty()) throw ConfigError("scripted client needs a script path");
        return std::make_unique<ScriptedStoryLLM>(ScriptedStoryLLM::from_file(arg));
    }
    throw ConfigError("unknown llm client spec '" + spec + "' (expected replay:PATH or scripted:PATH)");
}

}  // namespace dreamstory
