#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "dreamstory/backends.hpp"
#include "dreamstory/subject.hpp"

namespace dreamstory {

// Stable key of a full message list; replay transcripts are keyed by it.
uint64_t message_list_hash(const std::vector<ChatMessage>& messages);

// Pure lookup client over a recorded transcript file.
class ReplayLLM : public LLMClient {
  public:
    explicit ReplayLLM(const std::string& transcript_path);

    std::string complete(const std::vector<ChatMessage>& messages) override;
    std::string model_id() const override { return model_id_; }
    size_t size() const { return entries_.size(); }

  private:
    std::map<std::string, std::string> entries_;  // hex hash -> response
    std::string model_id_ = "replay";
};

// Wraps any client and records every exchange for later replay.
class RecordingLLM : public LLMClient {
  public:
    explicit RecordingLLM(LLMClient& inner) : inner_(inner) {}

    std::string complete(const std::vector<ChatMessage>& messages) override;
    std::string model_id() const override { return inner_.model_id(); }
    void save(const std::string& path) const;

  private:
    LLMClient& inner_;
    std::map<std::string, std::string> entries_;
    mutable std::mutex mu_;
};

// Caller-side rate limiting, shared across threads.
class RateLimitedLLM : public LLMClient {
  public:
    RateLimitedLLM(LLMClient& inner, double requests_per_minute);

    std::string complete(const std::vector<ChatMessage>& messages) override;
    std::string model_id() const override { return inner_.model_id(); }

  private:
    LLMClient& inner_;
    std::chrono::steady_clock::duration interval_;
    std::chrono::steady_clock::time_point next_slot_;
    std::mutex mu_;
};

// Test helper: answers from a function.
class FnLLM : public LLMClient {
  public:
    using Fn = std::function<std::string(const std::vector<ChatMessage>&)>;
    explicit FnLLM(Fn fn, std::string id = "fn") : fn_(std::move(fn)), id_(std::move(id)) {}

    std::string complete(const std::vector<ChatMessage>& messages) override {
        return fn_(messages);
    }
    std::string model_id() const override { return id_; }

  private:
    Fn fn_;
    std::string id_;
};

// Deterministic stand-in for the director model. Configured with the
// subjects and scenes it should "know"; answers each prompt-template stage
// by parsing the structured markers the templates emit (TASK, SUBJECT,
// SCENE, COUNT, REPLACE, AVOID, SUBJECTS).
class ScriptedStoryLLM : public LLMClient {
  public:
    struct ScriptScene {
        std::string prompt;
        std::vector<std::string> present;  // subject names
    };

    struct Script {
        std::vector<SubjectSpec> subjects;
        std::vector<ScriptScene> scenes;
        std::vector<SubjectSpec> pool;  // benchmark subject pool

        nlohmann::json to_json() const;
        static Script from_json(const nlohmann::json& j);
    };

    explicit ScriptedStoryLLM(Script script) : script_(std::move(script)) {}
    static ScriptedStoryLLM from_file(const std::string& path);

    std::string complete(const std::vector<ChatMessage>& messages) override;
    std::string model_id() const override { return "scripted"; }

  private:
    Script script_;
};

// Builds a client from a CLI spec: "replay:<path>", "scripted:<path>".
std::unique_ptr<LLMClient> make_llm_client(const std::string& spec);

}  // namespace dreamstory
