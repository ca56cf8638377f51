// Regenerates the committed demo fixtures: a story, the scripted-LLM
// script that answers for it, a recorded transcript of the planning
// exchange, and the resulting plan. Planning runs with default director
// settings so `dreamstory plan --llm replay:...` hits the same prompts.
#include <filesystem>
#include <iostream>

#include "dreamstory/director.hpp"
#include "dreamstory/json_util.hpp"
#include "dreamstory/llm.hpp"
#include "dreamstory/story.hpp"
#include "dreamstory/templates.hpp"

namespace fs = std::filesystem;
using namespace dreamstory;

int main(int argc, char** argv) {
    const fs::path out_dir = argc > 1 ? argv[1] : "fixtures/demo";
    fs::create_directories(out_dir);

    const std::string story =
        "Elena left the mill town before sunrise, her satchel heavy with maps and "
        "honey bread. At the ford she met Bruno, a brown bear who fished the river "
        "every morning and remembered her from the summer fires. They walked the "
        "ridge together while the mist burned away, traded stories over a campfire, "
        "and parted where the pines thinned. Behind them the village slept on under "
        "new snow, lanterns still lit in the windows.\n";

    ScriptedStoryLLM::Script script;
    script.subjects = {
        {"Elena",
         "a young woman with auburn braided hair, green traveling cloak, leather "
         "satchel, determined expression, watercolor storybook style",
         "young woman in a green cloak", "woman", {}},
        {"Bruno",
         "a large brown bear with a notched ear and kind eyes, thick winter fur, "
         "watercolor storybook style",
         "large brown bear", "bear", {}},
    };
    script.scenes = {
        {"Elena walks a misty forest road at dawn, clutching her satchel",
         {"Elena"}},
        {"Bruno fishes in the rushing river, paws deep in the cold water",
         {"Bruno"}},
        {"Elena and Bruno share honey bread beside a crackling campfire under the stars",
         {"Elena", "Bruno"}},
        {"The village sleeps beneath fresh snow, lanterns glowing in the windows",
         {}},
    };
    script.pool = {
        {"Marisol", "a silver-haired cartographer in a star-charted coat, brass compass in hand",
         "silver-haired cartographer", "woman", {}},
        {"Taro", "a red fox with a courier's satchel and a torn left ear",
         "fox with a satchel", "fox", {}},
        {"Edwin", "an elderly lighthouse keeper in an oilskin coat, lantern raised",
         "elderly lighthouse keeper", "man", {}},
        {"Petra", "a stone golem streaked with moss, glowing rune on its chest",
         "moss-streaked stone golem", "statue", {}},
        {"Nils", "a boy in a patched blue coat flying a paper kite",
         "boy with a paper kite", "boy", {}},
        {"Ophelia", "a pale owl with snow-flecked feathers and amber eyes",
         "snow-flecked owl", "owl", {}},
    };

    write_text_file(out_dir / "story.txt", story);
    write_json_atomic(out_dir / "script.json", script.to_json());

    ScriptedStoryLLM scripted(script);
    RecordingLLM recorder(scripted);
    StoryDirector director(recorder, TemplateRegistry::builtin());
    const StoryPlan plan = director.build_story_plan(story);
    recorder.save((out_dir / "replay.json").string());
    write_plan(plan, (out_dir / "plan.json").string());

    std::cout << "fixtures: " << out_dir.string() << " (" << plan.subjects.size()
              << " subject(s), " << plan.scenes.size() << " scene(s))\n";
    return 0;
}
