#pragma once

#include <map>
#include <string>
#include <vector>

namespace dreamstory {

// Prompt templates by stage name. Every template must carry a TASK marker
// and at least two in-context examples; that is asserted at load time.
// Placeholders look like {{name}} and must all be bound at render time.
class TemplateRegistry {
  public:
    static const std::vector<std::string>& stage_names();

    static TemplateRegistry builtin();
    // Reads <stage>.txt per stage from dir; missing files fall back to the
    // builtin text.
    static TemplateRegistry from_dir(const std::string& dir);

    std::string render(const std::string& stage,
                       const std::map<std::string, std::string>& vars) const;
    const std::string& raw(const std::string& stage) const;
    void export_dir(const std::string& dir) const;

  private:
    void validate() const;
    std::map<std::string, std::string> templates_;
};

}  // namespace dreamstory
