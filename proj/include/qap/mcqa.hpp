#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace qap {

class mcqa_error : public std::runtime_error {
 public:
  explicit mcqa_error(const std::string& what) : std::runtime_error(what) {}
};

// One multiple-choice question. `scenario` tags how the instance was
// generated: standard, distractor-heavy, or missing-knowledge.
struct McqaInstance {
  std::string id;
  std::string question;
  std::vector<std::string> options;
  int gold = -1;
  std::string scenario = "standard";

  int n_options() const { return static_cast<int>(options.size()); }

  void validate() const {
    if (options.size() < 2 || options.size() > 26)
      throw mcqa_error("instance " + id + ": option count must be in [2, 26]");
    if (gold < 0 || gold >= n_options())
      throw mcqa_error("instance " + id + ": gold index out of range");
    for (std::size_t i = 0; i < options.size(); ++i)
      for (std::size_t j = i + 1; j < options.size(); ++j)
        if (options[i] == options[j])
          throw mcqa_error("instance " + id + ": duplicate option '" + options[i] + "'");
  }
};

// Fixed rendering shared by every mode so label logits stay comparable.
inline std::string render_prompt(const McqaInstance& inst) {
  std::string out = "Question: " + inst.question + "\nOptions:";
  for (int k = 0; k < inst.n_options(); ++k)
    out += std::string(" ") + static_cast<char>('A' + k) + ". " +
           inst.options[static_cast<std::size_t>(k)];
  out += "\nAnswer:";
  return out;
}

}  // namespace qap
