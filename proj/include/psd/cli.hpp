#pragma once

#include <string>
#include <vector>

#include "psd/data.hpp"
#include "psd/trainer.hpp"

namespace psd {

inline constexpr const char* kVersion = "1.0.0";

// Both parsers accept a flat JSON object or a run record with a "config"
// object inside (so a run.json can be fed straight back in), apply key=value
// overrides over it, and validate the result. Unknown keys are rejected.
TrainConfig parse_train_config(const std::string& text, const std::vector<std::string>& overrides);
SyntheticSpec parse_spec_config(const std::string& text, const std::vector<std::string>& overrides);

// Entry point behind the psd binary; args exclude the program name.
// Returns 0 on success, 1 for configuration problems, 2 for data or format
// problems, 3 for numeric failures during training.
int run_cli(std::vector<std::string> args);

}  // namespace psd
