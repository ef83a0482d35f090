#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "lsseg/cascade.hpp"
#include "lsseg/network.hpp"
#include "lsseg/trainer.hpp"
#include "lsseg/volume.hpp"

namespace lsseg {

/// Everything a CLI run can be configured with. The output class count of a
/// network follows from the training stage, so it is not a key.
struct RunConfig {
    NetSpec net;
    std::uint64_t net_seed = 1;
    TrainConfig train;
    /// Unset: (0.2, 1.2) for the liver stage, (0.2, 1.2, 2.2) for the lesion stage.
    std::optional<ClassWeights> class_weights;
    CascadeConfig cascade;
    PhantomConfig phantom;
    int threads = 0;  // 0 = library default
    bool emit_probs = false;

    /// Validates every section; throws ConfigError.
    void validate() const;
};

/// Flat `key = value` lines; `#` starts a comment. Unknown or repeated keys
/// and malformed values raise ConfigError naming the key and line.
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Every key with its value, in the order of the reference file.
std::string format_run_config(const RunConfig& cfg);

}  // namespace lsseg
