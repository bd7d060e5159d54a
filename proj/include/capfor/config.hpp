#ifndef CAPFOR_CONFIG_HPP
#define CAPFOR_CONFIG_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "capfor/distill.hpp"
#include "capfor/experts.hpp"
#include "capfor/explain.hpp"
#include "capfor/lora.hpp"
#include "capfor/timer_net.hpp"
#include "capfor/train.hpp"

namespace capfor {

/// Thrown on malformed config text, unknown keys, or unparsable values.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/**
 * Effective settings for one pipeline run: the global seed, the three
 * artifact directories, and one section per module config. Sections map to
 * key prefixes in the flat config text ("finetune.lambda_trend = 0.02").
 */
struct RunConfig {
    std::uint64_t seed = 1;
    std::string data_dir = "data";
    std::string checkpoint_dir = "checkpoints";
    std::string report_dir = "reports";

    std::size_t synth_cells = 6;
    std::size_t synth_cycles = 384;

    TimerConfig timer;
    PretrainConfig pretrain;
    LoraConfig lora;
    std::uint64_t lora_seed = 1;  // adapter init draws
    FinetuneConfig finetune;
    KDConfig distill;
    ExpertConfig expert;
    StudentTrainConfig student;

    std::size_t eval_context = 96;
    std::size_t eval_horizon = 96;
    std::size_t eval_stride = 192;
    std::string eval_protocol = "all";  // all | cc | cccv
    std::string eval_corpus = "sjtu-like";

    LimeConfig lime;
    std::size_t lime_windows = 8;  // cap on windows fed to the explainer

    std::size_t rollout_total = 288;
    std::size_t rollout_base = 96;
    std::size_t rollout_cell = 0;

    std::string ablate_axis = "lambda";  // positions | rank | alpha | lambda
    int ablate_epochs = 3;
};

/// All recognized "section.key" names, sorted; the single source of truth
/// for typo rejection and env scanning.
const std::vector<std::string>& config_keys();

/// Assign one key. Rejects unknown keys and bad values with ConfigError.
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

/**
 * Flat key-value text: one `section.key = value` per line, `#` comments and
 * blank lines skipped. Later lines win. Throws ConfigError on syntax
 * errors or unknown keys, naming the line.
 */
RunConfig parse_config_text(const std::string& text, const RunConfig& base = {});
RunConfig load_run_config(const std::string& path, const RunConfig& base = {});

/**
 * Environment overrides: CAPFOR_<section>__<key> (dots become double
 * underscores, case preserved), e.g. CAPFOR_finetune__lambda_trend=0.1.
 * Applied for every recognized key that is present in the environment.
 */
void apply_env_overrides(RunConfig& cfg);

/// Canonical serialization, one sorted `key = value` line each; equal
/// configs serialize identically.
std::string serialize_config(const RunConfig& cfg);

/// FNV-1a over the canonical serialization, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

/**
 * Run manifest beside an artifact: subcommand, code version, seed, config
 * hash, input paths, extra key-value pairs, then the full effective config
 * as indented `config.key = value` lines so the run is reproducible from
 * the manifest alone.
 */
void write_run_manifest(const std::string& path, const std::string& subcommand,
                        const RunConfig& cfg, const std::vector<std::string>& inputs,
                        const std::vector<std::pair<std::string, std::string>>& extra = {});

extern const char* const kVersion;

}  // namespace capfor

#endif  // CAPFOR_CONFIG_HPP
