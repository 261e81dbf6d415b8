#ifndef LDREG_CONFIG_HPP
#define LDREG_CONFIG_HPP

#include <map>
#include <set>
#include <string>

#include "ldreg/data.hpp"
#include "ldreg/training.hpp"

namespace ldreg {

inline constexpr const char *kToolkitVersion = "0.1.0";

// Configuration files are plain "key=value" lines with dotted sections
// ("weights.alpha=10"). '#' starts a comment, blank lines are skipped,
// and a repeated key keeps the last value.
std::map<std::string, std::string> parse_config_text(const std::string &text);
std::map<std::string, std::string> load_config_file(const std::string &path);

// Appliers overwrite the fields named by the keys they understand and
// report those keys in `consumed`; commands reject any key left over.
// Malformed values throw ValidationError naming the key.
void apply_train_keys(TrainConfig &cfg, const std::map<std::string, std::string> &kv,
                      std::set<std::string> &consumed);
void apply_synth_keys(SynthConfig &cfg, const std::map<std::string, std::string> &kv,
                      std::set<std::string> &consumed);

// Canonical rendering of every TrainConfig field; parsing it back yields an
// identical config (same hash). Written next to checkpoints so inference
// runs can rebuild the exact network.
std::string render_train_config(const TrainConfig &cfg);
std::string render_synth_config(const SynthConfig &cfg);

} // namespace ldreg

#endif
