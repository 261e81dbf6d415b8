#include "ldreg/config.hpp"

#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ldreg/errors.hpp"

namespace ldreg {

namespace {

std::string trim(const std::string &s) {
    const size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos)
        return "";
    const size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double parse_double(const std::string &key, const std::string &value) {
    size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &pos);
    } catch (const std::exception &) {
        throw ValidationError("config key " + key + ": '" + value + "' is not a number");
    }
    if (pos != value.size())
        throw ValidationError("config key " + key + ": '" + value + "' is not a number");
    return v;
}

int64_t parse_int(const std::string &key, const std::string &value) {
    size_t pos = 0;
    long long v = 0;
    try {
        v = std::stoll(value, &pos);
    } catch (const std::exception &) {
        throw ValidationError("config key " + key + ": '" + value + "' is not an integer");
    }
    if (pos != value.size())
        throw ValidationError("config key " + key + ": '" + value + "' is not an integer");
    return v;
}

bool parse_bool(const std::string &key, const std::string &value) {
    if (value == "1" || value == "true")
        return true;
    if (value == "0" || value == "false")
        return false;
    throw ValidationError("config key " + key + ": '" + value + "' is not a boolean (0/1)");
}

std::vector<std::string> split(const std::string &s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep))
        out.push_back(trim(item));
    return out;
}

template <size_t N>
std::array<int64_t, N> parse_int_array(const std::string &key, const std::string &value) {
    const std::vector<std::string> parts = split(value, ',');
    if (parts.size() != N)
        throw ValidationError("config key " + key + ": expected " + std::to_string(N) +
                              " comma-separated integers");
    std::array<int64_t, N> out{};
    for (size_t i = 0; i < N; ++i)
        out[i] = parse_int(key, parts[i]);
    return out;
}

std::vector<StageBlock> parse_schedule(const std::string &key, const std::string &value) {
    std::vector<StageBlock> out;
    for (const std::string &part : split(value, ',')) {
        const size_t colon = part.find(':');
        if (colon == std::string::npos)
            throw ValidationError("config key " + key +
                                  ": blocks are 'active:steps' pairs, got '" + part + "'");
        out.push_back({parse_int(key, trim(part.substr(0, colon))),
                       parse_int(key, trim(part.substr(colon + 1)))});
    }
    return out;
}

void append(std::string &out, const char *fmt, ...) {
    char buf[256];
    va_list ap;
    va_start(ap, fmt);
    std::vsnprintf(buf, sizeof buf, fmt, ap);
    va_end(ap);
    out += buf;
}

// fetches kv[key] if present, marking it consumed
const std::string *take(const std::map<std::string, std::string> &kv,
                        std::set<std::string> &consumed, const std::string &key) {
    const auto it = kv.find(key);
    if (it == kv.end())
        return nullptr;
    consumed.insert(key);
    return &it->second;
}

} // namespace

std::map<std::string, std::string> parse_config_text(const std::string &text) {
    std::map<std::string, std::string> kv;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos)
            line = line.substr(0, hash);
        line = trim(line);
        if (line.empty())
            continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config line " + std::to_string(lineno) +
                                  ": expected key=value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty())
            throw ValidationError("config line " + std::to_string(lineno) + ": empty key");
        kv[key] = trim(line.substr(eq + 1));
    }
    return kv;
}

std::map<std::string, std::string> load_config_file(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good())
        throw DataError("cannot open config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

void apply_train_keys(TrainConfig &cfg, const std::map<std::string, std::string> &kv,
                      std::set<std::string> &consumed) {
    if (const auto *v = take(kv, consumed, "seed"))
        cfg.seed = static_cast<uint64_t>(parse_int("seed", *v));
    if (const auto *v = take(kv, consumed, "learning_rate"))
        cfg.learning_rate = parse_double("learning_rate", *v);
    if (const auto *v = take(kv, consumed, "batch_size"))
        cfg.batch_size = parse_int("batch_size", *v);
    if (const auto *v = take(kv, consumed, "smooth")) {
        if (*v == "l1")
            cfg.smooth = SmoothKind::L1;
        else if (*v == "l2")
            cfg.smooth = SmoothKind::L2;
        else
            throw ValidationError("config key smooth: '" + *v + "' is not l1 or l2");
    }
    if (const auto *v = take(kv, consumed, "adam_beta1"))
        cfg.adam_beta1 = parse_double("adam_beta1", *v);
    if (const auto *v = take(kv, consumed, "adam_beta2"))
        cfg.adam_beta2 = parse_double("adam_beta2", *v);
    if (const auto *v = take(kv, consumed, "adam_epsilon"))
        cfg.adam_epsilon = parse_double("adam_epsilon", *v);
    if (const auto *v = take(kv, consumed, "weights.lambda"))
        cfg.weights.lambda = parse_double("weights.lambda", *v);
    if (const auto *v = take(kv, consumed, "weights.alpha"))
        cfg.weights.alpha = parse_double("weights.alpha", *v);
    if (const auto *v = take(kv, consumed, "weights.beta"))
        cfg.weights.beta = parse_double("weights.beta", *v);
    if (const auto *v = take(kv, consumed, "schedule"))
        cfg.stage_schedule = parse_schedule("schedule", *v);
    if (const auto *v = take(kv, consumed, "network.in_shape"))
        cfg.network.in_shape = parse_int_array<3>("network.in_shape", *v);
    if (const auto *v = take(kv, consumed, "network.channels"))
        cfg.network.channels = parse_int_array<4>("network.channels", *v);
    if (const auto *v = take(kv, consumed, "network.leaky_slope"))
        cfg.network.leaky_slope = static_cast<float>(parse_double("network.leaky_slope", *v));
    if (const auto *v = take(kv, consumed, "network.norm_epsilon"))
        cfg.network.norm_epsilon = static_cast<float>(parse_double("network.norm_epsilon", *v));
    if (const auto *v = take(kv, consumed, "network.use_refine_core"))
        cfg.network.use_refine_core = parse_bool("network.use_refine_core", *v);
    if (const auto *v = take(kv, consumed, "network.use_rigid"))
        cfg.network.use_rigid = parse_bool("network.use_rigid", *v);
    if (const auto *v = take(kv, consumed, "network.final_fusion"))
        cfg.network.final_fusion = parse_bool("network.final_fusion", *v);
    if (const auto *v = take(kv, consumed, "network.refine_width"))
        cfg.network.refine_width = parse_int("network.refine_width", *v);
    if (const auto *v = take(kv, consumed, "network.coarse_head_width"))
        cfg.network.coarse_head_width = parse_int("network.coarse_head_width", *v);
    if (const auto *v = take(kv, consumed, "network.fusion_kernel"))
        cfg.network.fusion_kernel = static_cast<int>(parse_int("network.fusion_kernel", *v));
    if (const auto *v = take(kv, consumed, "network.fc_widths"))
        cfg.network.fc_widths = parse_int_array<2>("network.fc_widths", *v);
}

void apply_synth_keys(SynthConfig &cfg, const std::map<std::string, std::string> &kv,
                      std::set<std::string> &consumed) {
    if (const auto *v = take(kv, consumed, "synth.shape"))
        cfg.shape = parse_int_array<3>("synth.shape", *v);
    if (const auto *v = take(kv, consumed, "synth.max_displacement"))
        cfg.max_displacement = parse_double("synth.max_displacement", *v);
    if (const auto *v = take(kv, consumed, "synth.smoothness_sigma"))
        cfg.smoothness_sigma = parse_double("synth.smoothness_sigma", *v);
    if (const auto *v = take(kv, consumed, "synth.rigid_angle_range"))
        cfg.rigid_angle_range = parse_double("synth.rigid_angle_range", *v);
    if (const auto *v = take(kv, consumed, "synth.rigid_shift_range"))
        cfg.rigid_shift_range = parse_double("synth.rigid_shift_range", *v);
    if (const auto *v = take(kv, consumed, "synth.noise_sigma"))
        cfg.noise_sigma = parse_double("synth.noise_sigma", *v);
    if (const auto *v = take(kv, consumed, "synth.seed"))
        cfg.seed = static_cast<uint64_t>(parse_int("synth.seed", *v));
}

std::string render_train_config(const TrainConfig &cfg) {
    std::string out;
    append(out, "seed=%llu\n", static_cast<unsigned long long>(cfg.seed));
    append(out, "learning_rate=%.17g\n", cfg.learning_rate);
    append(out, "batch_size=%lld\n", static_cast<long long>(cfg.batch_size));
    append(out, "smooth=%s\n", cfg.smooth == SmoothKind::L1 ? "l1" : "l2");
    append(out, "adam_beta1=%.17g\n", cfg.adam_beta1);
    append(out, "adam_beta2=%.17g\n", cfg.adam_beta2);
    append(out, "adam_epsilon=%.17g\n", cfg.adam_epsilon);
    append(out, "weights.lambda=%.17g\n", cfg.weights.lambda);
    append(out, "weights.alpha=%.17g\n", cfg.weights.alpha);
    append(out, "weights.beta=%.17g\n", cfg.weights.beta);
    out += "schedule=";
    for (size_t i = 0; i < cfg.stage_schedule.size(); ++i)
        append(out, "%s%lld:%lld", i ? "," : "",
               static_cast<long long>(cfg.stage_schedule[i].active_stages),
               static_cast<long long>(cfg.stage_schedule[i].steps));
    out += "\n";
    append(out, "network.in_shape=%lld,%lld,%lld\n",
           static_cast<long long>(cfg.network.in_shape[0]),
           static_cast<long long>(cfg.network.in_shape[1]),
           static_cast<long long>(cfg.network.in_shape[2]));
    append(out, "network.channels=%lld,%lld,%lld,%lld\n",
           static_cast<long long>(cfg.network.channels[0]),
           static_cast<long long>(cfg.network.channels[1]),
           static_cast<long long>(cfg.network.channels[2]),
           static_cast<long long>(cfg.network.channels[3]));
    append(out, "network.leaky_slope=%.9g\n", static_cast<double>(cfg.network.leaky_slope));
    append(out, "network.norm_epsilon=%.9g\n", static_cast<double>(cfg.network.norm_epsilon));
    append(out, "network.use_refine_core=%d\n", cfg.network.use_refine_core ? 1 : 0);
    append(out, "network.use_rigid=%d\n", cfg.network.use_rigid ? 1 : 0);
    append(out, "network.final_fusion=%d\n", cfg.network.final_fusion ? 1 : 0);
    append(out, "network.refine_width=%lld\n", static_cast<long long>(cfg.network.refine_width));
    append(out, "network.coarse_head_width=%lld\n",
           static_cast<long long>(cfg.network.coarse_head_width));
    append(out, "network.fusion_kernel=%d\n", cfg.network.fusion_kernel);
    append(out, "network.fc_widths=%lld,%lld\n", static_cast<long long>(cfg.network.fc_widths[0]),
           static_cast<long long>(cfg.network.fc_widths[1]));
    return out;
}

std::string render_synth_config(const SynthConfig &cfg) {
    std::string out;
    append(out, "synth.shape=%lld,%lld,%lld\n", static_cast<long long>(cfg.shape[0]),
           static_cast<long long>(cfg.shape[1]), static_cast<long long>(cfg.shape[2]));
    append(out, "synth.max_displacement=%.17g\n", cfg.max_displacement);
    append(out, "synth.smoothness_sigma=%.17g\n", cfg.smoothness_sigma);
    append(out, "synth.rigid_angle_range=%.17g\n", cfg.rigid_angle_range);
    append(out, "synth.rigid_shift_range=%.17g\n", cfg.rigid_shift_range);
    append(out, "synth.noise_sigma=%.17g\n", cfg.noise_sigma);
    append(out, "synth.seed=%llu\n", static_cast<unsigned long long>(cfg.seed));
    return out;
}

} // namespace ldreg
