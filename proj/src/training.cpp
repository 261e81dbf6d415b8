#include "ldreg/training.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "ldreg/errors.hpp"
#include "ldreg/rng.hpp"

namespace ldreg {

namespace {

constexpr uint64_t kSaltPairOrder = 0x70616972ull; // "pair"
constexpr char kCkptMagic[8] = {'L', 'D', 'C', 'K', 'P', 'T', '1', '\0'};
constexpr uint32_t kCkptVersion = 1;

uint64_t fnv1a(const std::string &s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

void append(std::string &s, const char *fmt, ...) {
    char buf[128];
    va_list ap;
    va_start(ap, fmt);
    vsnprintf(buf, sizeof buf, fmt, ap);
    va_end(ap);
    s += buf;
}

// Deterministic pair order: every epoch is an independent salted shuffle, so
// a resumed run can rebuild the stream from the consumed-pair count alone.
std::vector<size_t> epoch_order(size_t n, uint64_t seed, uint64_t epoch) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(Rng::mix(seed, kSaltPairOrder + epoch));
    rng.shuffle(order);
    return order;
}

Checkpoint snapshot(uint64_t step, uint64_t config_hash, const ParamStore &params,
                    const ParamStore &m, const ParamStore &v) {
    Checkpoint c;
    c.step = step;
    c.config_hash = config_hash;
    c.params = params;
    c.adam_m = m;
    c.adam_v = v;
    return c;
}

template <typename T> void put(std::ofstream &f, const T &v) {
    f.write(reinterpret_cast<const char *>(&v), sizeof v);
}

template <typename T> T take(std::ifstream &f, const char *what) {
    T v{};
    f.read(reinterpret_cast<char *>(&v), sizeof v);
    if (!f)
        throw FormatError(std::string("checkpoint truncated while reading ") + what);
    return v;
}

void put_store(std::ofstream &f, const ParamStore &store) {
    put<uint64_t>(f, store.size());
    for (const auto &[key, t] : store) {
        put<uint32_t>(f, static_cast<uint32_t>(key.size()));
        f.write(key.data(), static_cast<std::streamsize>(key.size()));
        put<uint32_t>(f, static_cast<uint32_t>(t.rank()));
        for (size_t i = 0; i < t.rank(); ++i)
            put<int64_t>(f, t.dim(i));
        f.write(reinterpret_cast<const char *>(t.data()),
                static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(t.numel())));
    }
}

ParamStore take_store(std::ifstream &f, const char *what) {
    ParamStore store;
    const auto n = take<uint64_t>(f, what);
    for (uint64_t i = 0; i < n; ++i) {
        const auto klen = take<uint32_t>(f, what);
        std::string key(klen, '\0');
        f.read(key.data(), klen);
        if (!f)
            throw FormatError(std::string("checkpoint truncated while reading ") + what);
        const auto rank = take<uint32_t>(f, what);
        if (rank < 1 || rank > 5)
            throw FormatError("checkpoint entry " + key + " has invalid rank");
        std::vector<int64_t> shape(rank);
        for (auto &d : shape) {
            d = take<int64_t>(f, what);
            if (d < 1)
                throw FormatError("checkpoint entry " + key + " has invalid shape");
        }
        Tensor t(shape);
        f.read(reinterpret_cast<char *>(t.data()),
               static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(t.numel())));
        if (!f)
            throw FormatError("checkpoint truncated inside tensor " + key);
        store.emplace(std::move(key), std::move(t));
    }
    return store;
}

void check_store_alignment(const ParamStore &params, const ParamStore &other,
                           const char *label) {
    if (params.size() != other.size())
        throw FormatError(std::string("checkpoint ") + label +
                          " store does not mirror the parameter store");
    auto it = other.begin();
    for (const auto &[key, t] : params) {
        if (it->first != key)
            throw FormatError(std::string("checkpoint ") + label + " missing key " + key);
        if (!it->second.same_shape(t))
            throw FormatError(std::string("checkpoint ") + label + " shape mismatch for " + key);
        ++it;
    }
}

} // namespace

std::vector<StageBlock> stage_schedule_default(int64_t num_stages, int64_t steps_per_stage) {
    if (num_stages < 1)
        throw ValidationError("stage_schedule_default needs num_stages >= 1");
    if (steps_per_stage < 1)
        throw ValidationError("stage_schedule_default needs steps_per_stage >= 1");
    std::vector<StageBlock> schedule;
    for (int64_t s = 1; s <= num_stages; ++s)
        schedule.push_back({s, steps_per_stage});
    return schedule;
}

int64_t schedule_total_steps(const std::vector<StageBlock> &schedule) {
    int64_t total = 0;
    for (const StageBlock &b : schedule)
        total += b.steps;
    return total;
}

int64_t active_stages_at(const std::vector<StageBlock> &schedule, int64_t step) {
    if (schedule.empty())
        throw ValidationError("empty stage schedule");
    int64_t begin = 0;
    for (const StageBlock &b : schedule) {
        if (step < begin + b.steps)
            return b.active_stages;
        begin += b.steps;
    }
    return schedule.back().active_stages;
}

void TrainConfig::validate() const {
    network.validate();
    weights.validate();
    if (!(learning_rate > 0.0))
        throw ValidationError("learning_rate must be > 0");
    if (batch_size < 1)
        throw ValidationError("batch_size must be >= 1");
    if (stage_schedule.empty())
        throw ValidationError("stage_schedule must not be empty");
    int64_t prev = 0;
    for (const StageBlock &b : stage_schedule) {
        if (b.steps < 1)
            throw ValidationError("stage_schedule blocks need steps >= 1");
        if (b.active_stages < 1 || b.active_stages > 5)
            throw ValidationError("active_stages must be in [1,5]");
        if (b.active_stages < prev)
            throw ValidationError("stage_schedule must never deactivate a stage");
        prev = b.active_stages;
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw ValidationError("Adam moment decays must lie in [0,1)");
    if (!(adam_epsilon > 0.0))
        throw ValidationError("adam_epsilon must be > 0");
}

uint64_t TrainConfig::hash() const {
    std::string s;
    append(s, "lr=%.17g;l=%.17g;a=%.17g;b=%.17g;", learning_rate, weights.lambda, weights.alpha,
           weights.beta);
    append(s, "smooth=%d;batch=%" PRId64 ";seed=%" PRIu64 ";", static_cast<int>(smooth),
           batch_size, seed);
    append(s, "b1=%.17g;b2=%.17g;eps=%.17g;", adam_beta1, adam_beta2, adam_epsilon);
    s += "sched=";
    for (const StageBlock &b : stage_schedule)
        append(s, "%" PRId64 ":%" PRId64 ",", b.active_stages, b.steps);
    append(s, ";net=%" PRId64 "x%" PRId64 "x%" PRId64 ";", network.in_shape[0],
           network.in_shape[1], network.in_shape[2]);
    for (const int64_t c : network.channels)
        append(s, "c%" PRId64 ",", c);
    append(s, ";slope=%.9g;eps2=%.9g;rc=%d;rigid=%d;fusion=%d;", network.leaky_slope,
           network.norm_epsilon, network.use_refine_core ? 1 : 0, network.use_rigid ? 1 : 0,
           network.final_fusion ? 1 : 0);
    append(s, "rw=%" PRId64 ";cw=%" PRId64 ";fk=%d;fc=%" PRId64 ",%" PRId64, network.refine_width,
           network.coarse_head_width, network.fusion_kernel, network.fc_widths[0],
           network.fc_widths[1]);
    return fnv1a(s);
}

std::vector<LossStageInput> stage_inputs(const StageOutputs &out, int64_t active_stages) {
    std::vector<LossStageInput> stages;
    for (size_t s = 0; s < 4; ++s)
        stages.push_back({out.pooled_fixed[3 - s], out.warped_stage[s], out.fields[s],
                          static_cast<int64_t>(s) < active_stages});
    stages.push_back({out.fixed_full, out.warped_full(), out.phi0(), active_stages > 4});
    return stages;
}

namespace {

TrainResult run_train(const TrainConfig &cfg, const std::vector<TrainPair> &pairs,
                      const Checkpoint *resume, int64_t step_limit) {
    cfg.validate();
    if (pairs.empty())
        throw ValidationError("train requires at least one pair");
    for (const TrainPair &p : pairs) {
        if (p.fixed.rank() != 3 || !p.fixed.same_shape(p.moving))
            throw ValidationError("train pairs must be rank-3 volumes of equal shape");
        for (size_t a = 0; a < 3; ++a)
            if (p.fixed.dim(a) != cfg.network.in_shape[a])
                throw ValidationError("train pair shape " + p.fixed.shape_str() +
                                      " does not match the configured in_shape");
    }

    const uint64_t config_hash = cfg.hash();
    ParamStore params, m, v;
    int64_t start_step = 0;
    if (resume) {
        if (resume->config_hash != config_hash)
            throw ValidationError("checkpoint was produced under a different train config");
        const ParamStore want = init_params(cfg.network, cfg.seed);
        if (want.size() != resume->params.size())
            throw ValidationError("checkpoint parameter set does not match the model");
        for (const auto &[key, t] : want) {
            const auto it = resume->params.find(key);
            if (it == resume->params.end())
                throw ValidationError("checkpoint missing parameter " + key);
            if (!it->second.same_shape(t))
                throw ValidationError("checkpoint shape mismatch for " + key);
        }
        params = resume->params;
        m = resume->adam_m;
        v = resume->adam_v;
        start_step = static_cast<int64_t>(resume->step);
    } else {
        params = init_params(cfg.network, cfg.seed);
        for (const auto &[key, t] : params) {
            m.emplace(key, Tensor(t.shape()));
            v.emplace(key, Tensor(t.shape()));
        }
    }

    int64_t total_steps = schedule_total_steps(cfg.stage_schedule);
    if (start_step > total_steps)
        throw ValidationError("checkpoint step lies beyond the schedule");
    if (step_limit >= 0)
        total_steps = std::min(total_steps, start_step + step_limit);

    TrainResult result;
    const size_t n = pairs.size();
    uint64_t consumed = static_cast<uint64_t>(start_step) * static_cast<uint64_t>(cfg.batch_size);
    uint64_t epoch = consumed / n;
    size_t offset = static_cast<size_t>(consumed % n);
    std::vector<size_t> order = epoch_order(n, cfg.seed, epoch);

    for (int64_t step = start_step; step < total_steps; ++step) {
        const int64_t active = active_stages_at(cfg.stage_schedule, step);
        ParamStore grad_acc;
        LossReport step_report;
        bool bad = false;

        for (int64_t b = 0; b < cfg.batch_size && !bad; ++b) {
            const size_t idx = order[offset];
            if (++offset == n) {
                offset = 0;
                order = epoch_order(n, cfg.seed, ++epoch);
            }
            Graph g;
            const BoundParams bp = bind_params(g, params);
            const StageOutputs out =
                forward(g, cfg.network, bp, pairs[idx].fixed, pairs[idx].moving);
            LossReport rep;
            const Var loss = total_loss(g, stage_inputs(out, active), cfg.weights, cfg.smooth, rep);
            if (!std::isfinite(rep.total)) {
                bad = true;
                break;
            }
            g.backward(loss);
            for (const auto &[key, var] : bp.vars) {
                const Tensor &grad = g.grad(var);
                if (grad.empty())
                    continue;
                auto it = grad_acc.find(key);
                if (it == grad_acc.end())
                    it = grad_acc.emplace(key, Tensor(grad.shape())).first;
                Tensor &acc = it->second;
                for (int64_t i = 0; i < grad.numel(); ++i)
                    acc[i] += grad[i];
            }
            if (b == 0) {
                step_report = rep;
            } else {
                step_report.total += rep.total;
                for (size_t s = 0; s < rep.stages.size(); ++s) {
                    step_report.stages[s].sim += rep.stages[s].sim;
                    step_report.stages[s].range += rep.stages[s].range;
                    step_report.stages[s].smooth += rep.stages[s].smooth;
                }
            }
        }
        if (bad) {
            result.diverged = true;
            result.diverged_at = static_cast<uint64_t>(step);
            result.checkpoint = snapshot(static_cast<uint64_t>(step), config_hash, params, m, v);
            return result;
        }
        if (cfg.batch_size > 1) {
            const double inv = 1.0 / static_cast<double>(cfg.batch_size);
            step_report.total *= inv;
            for (StageLoss &s : step_report.stages) {
                s.sim *= inv;
                s.range *= inv;
                s.smooth *= inv;
            }
        }

        // Adam; per-element math in double, state stored as float
        const double t = static_cast<double>(step + 1);
        const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
        const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
        const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
        for (auto &[key, p] : params) {
            const auto git = grad_acc.find(key);
            Tensor &mk = m.at(key);
            Tensor &vk = v.at(key);
            for (int64_t i = 0; i < p.numel(); ++i) {
                const double g = git == grad_acc.end()
                                     ? 0.0
                                     : static_cast<double>(git->second[i]) * inv_batch;
                const double md = cfg.adam_beta1 * mk[i] + (1.0 - cfg.adam_beta1) * g;
                const double vd = cfg.adam_beta2 * vk[i] + (1.0 - cfg.adam_beta2) * g * g;
                mk[i] = static_cast<float>(md);
                vk[i] = static_cast<float>(vd);
                p[i] -= static_cast<float>(cfg.learning_rate * (md / bc1) /
                                           (std::sqrt(vd / bc2) + cfg.adam_epsilon));
            }
        }
        result.history.push_back(std::move(step_report));
    }

    result.checkpoint =
        snapshot(static_cast<uint64_t>(total_steps), config_hash, params, m, v);
    return result;
}

} // namespace

TrainResult train(const TrainConfig &cfg, const std::vector<TrainPair> &pairs,
                  int64_t step_limit) {
    return run_train(cfg, pairs, nullptr, step_limit);
}

TrainResult train(const TrainConfig &cfg, const std::vector<TrainPair> &pairs,
                  const Checkpoint &resume, int64_t step_limit) {
    return run_train(cfg, pairs, &resume, step_limit);
}

void save_checkpoint(const Checkpoint &ckpt, const std::string &path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw DataError("cannot open checkpoint for writing: " + path);
    f.write(kCkptMagic, sizeof kCkptMagic);
    put<uint32_t>(f, kCkptVersion);
    put<uint64_t>(f, ckpt.step);
    put<uint64_t>(f, ckpt.config_hash);
    put_store(f, ckpt.params);
    put_store(f, ckpt.adam_m);
    put_store(f, ckpt.adam_v);
    if (!f)
        throw DataError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw DataError("cannot open checkpoint: " + path);
    char magic[sizeof kCkptMagic];
    f.read(magic, sizeof magic);
    if (!f || std::memcmp(magic, kCkptMagic, sizeof magic) != 0)
        throw FormatError("not a checkpoint file: " + path);
    const auto version = take<uint32_t>(f, "version");
    if (version != kCkptVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    c.step = take<uint64_t>(f, "step");
    c.config_hash = take<uint64_t>(f, "config hash");
    c.params = take_store(f, "params");
    c.adam_m = take_store(f, "adam_m");
    c.adam_v = take_store(f, "adam_v");
    check_store_alignment(c.params, c.adam_m, "adam_m");
    check_store_alignment(c.params, c.adam_v, "adam_v");
    return c;
}

void write_history_csv(const std::string &path, const std::vector<LossReport> &history,
                       uint64_t first_step) {
    std::ofstream f(path, std::ios::trunc);
    if (!f)
        throw DataError("cannot open history CSV for writing: " + path);
    size_t num_stages = 0;
    for (const LossReport &r : history)
        num_stages = std::max(num_stages, r.stages.size());
    f << "step,total";
    for (size_t s = 0; s < num_stages; ++s)
        f << ",s" << s << "_sim,s" << s << "_range,s" << s << "_smooth";
    f << "\n";
    char buf[64];
    const auto put_val = [&](double v) {
        snprintf(buf, sizeof buf, ",%.17g", v);
        f << buf;
    };
    for (size_t i = 0; i < history.size(); ++i) {
        f << (first_step + i);
        put_val(history[i].total);
        for (size_t s = 0; s < num_stages; ++s) {
            const StageLoss sl =
                s < history[i].stages.size() ? history[i].stages[s] : StageLoss{};
            put_val(sl.sim);
            put_val(sl.range);
            put_val(sl.smooth);
        }
        f << "\n";
    }
    if (!f)
        throw DataError("history CSV write failed: " + path);
}

} // namespace ldreg
