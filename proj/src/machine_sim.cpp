#include "ember/machine_sim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace ember {

namespace {

constexpr std::array<std::string_view, 4> kLevelSuffixes{"l1", "l2", "l3", "ram"};

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

double parse_double(const std::string& key, std::string_view text) {
    text = trim(text);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) {
        throw ConfigError(key, "expected a number, got '" + std::string(text) + "'");
    }
    return value;
}

std::size_t parse_size(const std::string& key, std::string_view text) {
    text = trim(text);
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
        throw ConfigError(key, "expected a non-negative integer, got '" + std::string(text) + "'");
    }
    return value;
}

std::vector<double> parse_list(const std::string& key, std::string_view text) {
    std::vector<double> values;
    std::size_t offset = 0;
    while (true) {
        const auto comma = text.find(',', offset);
        values.push_back(parse_double(key, text.substr(offset, comma == std::string_view::npos
                                                                   ? std::string_view::npos
                                                                   : comma - offset)));
        if (comma == std::string_view::npos) {
            break;
        }
        offset = comma + 1;
    }
    return values;
}

using Setter = std::function<void(MachineConfig&, const std::string&, std::string_view)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        t["cores"] = [](MachineConfig& m, const std::string& k, std::string_view v) { m.cores = parse_size(k, v); };
        t["pstates_mhz"] = [](MachineConfig& m, const std::string& k, std::string_view v) {
            m.pstates_mhz = parse_list(k, v);
        };
        t["voltage_scale"] = [](MachineConfig& m, const std::string& k, std::string_view v) {
            m.voltage_scale = parse_list(k, v);
        };
        t["decoder_width"] = [](MachineConfig& m, const std::string& k, std::string_view v) {
            m.decoder_width = parse_double(k, v);
        };
        t["opcache_capacity_sets"] = [](MachineConfig& m, const std::string& k, std::string_view v) {
            m.opcache_capacity_sets = parse_size(k, v);
        };
        t["l1i_capacity_sets"] = [](MachineConfig& m, const std::string& k, std::string_view v) {
            m.l1i_capacity_sets = parse_size(k, v);
        };
        t["l2i_capacity_sets"] = [](MachineConfig& m, const std::string& k, std::string_view v) {
            m.l2i_capacity_sets = parse_size(k, v);
        };
        t["energy_per_set_reg_nj"] = [](MachineConfig& m, const std::string& k, std::string_view v) {
            m.energy_per_set_reg_nj = parse_double(k, v);
        };
        t["fetch_tier_power_bonus_w.l1i"] = [](MachineConfig& m, const std::string& k, std::string_view v) {
            m.fetch_bonus_l1i_w = parse_double(k, v);
        };
        t["fetch_tier_power_bonus_w.l2"] = [](MachineConfig& m, const std::string& k, std::string_view v) {
            m.fetch_bonus_l2_w = parse_double(k, v);
        };
        t["static_power_w"] = [](MachineConfig& m, const std::string& k, std::string_view v) {
            m.static_power_w = parse_double(k, v);
        };
        t["edc_limit_w"] = [](MachineConfig& m, const std::string& k, std::string_view v) {
            m.edc_limit_w = parse_double(k, v);
        };
        for (std::size_t i = 0; i < kLevelSuffixes.size(); ++i) {
            const auto suffix = std::string(".") + std::string(kLevelSuffixes[i]);
            t["access_latency_cycles" + suffix] = [i](MachineConfig& m, const std::string& k, std::string_view v) {
                m.levels[i].access_latency_cycles = parse_double(k, v);
            };
            t["max_outstanding" + suffix] = [i](MachineConfig& m, const std::string& k, std::string_view v) {
                m.levels[i].max_outstanding = parse_double(k, v);
            };
            t["energy_per_access_nj" + suffix] = [i](MachineConfig& m, const std::string& k, std::string_view v) {
                m.levels[i].energy_per_access_nj = parse_double(k, v);
            };
        }
        return t;
    }();
    return table;
}

std::size_t level_index(MemoryLevel level) {
    if (level == MemoryLevel::Reg) {
        throw std::invalid_argument("registers have no level parameters");
    }
    return static_cast<std::size_t>(level) - 1;
}

}  // namespace

std::string_view to_string(FetchTier tier) {
    switch (tier) {
        case FetchTier::OpCache: return "opcache";
        case FetchTier::L1I: return "l1i";
        case FetchTier::L2: return "l2";
    }
    return "?";
}

ConfigError::ConfigError(std::string key, const std::string& message)
    : std::runtime_error(key + ": " + message), key_(std::move(key)) {}

const LevelParams& MachineConfig::level(MemoryLevel l) const { return levels[level_index(l)]; }
LevelParams& MachineConfig::level(MemoryLevel l) { return levels[level_index(l)]; }

void MachineConfig::validate() const {
    if (cores == 0) {
        throw ConfigError("cores", "must be positive");
    }
    if (pstates_mhz.empty()) {
        throw ConfigError("pstates_mhz", "needs at least one P-state");
    }
    for (std::size_t i = 0; i < pstates_mhz.size(); ++i) {
        if (pstates_mhz[i] <= 0.0 || (i > 0 && pstates_mhz[i] <= pstates_mhz[i - 1])) {
            throw ConfigError("pstates_mhz", "must be positive and strictly increasing");
        }
    }
    if (voltage_scale.size() != pstates_mhz.size()) {
        throw ConfigError("voltage_scale", "needs one entry per P-state");
    }
    if (std::any_of(voltage_scale.begin(), voltage_scale.end(), [](double v) { return v <= 0.0; })) {
        throw ConfigError("voltage_scale", "entries must be positive");
    }
    if (decoder_width <= 0.0) {
        throw ConfigError("decoder_width", "must be positive");
    }
    if (!(opcache_capacity_sets < l1i_capacity_sets)) {
        throw ConfigError("l1i_capacity_sets", "must exceed opcache_capacity_sets");
    }
    if (!(l1i_capacity_sets < l2i_capacity_sets)) {
        throw ConfigError("l2i_capacity_sets", "must exceed l1i_capacity_sets");
    }
    for (std::size_t i = 0; i < levels.size(); ++i) {
        const auto suffix = "." + std::string(kLevelSuffixes[i]);
        if (levels[i].access_latency_cycles < 0.0) {
            throw ConfigError("access_latency_cycles" + suffix, "must not be negative");
        }
        if (levels[i].max_outstanding < 0.0) {
            throw ConfigError("max_outstanding" + suffix, "must not be negative");
        }
        if (levels[i].energy_per_access_nj < 0.0) {
            throw ConfigError("energy_per_access_nj" + suffix, "must not be negative");
        }
    }
    if (energy_per_set_reg_nj < 0.0) {
        throw ConfigError("energy_per_set_reg_nj", "must not be negative");
    }
    if (fetch_bonus_l1i_w < 0.0) {
        throw ConfigError("fetch_tier_power_bonus_w.l1i", "must not be negative");
    }
    if (fetch_bonus_l2_w < fetch_bonus_l1i_w) {
        throw ConfigError("fetch_tier_power_bonus_w.l2", "must not be below the l1i bonus");
    }
    if (static_power_w < 0.0) {
        throw ConfigError("static_power_w", "must not be negative");
    }
    if (edc_limit_w <= static_power_w) {
        throw ConfigError("edc_limit_w", "must exceed static_power_w");
    }
}

MachineConfig parse_machine_config(std::string_view text) {
    MachineConfig machine;
    std::set<std::string> seen;
    std::size_t line_no = 0;
    std::size_t offset = 0;
    while (offset <= text.size()) {
        const auto newline = text.find('\n', offset);
        auto line = text.substr(offset, newline == std::string_view::npos ? std::string_view::npos
                                                                          : newline - offset);
        offset = newline == std::string_view::npos ? text.size() + 1 : newline + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("line " + std::to_string(line_no), "expected 'key = value'");
        }
        const auto key = std::string(trim(line.substr(0, eq)));
        const auto value = trim(line.substr(eq + 1));
        const auto setter = setters().find(key);
        if (setter == setters().end()) {
            throw ConfigError(key, "unknown key");
        }
        if (!seen.insert(key).second) {
            throw ConfigError(key, "given more than once");
        }
        setter->second(machine, key, value);
    }
    machine.validate();
    return machine;
}

MachineConfig load_machine_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("<file>", "cannot read machine config " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_machine_config(buffer.str());
}

std::size_t default_unroll(const MachineConfig& machine) {
    return std::max(machine.opcache_capacity_sets + 1, machine.l1i_capacity_sets * 9 / 10);
}

FetchTier classify_fetch_tier(std::size_t unroll, const MachineConfig& machine) {
    if (unroll <= machine.opcache_capacity_sets) {
        return FetchTier::OpCache;
    }
    if (unroll <= machine.l1i_capacity_sets) {
        return FetchTier::L1I;
    }
    return FetchTier::L2;
}

double pattern_visit_weight(AccessPattern pattern) {
    switch (pattern) {
        case AccessPattern::Load: return 1.0;
        case AccessPattern::Store: return 1.0;
        case AccessPattern::LoadStore: return 2.0;
        case AccessPattern::TwoLoadStore: return 3.0;
        case AccessPattern::Prefetch: return 0.5;
    }
    return 0.0;
}

std::array<double, 4> level_visits(const Schedule& schedule) {
    std::array<double, 4> visits{};
    for (const auto& slot : schedule.slots) {
        if (!slot.is_register()) {
            visits[level_index(slot.level())] += pattern_visit_weight(*slot.pattern());
        }
    }
    return visits;
}

double stall_cycles(const Schedule& schedule, const MachineConfig& machine) {
    const auto visits = level_visits(schedule);
    double stall = 0.0;
    for (std::size_t i = 0; i < visits.size(); ++i) {
        stall += std::max(0.0, visits[i] - machine.levels[i].max_outstanding) * machine.levels[i].access_latency_cycles;
    }
    return stall;
}

SimResult evaluate_at_pstate(const Schedule& schedule, const InstructionSetDef& iset, const MachineConfig& machine,
                             std::size_t pstate_index) {
    if (pstate_index >= machine.pstates_mhz.size()) {
        throw std::out_of_range("P-state index " + std::to_string(pstate_index) + " out of range");
    }
    if (schedule.slots.empty()) {
        throw std::invalid_argument("cannot simulate an empty schedule");
    }
    const auto unroll = static_cast<double>(schedule.size());
    const auto instructions = unroll * iset.instructions_per_set;

    double cycles = instructions / machine.decoder_width;
    // sets beyond the L2 instruction capacity decode at half rate
    if (schedule.size() > machine.l2i_capacity_sets) {
        cycles += static_cast<double>(schedule.size() - machine.l2i_capacity_sets) * iset.instructions_per_set /
                  machine.decoder_width;
    }
    cycles += stall_cycles(schedule, machine);

    const auto visits = level_visits(schedule);
    double energy_nj = unroll * machine.energy_per_set_reg_nj;
    for (std::size_t i = 0; i < visits.size(); ++i) {
        energy_nj += visits[i] * machine.levels[i].energy_per_access_nj;
    }

    const auto freq_hz = machine.pstates_mhz[pstate_index] * 1e6;
    const auto voltage = machine.voltage_scale[pstate_index];
    const auto loops_per_s = freq_hz / cycles;
    const auto dynamic_per_core_w = voltage * voltage * loops_per_s * energy_nj * 1e-9;

    SimResult result;
    result.tier = classify_fetch_tier(schedule.size(), machine);
    double bonus = 0.0;
    if (result.tier == FetchTier::L1I) {
        bonus = machine.fetch_bonus_l1i_w;
    } else if (result.tier == FetchTier::L2) {
        bonus = machine.fetch_bonus_l2_w;
    }
    result.ipc = std::min(instructions / cycles, machine.decoder_width);
    result.power_w = machine.static_power_w + static_cast<double>(machine.cores) * dynamic_per_core_w + bonus;
    result.eff_freq_mhz = machine.pstates_mhz[pstate_index];
    result.eff_pstate_index = pstate_index;
    result.loop_iterations_per_s = loops_per_s;
    return result;
}

SimResult simulate(const Schedule& schedule, const InstructionSetDef& iset, const MachineConfig& machine,
                   std::size_t pstate_index) {
    auto result = evaluate_at_pstate(schedule, iset, machine, pstate_index);
    while (result.power_w > machine.edc_limit_w && result.eff_pstate_index > 0) {
        result = evaluate_at_pstate(schedule, iset, machine, result.eff_pstate_index - 1);
    }
    return result;
}

SimulatorBackend::SimulatorBackend(MachineConfig machine) : machine_(std::move(machine)) { machine_.validate(); }

SimResult SimulatorBackend::run(const Schedule& schedule, const InstructionSetDef& iset,
                                std::size_t pstate_index) const {
    return simulate(schedule, iset, machine_, pstate_index);
}

}  // namespace ember
