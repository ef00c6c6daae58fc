#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ember/workload.hpp"

namespace ember {

enum class FetchTier { OpCache, L1I, L2 };

std::string_view to_string(FetchTier tier);

/// Per memory level parameters of the analytical model (L1, L2, L3, RAM).
struct LevelParams {
    double access_latency_cycles = 0.0;
    /// Visits per loop iteration the out-of-order engine hides completely.
    double max_outstanding = 0.0;
    double energy_per_access_nj = 0.0;
};

/// Parameters of the analytical machine model.
///
/// The defaults describe the reference machine: two sockets with 32 cores
/// each and three selectable P-states. Energies, cover capacities, latencies
/// and the EDC limit were fitted by a coarse grid search so that optimized
/// workloads show the qualitative behaviour of a real power stress test
/// (power grows with every memory level, the top P-state throttles).
struct MachineConfig {
    std::size_t cores = 64;
    std::vector<double> pstates_mhz{1500.0, 2200.0, 2500.0};
    /// Multiplier on dynamic energy per P-state; squared when applied.
    std::vector<double> voltage_scale{0.80, 0.92, 1.00};
    double decoder_width = 4.0;

    std::size_t opcache_capacity_sets = 960;
    std::size_t l1i_capacity_sets = 1600;
    std::size_t l2i_capacity_sets = 25600;

    /// Indexed by level - 1 (L1, L2, L3, RAM).
    std::array<LevelParams, 4> levels{{
        {1.828, 347.406, 3.22},
        {4.662, 321.768, 1.889},
        {257.5, 222.284, 3.454},
        {919.546, 120.743, 25.395},
    }};

    double energy_per_set_reg_nj = 1.113;
    double fetch_bonus_l1i_w = 12.0;
    double fetch_bonus_l2_w = 25.0;
    double static_power_w = 153.31;
    double edc_limit_w = 800.0;

    const LevelParams& level(MemoryLevel level) const;
    LevelParams& level(MemoryLevel level);

    /// Throws ConfigError naming the offending key.
    void validate() const;
};

class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& message);
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

/// Parses `key = value` lines (with `#` comments) on top of the reference
/// machine defaults.
MachineConfig parse_machine_config(std::string_view text);

/// Reads and parses a machine config file. Throws ConfigError with key
/// "<file>" when it cannot be read.
MachineConfig load_machine_config(const std::filesystem::path& path);

/// Default unroll factor for a machine: deep inside the L1-I tier.
std::size_t default_unroll(const MachineConfig& machine);

FetchTier classify_fetch_tier(std::size_t unroll, const MachineConfig& machine);

/// Visits one slot of `pattern` contributes to its level.
double pattern_visit_weight(AccessPattern pattern);

struct SimResult {
    double power_w = 0.0;
    double ipc = 0.0;
    double eff_freq_mhz = 0.0;
    double loop_iterations_per_s = 0.0;
    std::size_t eff_pstate_index = 0;
    FetchTier tier = FetchTier::OpCache;
};

/// Weighted visits per loop iteration for each level, indexed like
/// MachineConfig::levels.
std::array<double, 4> level_visits(const Schedule& schedule);

/// Stall cycles one loop iteration accumulates from uncovered memory visits.
double stall_cycles(const Schedule& schedule, const MachineConfig& machine);

/// Steady state of the schedule at one fixed P-state, without throttling.
SimResult evaluate_at_pstate(const Schedule& schedule, const InstructionSetDef& iset,
                             const MachineConfig& machine, std::size_t pstate_index);

/// Steady state including EDC throttling: while power exceeds the limit and
/// a lower P-state exists, the effective P-state steps down one notch.
/// Throws std::out_of_range for an invalid P-state index and
/// std::invalid_argument for an empty schedule.
SimResult simulate(const Schedule& schedule, const InstructionSetDef& iset, const MachineConfig& machine,
                   std::size_t pstate_index);

/// Something that can run a schedule and report its steady state. Native
/// backends would JIT the loop; this build ships the analytical simulator.
class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string name() const = 0;
    virtual std::size_t pstate_count() const = 0;
    virtual double pstate_mhz(std::size_t index) const = 0;
    virtual SimResult run(const Schedule& schedule, const InstructionSetDef& iset,
                          std::size_t pstate_index) const = 0;
};

class SimulatorBackend final : public Backend {
public:
    explicit SimulatorBackend(MachineConfig machine);

    std::string name() const override { return "simulator"; }
    std::size_t pstate_count() const override { return machine_.pstates_mhz.size(); }
    double pstate_mhz(std::size_t index) const override { return machine_.pstates_mhz.at(index); }
    SimResult run(const Schedule& schedule, const InstructionSetDef& iset,
                  std::size_t pstate_index) const override;

    const MachineConfig& machine() const { return machine_; }

private:
    MachineConfig machine_;
};

}  // namespace ember
