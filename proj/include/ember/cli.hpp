#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ember/machine_sim.hpp"
#include "ember/measurement.hpp"
#include "ember/metrics.hpp"
#include "ember/optimizer.hpp"
#include "ember/workload.hpp"

namespace ember {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 2,
    kExitMetricUnavailable = 3,
    kExitOptimizerFailure = 4,
};

enum class RunMode { Avail, Measure, Optimize };

struct RunPlan {
    RunMode mode = RunMode::Measure;
    /// Instruction set id; empty selects the first registered one.
    std::string function;
    std::optional<std::string> instruction_groups;
    std::optional<std::size_t> line_count;
    std::optional<std::string> machine_config;
    /// Defaults to the highest (nominal) P-state.
    std::optional<std::size_t> pstate;
    std::int64_t duration_s = 10;
    std::int64_t start_delta_ms = kDefaultStartDeltaMs;
    std::int64_t stop_delta_ms = kDefaultStopDeltaMs;
    std::int64_t preheat_s = 240;
    OptimizerParams optimizer;
    std::vector<std::string> metrics{"power", "perf-ipc"};
    std::optional<std::string> metric_command;
    std::string log_file = "ember-optimize.log";
    std::optional<std::string> csv_output;
};

/// Sampling period of the simulated backend metrics (20 samples per second).
inline constexpr std::int64_t kBackendSamplePeriodMs = 50;

/// One id per line, in registration order.
std::string list_available(const InstructionSetRegistry& registry);

/// Runs a workload on a backend and reduces the configured metrics to one
/// windowed mean each. Safe to use from several threads as long as the
/// metrics are.
class WorkloadRunner {
public:
    WorkloadRunner(const Backend& backend, const InstructionSetDef& iset, std::size_t unroll,
                   std::size_t pstate_index, const MetricRegistry& metrics, MeasurementWindow window,
                   std::int64_t sample_period_ms = kBackendSamplePeriodMs);

    struct Outcome {
        SimResult result;
        std::vector<SummaryRow> rows;
    };

    /// Throws MetricUnavailable when a metric has no samples in the window.
    Outcome run(const AccessSet& accesses, const std::vector<std::string>& metric_names) const;

    /// Objectives are the windowed means of `metric_names`; an unavailable
    /// metric yields an invalid individual with NaN objectives.
    Individual evaluate(const Genome& genome, const GenomeSpace& space,
                        const std::vector<std::string>& metric_names) const;

    std::size_t unroll() const { return unroll_; }

private:
    const Backend& backend_;
    const InstructionSetDef& iset_;
    std::size_t unroll_;
    std::size_t pstate_;
    const MetricRegistry& metrics_;
    MeasurementWindow window_;
    std::int64_t period_ms_;
};

/// Parses command-line flags into a plan. Returns nullopt after printing
/// help (exit code 0) or a usage error (exit code 2) to the given streams;
/// `exit_code` receives the code in that case.
std::optional<RunPlan> parse_command_line(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
                                          int& exit_code);

int run_measure(const RunPlan& plan, const InstructionSetRegistry& registry, std::ostream& out, std::ostream& err);

int run_optimize(const RunPlan& plan, const InstructionSetRegistry& registry, std::ostream& out, std::ostream& err);

/// Full command-line entry point with the builtin instruction sets.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ember
