#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ember/machine_sim.hpp"
#include "ember/workload.hpp"

namespace ember {

struct MetricSample {
    std::int64_t timestamp_ms = 0;
    double value = 0.0;

    friend bool operator==(const MetricSample&, const MetricSample&) = default;
};

enum class MetricSource { BackendPower, BackendIpc, IpcEstimate, External };

struct MetricDescriptor {
    std::string name;
    std::string unit;
    MetricSource source = MetricSource::BackendPower;
};

/// A metric produced no usable value. Optimizer candidates that hit this are
/// marked invalid rather than scored.
class MetricUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Any other failure while collecting a metric (spawn failure, bad protocol).
class MetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Samples of a steady-state value: ceil(duration / period) samples spaced by
/// period, starting at `start_ms`. Throws std::invalid_argument for a
/// non-positive duration or period.
std::vector<MetricSample> constant_stream(double value, std::int64_t start_ms, std::int64_t duration_ms,
                                          std::int64_t period_ms);

std::vector<MetricSample> collect_backend_power(const SimResult& result, std::int64_t duration_ms,
                                                std::int64_t period_ms, std::int64_t start_ms = 0);

std::vector<MetricSample> collect_backend_ipc(const SimResult& result, std::int64_t duration_ms,
                                              std::int64_t period_ms, std::int64_t start_ms = 0);

/// IPC from counted loop iterations under an assumed constant frequency.
/// Biased low by eff/assumed when the core ran slower than assumed.
double estimate_ipc(double loop_iterations, std::size_t unroll, std::uint32_t instructions_per_set,
                    double assumed_freq_mhz, double duration_ms);

/// Parses one line of the external metric protocol, "<timestamp_ms> <value>"
/// (no trailing newline). Returns nullopt if the line does not match.
std::optional<MetricSample> parse_metric_line(std::string_view line);

/// Inverse of parse_metric_line, with a trailing newline.
std::string format_metric_line(const MetricSample& sample);

struct ExternalCollection {
    std::vector<MetricSample> samples;
    std::size_t lines = 0;
    std::size_t malformed = 0;
};

/// Accepts protocol text and keeps the well-formed, non-decreasing samples.
/// Throws MetricError if more than 10 % of the lines were malformed.
ExternalCollection parse_metric_stream(std::string_view text);

struct ExternalOptions {
    std::chrono::milliseconds grace{1000};
    /// Extra environment entries for the child, on top of EMBER_DURATION_MS.
    std::map<std::string, std::string> environment;
};

/// Runs `argv` as a child process with EMBER_DURATION_MS set and reads its
/// stdout until EOF or until duration + grace has elapsed, then terminates
/// it. Throws MetricError when the child cannot be started or too many lines
/// are malformed and MetricUnavailable when no sample arrived.
ExternalCollection collect_external(const std::vector<std::string>& argv, std::int64_t duration_ms,
                                    const ExternalOptions& options = {});

/// What a metric sees of one workload run.
struct RunContext {
    const SimResult* result = nullptr;
    const InstructionSetDef* iset = nullptr;
    std::size_t unroll = 0;
    std::string workload;
    /// Requested frequency, the assumption behind the IPC estimate.
    double requested_freq_mhz = 0.0;
    std::int64_t start_ms = 0;
    std::int64_t duration_ms = 0;
    std::int64_t period_ms = 50;
};

using MetricCollector = std::function<std::vector<MetricSample>(const RunContext&)>;

/// Named metrics available to a run. Each collect() call produces an
/// independent stream.
class MetricRegistry {
public:
    void add(MetricDescriptor descriptor, MetricCollector collector);

    const std::vector<MetricDescriptor>& descriptors() const { return descriptors_; }
    const MetricDescriptor* find(std::string_view name) const;

    /// Throws std::invalid_argument for an unknown name.
    std::vector<MetricSample> collect(std::string_view name, const RunContext& context) const;

private:
    std::vector<MetricDescriptor> descriptors_;
    std::vector<MetricCollector> collectors_;
};

/// "power", "perf-ipc" and "ipc-estimate", plus "external" when a command
/// is given (run through /bin/sh -c).
MetricRegistry default_metric_registry(const std::optional<std::string>& external_command = std::nullopt);

}  // namespace ember
