#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ember/metrics.hpp"

namespace ember {

inline constexpr std::int64_t kDefaultStartDeltaMs = 5000;
inline constexpr std::int64_t kDefaultStopDeltaMs = 2000;

/// The part of a run that counts: everything except the first start_delta
/// and the last stop_delta milliseconds.
struct MeasurementWindow {
    std::int64_t total_ms = 0;
    std::int64_t start_delta_ms = kDefaultStartDeltaMs;
    std::int64_t stop_delta_ms = kDefaultStopDeltaMs;

    /// Throws std::invalid_argument unless the deltas are non-negative and
    /// leave part of the run.
    void validate() const;
};

/// Mean of the samples with run_start + start_delta <= t <= run_start + total
/// - stop_delta. Throws MetricUnavailable when no sample falls inside.
double window_average(std::span<const MetricSample> samples, const MeasurementWindow& window,
                      std::int64_t run_start_ms);

/// Number of samples window_average would use.
std::size_t window_count(std::span<const MetricSample> samples, const MeasurementWindow& window,
                         std::int64_t run_start_ms);

struct SummaryRow {
    std::string label;
    std::string metric;
    double mean = 0.0;
    std::size_t samples = 0;
};

/// Six significant digits, as used in CSV and log output.
std::string format_value(double value);

/// CSV text: header `label,metric,mean,samples`, LF line endings; fields
/// containing commas or quotes are quoted.
std::string format_csv_summary(std::span<const SummaryRow> rows);

void write_csv_summary(std::span<const SummaryRow> rows, std::ostream& out);

/// Throws std::runtime_error when the file cannot be written.
void write_csv_summary(std::span<const SummaryRow> rows, const std::filesystem::path& path);

}  // namespace ember
