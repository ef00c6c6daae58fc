#include "ember/measurement.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <stdexcept>

namespace ember {

namespace {

std::string csv_field(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) {
        return field;
    }
    std::string quoted = "\"";
    for (const char c : field) {
        if (c == '"') {
            quoted += '"';
        }
        quoted += c;
    }
    quoted += '"';
    return quoted;
}

}  // namespace

void MeasurementWindow::validate() const {
    if (start_delta_ms < 0 || stop_delta_ms < 0) {
        throw std::invalid_argument("measurement deltas must not be negative");
    }
    if (start_delta_ms + stop_delta_ms >= total_ms) {
        throw std::invalid_argument("start delta " + std::to_string(start_delta_ms) + " ms plus stop delta " +
                                    std::to_string(stop_delta_ms) + " ms leave nothing of a " +
                                    std::to_string(total_ms) + " ms run");
    }
}

std::size_t window_count(std::span<const MetricSample> samples, const MeasurementWindow& window,
                         std::int64_t run_start_ms) {
    const auto lo = run_start_ms + window.start_delta_ms;
    const auto hi = run_start_ms + window.total_ms - window.stop_delta_ms;
    std::size_t count = 0;
    for (const auto& sample : samples) {
        if (sample.timestamp_ms >= lo && sample.timestamp_ms <= hi) {
            ++count;
        }
    }
    return count;
}

double window_average(std::span<const MetricSample> samples, const MeasurementWindow& window,
                      std::int64_t run_start_ms) {
    window.validate();
    const auto lo = run_start_ms + window.start_delta_ms;
    const auto hi = run_start_ms + window.total_ms - window.stop_delta_ms;
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& sample : samples) {
        if (sample.timestamp_ms >= lo && sample.timestamp_ms <= hi) {
            sum += sample.value;
            ++count;
        }
    }
    if (count == 0) {
        throw MetricUnavailable("no samples between " + std::to_string(lo) + " ms and " + std::to_string(hi) +
                                " ms");
    }
    return sum / static_cast<double>(count);
}

std::string format_value(double value) {
    char buffer[32];
    std::snprintf(buffer, sizeof buffer, "%.6g", value);
    return buffer;
}

std::string format_csv_summary(std::span<const SummaryRow> rows) {
    std::string out = "label,metric,mean,samples\n";
    for (const auto& row : rows) {
        out += csv_field(row.label);
        out += ',';
        out += csv_field(row.metric);
        out += ',';
        out += format_value(row.mean);
        out += ',';
        out += std::to_string(row.samples);
        out += '\n';
    }
    return out;
}

void write_csv_summary(std::span<const SummaryRow> rows, std::ostream& out) { out << format_csv_summary(rows); }

void write_csv_summary(std::span<const SummaryRow> rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    write_csv_summary(rows, out);
    out.flush();
    if (!out) {
        throw std::runtime_error("failed writing " + path.string());
    }
}

}  // namespace ember
