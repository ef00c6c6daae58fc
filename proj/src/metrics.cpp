#include "ember/metrics.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <utility>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

namespace ember {

namespace {

class Fd {
public:
    Fd() = default;
    explicit Fd(int fd) : fd_(fd) {}
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    Fd(Fd&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
    Fd& operator=(Fd&& other) noexcept {
        if (this != &other) {
            reset();
            fd_ = std::exchange(other.fd_, -1);
        }
        return *this;
    }
    ~Fd() { reset(); }

    int get() const { return fd_; }
    void reset() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    int fd_ = -1;
};

std::pair<Fd, Fd> make_pipe() {
    int fds[2];
    if (::pipe2(fds, O_CLOEXEC) != 0) {
        throw MetricError(std::string("pipe: ") + std::strerror(errno));
    }
    return {Fd(fds[0]), Fd(fds[1])};
}

void reap(pid_t pid, bool terminate) {
    if (terminate) {
        ::kill(-pid, SIGTERM);
        for (int i = 0; i < 50; ++i) {
            int status = 0;
            if (::waitpid(pid, &status, WNOHANG) == pid) {
                return;
            }
            ::usleep(10'000);
        }
        ::kill(-pid, SIGKILL);
    }
    int status = 0;
    while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
    }
}

}  // namespace

std::vector<MetricSample> constant_stream(double value, std::int64_t start_ms, std::int64_t duration_ms,
                                          std::int64_t period_ms) {
    if (duration_ms <= 0) {
        throw std::invalid_argument("metric duration must be positive");
    }
    if (period_ms <= 0) {
        throw std::invalid_argument("sample period must be positive");
    }
    const auto count = (duration_ms + period_ms - 1) / period_ms;
    std::vector<MetricSample> samples;
    samples.reserve(static_cast<std::size_t>(count));
    for (std::int64_t k = 0; k < count; ++k) {
        samples.push_back(MetricSample{start_ms + k * period_ms, value});
    }
    return samples;
}

std::vector<MetricSample> collect_backend_power(const SimResult& result, std::int64_t duration_ms,
                                                std::int64_t period_ms, std::int64_t start_ms) {
    return constant_stream(result.power_w, start_ms, duration_ms, period_ms);
}

std::vector<MetricSample> collect_backend_ipc(const SimResult& result, std::int64_t duration_ms,
                                              std::int64_t period_ms, std::int64_t start_ms) {
    return constant_stream(result.ipc, start_ms, duration_ms, period_ms);
}

double estimate_ipc(double loop_iterations, std::size_t unroll, std::uint32_t instructions_per_set,
                    double assumed_freq_mhz, double duration_ms) {
    if (!(duration_ms > 0.0)) {
        throw std::invalid_argument("IPC estimate needs a positive duration");
    }
    if (!(assumed_freq_mhz > 0.0)) {
        throw std::invalid_argument("IPC estimate needs a positive frequency");
    }
    const auto instructions = loop_iterations * static_cast<double>(unroll) * instructions_per_set;
    // MHz * 1e3 = cycles per millisecond
    return instructions / (assumed_freq_mhz * 1e3 * duration_ms);
}

std::optional<MetricSample> parse_metric_line(std::string_view line) {
    const auto space = line.find(' ');
    if (space == std::string_view::npos || space == 0 || space + 1 >= line.size()) {
        return std::nullopt;
    }
    const auto ts_text = line.substr(0, space);
    const auto value_text = line.substr(space + 1);
    if (!std::all_of(ts_text.begin(), ts_text.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        return std::nullopt;
    }
    const auto is_number_char = [](char c) {
        return (c >= '0' && c <= '9') || c == '.' || c == '-' || c == 'e' || c == 'E' || c == '+';
    };
    if (!std::all_of(value_text.begin(), value_text.end(), is_number_char) || value_text.front() == '+') {
        return std::nullopt;
    }
    MetricSample sample;
    {
        const auto [ptr, ec] = std::from_chars(ts_text.data(), ts_text.data() + ts_text.size(), sample.timestamp_ms);
        if (ec != std::errc{} || ptr != ts_text.data() + ts_text.size()) {
            return std::nullopt;
        }
    }
    {
        const auto [ptr, ec] = std::from_chars(value_text.data(), value_text.data() + value_text.size(), sample.value);
        if (ec != std::errc{} || ptr != value_text.data() + value_text.size() || !std::isfinite(sample.value)) {
            return std::nullopt;
        }
    }
    return sample;
}

std::string format_metric_line(const MetricSample& sample) {
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%lld %.17g\n", static_cast<long long>(sample.timestamp_ms), sample.value);
    return buffer;
}

ExternalCollection parse_metric_stream(std::string_view text) {
    ExternalCollection out;
    std::size_t offset = 0;
    while (offset < text.size()) {
        const auto newline = text.find('\n', offset);
        const auto line = text.substr(offset, newline == std::string_view::npos ? std::string_view::npos
                                                                                : newline - offset);
        offset = newline == std::string_view::npos ? text.size() : newline + 1;
        ++out.lines;
        const auto sample = parse_metric_line(line);
        if (!sample || (!out.samples.empty() && sample->timestamp_ms < out.samples.back().timestamp_ms)) {
            ++out.malformed;
            continue;
        }
        out.samples.push_back(*sample);
    }
    if (out.malformed * 10 > out.lines) {
        throw MetricError("external metric: " + std::to_string(out.malformed) + " of " + std::to_string(out.lines) +
                          " lines malformed");
    }
    return out;
}

ExternalCollection collect_external(const std::vector<std::string>& argv, std::int64_t duration_ms,
                                    const ExternalOptions& options) {
    if (argv.empty()) {
        throw MetricError("external metric: empty command");
    }
    auto [out_read, out_write] = make_pipe();
    auto [status_read, status_write] = make_pipe();

    std::vector<std::string> env_strings;
    env_strings.push_back("EMBER_DURATION_MS=" + std::to_string(duration_ms));
    for (const auto& [key, value] : options.environment) {
        env_strings.push_back(key + "=" + value);
    }
    std::vector<char*> child_argv;
    for (const auto& arg : argv) {
        child_argv.push_back(const_cast<char*>(arg.c_str()));
    }
    child_argv.push_back(nullptr);

    const pid_t pid = ::fork();
    if (pid < 0) {
        throw MetricError(std::string("fork: ") + std::strerror(errno));
    }
    if (pid == 0) {
        // own process group so termination also reaches grandchildren
        ::setpgid(0, 0);
        ::dup2(out_write.get(), STDOUT_FILENO);
        for (auto& entry : env_strings) {
            ::putenv(entry.data());
        }
        ::execvp(child_argv[0], child_argv.data());
        const int err = errno;
        [[maybe_unused]] auto written = ::write(status_write.get(), &err, sizeof err);
        ::_exit(127);
    }
    ::setpgid(pid, pid);
    out_write.reset();
    status_write.reset();

    int exec_errno = 0;
    if (::read(status_read.get(), &exec_errno, sizeof exec_errno) == static_cast<ssize_t>(sizeof exec_errno)) {
        reap(pid, false);
        throw MetricError("external metric: cannot start '" + argv[0] + "': " + std::strerror(exec_errno));
    }

    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(duration_ms) + options.grace;
    std::string text;
    bool eof = false;
    char buffer[4096];
    while (!eof) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline -
                                                                               std::chrono::steady_clock::now());
        if (left.count() <= 0) {
            break;
        }
        pollfd pfd{out_read.get(), POLLIN, 0};
        const int ready = ::poll(&pfd, 1, static_cast<int>(std::min<std::int64_t>(left.count(), 1'000'000)));
        if (ready < 0) {
            if (errno == EINTR) {
                continue;
            }
            break;
        }
        if (ready == 0) {
            continue;
        }
        const auto n = ::read(out_read.get(), buffer, sizeof buffer);
        if (n > 0) {
            text.append(buffer, static_cast<std::size_t>(n));
        } else if (n == 0 || errno != EINTR) {
            eof = true;
        }
    }
    reap(pid, !eof);

    auto collection = parse_metric_stream(text);
    if (collection.samples.empty()) {
        throw MetricUnavailable("external metric '" + argv.back() + "' produced no samples");
    }
    return collection;
}

void MetricRegistry::add(MetricDescriptor descriptor, MetricCollector collector) {
    if (find(descriptor.name) != nullptr) {
        throw std::invalid_argument("metric " + descriptor.name + " registered twice");
    }
    descriptors_.push_back(std::move(descriptor));
    collectors_.push_back(std::move(collector));
}

const MetricDescriptor* MetricRegistry::find(std::string_view name) const {
    const auto it = std::find_if(descriptors_.begin(), descriptors_.end(),
                                 [&](const auto& d) { return d.name == name; });
    return it == descriptors_.end() ? nullptr : &*it;
}

std::vector<MetricSample> MetricRegistry::collect(std::string_view name, const RunContext& context) const {
    for (std::size_t i = 0; i < descriptors_.size(); ++i) {
        if (descriptors_[i].name == name) {
            return collectors_[i](context);
        }
    }
    throw std::invalid_argument("unknown metric '" + std::string(name) + "'");
}

MetricRegistry default_metric_registry(const std::optional<std::string>& external_command) {
    MetricRegistry registry;
    registry.add({"power", "W", MetricSource::BackendPower}, [](const RunContext& ctx) {
        return collect_backend_power(*ctx.result, ctx.duration_ms, ctx.period_ms, ctx.start_ms);
    });
    registry.add({"perf-ipc", "instructions/cycle", MetricSource::BackendIpc}, [](const RunContext& ctx) {
        return collect_backend_ipc(*ctx.result, ctx.duration_ms, ctx.period_ms, ctx.start_ms);
    });
    registry.add({"ipc-estimate", "instructions/cycle", MetricSource::IpcEstimate}, [](const RunContext& ctx) {
        const auto iterations = ctx.result->loop_iterations_per_s * static_cast<double>(ctx.duration_ms) / 1000.0;
        const auto estimate = estimate_ipc(iterations, ctx.unroll, ctx.iset->instructions_per_set,
                                           ctx.requested_freq_mhz, static_cast<double>(ctx.duration_ms));
        return constant_stream(estimate, ctx.start_ms, ctx.duration_ms, ctx.period_ms);
    });
    if (external_command) {
        registry.add({"external", "", MetricSource::External}, [command = *external_command](const RunContext& ctx) {
            ExternalOptions options;
            options.environment["EMBER_WORKLOAD"] = ctx.workload;
            auto collection = collect_external({"/bin/sh", "-c", command}, ctx.duration_ms, options);
            // child timestamps are relative to its own start
            for (auto& sample : collection.samples) {
                sample.timestamp_ms += ctx.start_ms;
            }
            return collection.samples;
        });
    }
    return registry;
}

}  // namespace ember
