#include <chrono>
#include <cmath>
#include <random>

#include "doctest.h"
#include "ember/metrics.hpp"

using namespace ember;

namespace {

std::vector<std::string> sh(const std::string& script) { return {"/bin/sh", "-c", script}; }

const InstructionSetDef& iset() {
    static const auto sets = builtin_instruction_sets();
    return sets.all().front();
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("constant streams have ceil(duration / period) samples") {
    SimResult r;
    r.power_w = 300.0;
    r.ipc = 3.5;
    const auto power = collect_backend_power(r, 1000, 250);
    REQUIRE(power.size() == 4);
    for (std::size_t i = 0; i < power.size(); ++i) {
        CHECK(power[i].value == 300.0);
        CHECK(power[i].timestamp_ms == static_cast<std::int64_t>(i) * 250);
    }
    CHECK(collect_backend_ipc(r, 118'000, 50).size() == 2360);
    CHECK(collect_backend_ipc(r, 10, 250).size() == 1);
    CHECK(collect_backend_ipc(r, 10, 250).front().value == 3.5);
    CHECK(collect_backend_power(r, 1001, 250).size() == 5);
    CHECK(collect_backend_power(r, 100, 50, 7000).front().timestamp_ms == 7000);
    CHECK_THROWS_AS(collect_backend_power(r, 0, 50), std::invalid_argument);
    CHECK_THROWS_AS(collect_backend_ipc(r, 100, 0), std::invalid_argument);
}

TEST_CASE("register loop reports full decode width") {
    const MachineConfig m;
    const auto r = simulate(build_schedule({iset().id, 1440, parse_access_set("REG:1")}), iset(), m, 0);
    for (const auto& s : collect_backend_ipc(r, 1000, 50)) {
        CHECK(s.value == 4.0);
    }
}

TEST_CASE("ipc estimate identities") {
    // 2 GHz for 1 s at 4 instructions per cycle is 8e9 instructions;
    // with 1000 sets of 4 instructions per loop that is 2e6 iterations.
    CHECK(estimate_ipc(2e6, 1000, 4, 2000.0, 1000.0) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(estimate_ipc(0.0, 1000, 4, 2000.0, 1000.0) == 0.0);
    CHECK_THROWS_AS(estimate_ipc(1.0, 1000, 4, 2000.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(estimate_ipc(1.0, 1000, 4, 0.0, 10.0), std::invalid_argument);
}

TEST_CASE("ipc estimate matches the backend at the effective frequency") {
    const MachineConfig m;
    for (const auto* groups : {"REG:1", "REG:3,L1_LS:1", "REG:10,L1_LS:4,L2_L:5,L3_L:3,RAM_L:2", "RAM_L:1"}) {
        const auto s = build_schedule({iset().id, 1440, parse_access_set(groups)});
        for (std::size_t p = 0; p < 3; ++p) {
            const auto r = simulate(s, iset(), m, p);
            const double duration_ms = 10'000.0;
            const auto iterations = r.loop_iterations_per_s * duration_ms / 1000.0;
            const auto at_eff = estimate_ipc(iterations, 1440, iset().instructions_per_set, r.eff_freq_mhz, duration_ms);
            CHECK(at_eff == doctest::Approx(r.ipc).epsilon(1e-9));
            const auto requested = m.pstates_mhz[p];
            const auto at_req = estimate_ipc(iterations, 1440, iset().instructions_per_set, requested, duration_ms);
            CHECK(at_req == doctest::Approx(r.ipc * r.eff_freq_mhz / requested).epsilon(1e-9));
        }
    }
}

TEST_CASE("throttled run biases the estimate low") {
    const MachineConfig m;
    const auto s = build_schedule({iset().id, 1440, parse_access_set("REG:10,L1_LS:4,L2_L:5,L3_L:3,RAM_L:2")});
    const auto r = simulate(s, iset(), m, 2);
    REQUIRE(r.eff_freq_mhz < m.pstates_mhz[2]);
    const auto iterations = r.loop_iterations_per_s * 5.0;
    const auto estimate = estimate_ipc(iterations, 1440, iset().instructions_per_set, m.pstates_mhz[2], 5000.0);
    CHECK(estimate < r.ipc);
    CHECK(estimate / r.ipc == doctest::Approx(r.eff_freq_mhz / m.pstates_mhz[2]).epsilon(1e-9));
}

TEST_CASE("protocol line grammar") {
    CHECK(parse_metric_line("0 1") == MetricSample{0, 1.0});
    CHECK(parse_metric_line("1500 -2.5e3") == MetricSample{1500, -2500.0});
    CHECK(parse_metric_line("7 0.125") == MetricSample{7, 0.125});
    for (const auto* bad : {"", "1", "1 ", " 1 2", "1  2", "1 2 ", "1\t2", "-1 2", "a 2", "1 x", "1 nan", "1 inf",
                            "1 +2", "1.5 2", "1 2\r", "99999999999999999999 1"}) {
        CHECK_MESSAGE(!parse_metric_line(bad), bad);
    }
    CHECK(format_metric_line({42, 0.1}) == "42 0.10000000000000001\n");
}

TEST_CASE("protocol round trip of random streams") {
    std::mt19937_64 rng(29);
    std::uniform_int_distribution<std::int64_t> step(0, 1000);
    std::uniform_real_distribution<double> mag(-300.0, 300.0);
    std::uniform_int_distribution<int> exp(-20, 20);
    for (int i = 0; i < 200; ++i) {
        std::vector<MetricSample> samples;
        std::string text;
        std::int64_t ts = step(rng);
        const auto n = step(rng) % 60 + 1;
        for (std::int64_t k = 0; k < n; ++k) {
            samples.push_back({ts, std::ldexp(mag(rng), exp(rng))});
            text += format_metric_line(samples.back());
            ts += step(rng);
        }
        const auto parsed = parse_metric_stream(text);
        CHECK(parsed.malformed == 0);
        CHECK(parsed.lines == samples.size());
        CHECK(parsed.samples == samples);
    }
}

TEST_CASE("malformed and out-of-order lines") {
    const auto ok = parse_metric_stream("0 1\n10 2\n5 3\n20 4\n30 5\n40 6\n50 7\n60 8\n70 9\n80 10\n");
    CHECK(ok.lines == 10);
    CHECK(ok.malformed == 1);
    CHECK(ok.samples.size() == 9);
    CHECK_THROWS_AS(parse_metric_stream("0 1\nnoise\n"), MetricError);
    CHECK(parse_metric_stream("").samples.empty());
}

TEST_CASE("external child emitting two samples") {
    const auto got = collect_external(sh("echo '0 1.5'; echo '50 2.5'"), 1000);
    REQUIRE(got.samples.size() == 2);
    CHECK(got.samples[0] == MetricSample{0, 1.5});
    CHECK(got.samples[1] == MetricSample{50, 2.5});
}

TEST_CASE("external child sees its environment") {
    ExternalOptions options;
    options.environment["EMBER_WORKLOAD"] = "REG:1";
    options.environment["EXTRA_VALUE"] = "17";
    const auto got = collect_external(sh("echo \"0 $EMBER_DURATION_MS\"; echo \"1 $EXTRA_VALUE\"; "
                                         "[ \"$EMBER_WORKLOAD\" = REG:1 ] && echo '2 1'"),
                                      1234, options);
    REQUIRE(got.samples.size() == 3);
    CHECK(got.samples[0].value == 1234.0);
    CHECK(got.samples[1].value == 17.0);
}

TEST_CASE("arithmetic sequence at twenty samples per second") {
    const auto got = collect_external(
        sh("i=0; while [ $i -lt 40 ]; do echo \"$((i * 50)) $((7 + 3 * i))\"; i=$((i + 1)); done"), 2000);
    REQUIRE(got.samples.size() == 40);
    double sum = 0.0;
    for (const auto& s : got.samples) {
        sum += s.value;
    }
    CHECK(std::abs(sum / 40.0 - (7.0 + 3.0 * 39.0 / 2.0)) < 1e-9);
}

TEST_CASE("silent child is unavailable") {
    CHECK_THROWS_AS(collect_external(sh("exit 0"), 100), MetricUnavailable);
    CHECK_THROWS_AS(collect_external(sh("echo junk >&2"), 100), MetricUnavailable);
}

TEST_CASE("hung child is terminated after the grace period") {
    ExternalOptions options;
    options.grace = std::chrono::milliseconds(200);
    const auto start = std::chrono::steady_clock::now();
    const auto got = collect_external(sh("echo '0 5'; sleep 30"), 100, options);
    const auto elapsed = std::chrono::steady_clock::now() - start;
    CHECK(got.samples.size() == 1);
    CHECK(elapsed < std::chrono::seconds(5));
    CHECK_THROWS_AS(collect_external(sh("sleep 30"), 100, options), MetricUnavailable);
}

TEST_CASE("child that cannot start") {
    CHECK_THROWS_AS(collect_external({"/nonexistent/ember-metric"}, 100), MetricError);
    CHECK_THROWS_AS(collect_external({}, 100), MetricError);
    CHECK_THROWS_AS(collect_external(sh("echo '0 1'; echo garbage"), 100), MetricError);
}

TEST_CASE("default registry") {
    const auto plain = default_metric_registry();
    REQUIRE(plain.descriptors().size() == 3);
    CHECK(plain.descriptors()[0].name == "power");
    CHECK(plain.descriptors()[1].name == "perf-ipc");
    CHECK(plain.descriptors()[2].name == "ipc-estimate");
    CHECK(plain.find("external") == nullptr);

    const auto with_ext = default_metric_registry("echo \"0 $EMBER_DURATION_MS\"");
    REQUIRE(with_ext.find("external") != nullptr);
    CHECK(with_ext.find("external")->source == MetricSource::External);

    SimResult r;
    r.power_w = 250.0;
    r.ipc = 2.0;
    r.eff_freq_mhz = 2000.0;
    r.loop_iterations_per_s = 2e9 * 2.0 / (1440.0 * 4.0);
    RunContext ctx{&r, &iset(), 1440, "REG:1", 2000.0, 3000, 500, 50};
    const auto ext = with_ext.collect("external", ctx);
    REQUIRE(ext.size() == 1);
    CHECK(ext[0] == MetricSample{3000, 500.0});
    const auto est = with_ext.collect("ipc-estimate", ctx);
    CHECK(est.size() == 10);
    CHECK(est[0].value == doctest::Approx(2.0).epsilon(1e-12));
    CHECK_THROWS_AS(with_ext.collect("rapl", ctx), std::invalid_argument);
}

TEST_CASE("registry rejects duplicate names") {
    MetricRegistry reg;
    reg.add({"a", "", MetricSource::BackendPower}, [](const RunContext&) { return std::vector<MetricSample>{}; });
    CHECK_THROWS(reg.add({"a", "", MetricSource::BackendIpc},
                         [](const RunContext&) { return std::vector<MetricSample>{}; }));
}

}  // TEST_SUITE
