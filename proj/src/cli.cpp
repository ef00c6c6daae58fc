#include "ember/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

namespace ember {

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Everything a run needs that is derived from the plan.
struct Session {
    MachineConfig machine;
    std::optional<SimulatorBackend> backend;
    const InstructionSetDef* iset = nullptr;
    std::size_t pstate = 0;
    std::size_t unroll = 0;
    MeasurementWindow window;
    MetricRegistry metrics;
};

Session open_session(const RunPlan& plan, const InstructionSetRegistry& registry) {
    Session session;
    if (registry.empty()) {
        throw UsageError("no instruction sets available");
    }
    session.iset = plan.function.empty() ? &registry.all().front() : registry.find(plan.function);
    if (session.iset == nullptr) {
        throw UsageError("unknown function '" + plan.function + "' (see --avail)");
    }
    try {
        session.machine = plan.machine_config ? load_machine_config(*plan.machine_config) : MachineConfig{};
        session.machine.validate();
    } catch (const ConfigError& e) {
        throw UsageError(std::string("machine config: ") + e.what());
    }
    session.backend.emplace(session.machine);
    session.pstate = plan.pstate.value_or(session.backend->pstate_count() - 1);
    if (session.pstate >= session.backend->pstate_count()) {
        throw UsageError("P-state index " + std::to_string(session.pstate) + " out of range (machine has " +
                         std::to_string(session.backend->pstate_count()) + ")");
    }
    session.unroll = plan.line_count.value_or(default_unroll(session.machine));
    if (session.unroll == 0) {
        throw UsageError("--set-line-count must be positive");
    }
    if (plan.duration_s <= 0) {
        throw UsageError("-t must be positive");
    }
    session.window = MeasurementWindow{plan.duration_s * 1000, plan.start_delta_ms, plan.stop_delta_ms};
    try {
        session.window.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    session.metrics = default_metric_registry(plan.metric_command);
    return session;
}

AccessSet parse_groups(const std::optional<std::string>& text, const char* fallback) {
    try {
        return parse_access_set(text.value_or(fallback));
    } catch (const ParseError& e) {
        throw UsageError(std::string("--run-instruction-groups: ") + e.what());
    }
}

GenomeSpace genome_space_for(const RunPlan& plan) {
    if (!plan.instruction_groups) {
        return GenomeSpace::all_levels();
    }
    const auto groups = parse_groups(plan.instruction_groups, "REG:1");
    std::vector<AccessTarget> targets{AccessTarget::reg()};
    for (const auto& group : groups.groups()) {
        if (!group.target.is_register()) {
            targets.push_back(group.target);
        }
    }
    return GenomeSpace(std::move(targets));
}

std::string describe(const SimResult& result) {
    std::ostringstream text;
    text << "power " << format_value(result.power_w) << " W, ipc " << format_value(result.ipc) << ", frequency "
         << format_value(result.eff_freq_mhz) << " MHz, fetch tier " << to_string(result.tier);
    return text.str();
}

}  // namespace

std::string list_available(const InstructionSetRegistry& registry) {
    std::string out;
    for (const auto& def : registry.all()) {
        out += def.id;
        out += '\n';
    }
    return out;
}

WorkloadRunner::WorkloadRunner(const Backend& backend, const InstructionSetDef& iset, std::size_t unroll,
                               std::size_t pstate_index, const MetricRegistry& metrics, MeasurementWindow window,
                               std::int64_t sample_period_ms)
    : backend_(backend),
      iset_(iset),
      unroll_(unroll),
      pstate_(pstate_index),
      metrics_(metrics),
      window_(window),
      period_ms_(sample_period_ms) {
    window_.validate();
}

WorkloadRunner::Outcome WorkloadRunner::run(const AccessSet& accesses,
                                            const std::vector<std::string>& metric_names) const {
    const WorkloadConfig config{iset_.id, unroll_, accesses};
    Outcome outcome;
    outcome.result = backend_.run(build_schedule(config), iset_, pstate_);

    RunContext context;
    context.result = &outcome.result;
    context.iset = &iset_;
    context.unroll = unroll_;
    context.workload = format_access_set(accesses);
    context.requested_freq_mhz = backend_.pstate_mhz(pstate_);
    context.start_ms = 0;
    context.duration_ms = window_.total_ms;
    context.period_ms = period_ms_;
    for (const auto& name : metric_names) {
        const auto samples = metrics_.collect(name, context);
        const auto mean = window_average(samples, window_, context.start_ms);
        outcome.rows.push_back(SummaryRow{context.workload, name, mean,
                                          window_count(samples, window_, context.start_ms)});
    }
    return outcome;
}

Individual WorkloadRunner::evaluate(const Genome& genome, const GenomeSpace& space,
                                    const std::vector<std::string>& metric_names) const {
    Individual individual;
    individual.genome = genome;
    try {
        const auto outcome = run(space.decode(genome), metric_names);
        for (const auto& row : outcome.rows) {
            individual.objectives.push_back(row.mean);
        }
    } catch (const MetricUnavailable&) {
        individual.valid = false;
        individual.objectives.assign(metric_names.size(), std::numeric_limits<double>::quiet_NaN());
    }
    return individual;
}

std::optional<RunPlan> parse_command_line(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
                                          int& exit_code) {
    RunPlan plan;
    CLI::App app{"Power stress test workload tuner with an analytical machine backend", "ember"};
    app.option_defaults()->always_capture_default();

    bool avail = false;
    bool measurement = false;
    std::string groups;
    std::size_t line_count = 0;
    std::string optimize;
    std::string machine_config;
    std::size_t pstate = 0;
    std::string metric_command;
    std::string csv_output;

    app.add_flag("-a,--avail", avail, "List available instruction sets and exit");
    app.add_option("-i,--function", plan.function, "Instruction set id")->default_str("first available");
    app.add_option("--run-instruction-groups", groups,
                   "Memory accesses, e.g. REG:4,L1_L:2,L2_L:1 (optimize: targets to tune)")
        ->default_str("REG:1 (optimize: REG,L1_LS,L2_L,L3_L,RAM_L)");
    app.add_option("--set-line-count", line_count, "Unroll factor (instruction sets per loop)")
        ->default_str("90% of the L1-I capacity");
    app.add_option("--optimize", optimize, "Run the auto-tuner with the given algorithm")
        ->check(CLI::IsMember({"NSGA2"}))
        ->default_str("off");
    app.add_option("--individuals", plan.optimizer.population, "Population size");
    app.add_option("--generations", plan.optimizer.generations, "Number of generations after the initial one");
    app.add_option("--nsga2-m", plan.optimizer.mutation_prob, "Per-gene mutation probability");
    app.add_option("--max-count", plan.optimizer.max_count, "Upper bound for each tuned access count");
    app.add_option("--seed", plan.optimizer.rng_seed, "Random seed of the optimizer");
    app.add_option("--threads", plan.optimizer.threads, "Threads evaluating candidates of one generation");
    app.add_option("-t,--timeout", plan.duration_s, "Duration of a run or of each candidate, in seconds");
    app.add_option("--preheat", plan.preheat_s, "Seconds of default workload before tuning starts");
    app.add_option("--optimization-metric", plan.metrics, "Metrics to maximize, comma separated")
        ->delimiter(',')
        ->default_str("power,perf-ipc");
    app.add_flag("--measurement", measurement, "Measure a fixed workload and print a CSV summary");
    app.add_option("--start-delta", plan.start_delta_ms, "Milliseconds excluded at the start of a run");
    app.add_option("--stop-delta", plan.stop_delta_ms, "Milliseconds excluded at the end of a run");
    app.add_option("--machine-config", machine_config, "Machine model file")
        ->envname("EMBER_MACHINE_CONFIG")
        ->default_str("reference machine");
    app.add_option("--pstate", pstate, "P-state index to run at")->default_str("highest");
    app.add_option("--metric-command", metric_command,
                   "Shell command providing the 'external' metric on stdout")
        ->default_str("none");
    app.add_option("--log-file", plan.log_file, "Optimizer log file");
    app.add_option("--csv-output", csv_output, "Also write the measurement CSV to this file")
        ->default_str("none");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const auto code = app.exit(e, out, err);
        exit_code = code == 0 ? kExitOk : kExitUsage;
        return std::nullopt;
    }

    if (app.count("--run-instruction-groups") > 0) {
        plan.instruction_groups = groups;
    }
    if (app.count("--set-line-count") > 0) {
        plan.line_count = line_count;
    }
    if (app.count("--machine-config") > 0) {
        plan.machine_config = machine_config;
    }
    if (app.count("--pstate") > 0) {
        plan.pstate = pstate;
    }
    if (app.count("--metric-command") > 0) {
        plan.metric_command = metric_command;
    }
    if (app.count("--csv-output") > 0) {
        plan.csv_output = csv_output;
    }
    if (avail) {
        plan.mode = RunMode::Avail;
    } else if (!optimize.empty()) {
        if (measurement) {
            err << "--optimize and --measurement are mutually exclusive\n";
            exit_code = kExitUsage;
            return std::nullopt;
        }
        plan.mode = RunMode::Optimize;
    } else {
        plan.mode = RunMode::Measure;
    }
    exit_code = kExitOk;
    return plan;
}

int run_measure(const RunPlan& plan, const InstructionSetRegistry& registry, std::ostream& out, std::ostream& err) {
    try {
        const auto session = open_session(plan, registry);
        const auto accesses = parse_groups(plan.instruction_groups, "REG:1");
        std::vector<std::string> names;
        for (const auto& descriptor : session.metrics.descriptors()) {
            names.push_back(descriptor.name);
        }
        const WorkloadRunner runner(*session.backend, *session.iset, session.unroll, session.pstate,
                                    session.metrics, session.window);
        const auto outcome = runner.run(accesses, names);
        err << session.iset->id << " " << format_access_set(accesses) << " u=" << session.unroll << " at "
            << format_value(session.backend->pstate_mhz(session.pstate)) << " MHz: " << describe(outcome.result)
            << '\n';
        write_csv_summary(outcome.rows, out);
        if (plan.csv_output) {
            write_csv_summary(outcome.rows, std::filesystem::path(*plan.csv_output));
        }
        return kExitOk;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const MetricUnavailable& e) {
        err << "metric unavailable: " << e.what() << '\n';
        return kExitMetricUnavailable;
    } catch (const MetricError& e) {
        err << "metric failed: " << e.what() << '\n';
        return kExitMetricUnavailable;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
}

int run_optimize(const RunPlan& plan, const InstructionSetRegistry& registry, std::ostream& out, std::ostream& err) {
    std::optional<Session> session;
    std::optional<GenomeSpace> space;
    try {
        session.emplace(open_session(plan, registry));
        plan.optimizer.validate();
        space.emplace(genome_space_for(plan));
        if (plan.metrics.empty()) {
            throw UsageError("--optimization-metric names no metric");
        }
        for (const auto& name : plan.metrics) {
            if (session->metrics.find(name) == nullptr) {
                throw UsageError("unknown metric '" + name + "'");
            }
        }
        if (plan.preheat_s < 0) {
            throw UsageError("--preheat must not be negative");
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }

    std::ofstream log(plan.log_file, std::ios::binary | std::ios::trunc);
    if (!log) {
        err << "error: cannot write log file " << plan.log_file << '\n';
        return kExitUsage;
    }

    const WorkloadRunner runner(*session->backend, *session->iset, session->unroll, session->pstate,
                                session->metrics, session->window);
    try {
        if (plan.preheat_s > 0) {
            // simulated time: the steady state is reached immediately
            const WorkloadConfig preheat{session->iset->id, session->unroll, parse_access_set("REG:1")};
            const auto result = session->backend->run(build_schedule(preheat), *session->iset, session->pstate);
            err << "preheat " << plan.preheat_s << " s: " << describe(result) << '\n';
        }
        const auto evaluator = [&](const Genome& genome) { return runner.evaluate(genome, *space, plan.metrics); };
        auto result = evolve(plan.optimizer, *space, evaluator, &log);

        auto front = result.pareto_front;
        std::stable_sort(front.begin(), front.end(),
                         [](const Individual& a, const Individual& b) {
                             if (a.objectives[0] != b.objectives[0]) {
                                 return a.objectives[0] > b.objectives[0];
                             }
                             return a.genome.counts < b.genome.counts;
                         });
        // The population may hold copies of one genome; echo each once.
        front.erase(std::unique(front.begin(), front.end(),
                                [](const Individual& a, const Individual& b) { return a.genome == b.genome; }),
                    front.end());
        out << "# access groups";
        for (const auto& name : plan.metrics) {
            out << '\t' << name;
        }
        out << '\n';
        for (const auto& member : front) {
            out << format_access_set(space->decode(member.genome));
            for (const auto value : member.objectives) {
                out << '\t' << format_value(value);
            }
            out << '\n';
        }
        err << result.evaluations << " evaluations, log written to " << plan.log_file << '\n';
        return kExitOk;
    } catch (const EvaluationError& e) {
        err << "optimizer failed: " << e.what() << '\n';
        return kExitOptimizerFailure;
    } catch (const std::exception& e) {
        err << "optimizer failed: " << e.what() << '\n';
        return kExitOptimizerFailure;
    }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    int code = kExitOk;
    const auto plan = parse_command_line(argc, argv, out, err, code);
    if (!plan) {
        return code;
    }
    const auto registry = builtin_instruction_sets();
    switch (plan->mode) {
        case RunMode::Avail:
            out << list_available(registry);
            return kExitOk;
        case RunMode::Measure:
            return run_measure(*plan, registry, out, err);
        case RunMode::Optimize:
            return run_optimize(*plan, registry, out, err);
    }
    return kExitUsage;
}

}  // namespace ember
