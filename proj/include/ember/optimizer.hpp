#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ember/workload.hpp"

namespace ember {

using Rng = std::mt19937_64;

/// Access counts, one per target of a GenomeSpace.
struct Genome {
    std::vector<std::uint32_t> counts;

    friend bool operator==(const Genome&, const Genome&) = default;
};

/// The ordered targets a genome's counts refer to. Register work is always
/// the first target.
class GenomeSpace {
public:
    /// Throws std::invalid_argument unless targets start with REG and are
    /// pairwise distinct.
    explicit GenomeSpace(std::vector<AccessTarget> targets);

    /// REG, L1 load+store, then loads from L2, L3 and RAM.
    static GenomeSpace all_levels();

    const std::vector<AccessTarget>& targets() const { return targets_; }
    std::size_t genes() const { return targets_.size(); }

    /// Drops zero counts. Throws std::invalid_argument for an all-zero genome
    /// or a length mismatch.
    AccessSet decode(const Genome& genome) const;

private:
    std::vector<AccessTarget> targets_;
};

struct Individual {
    Genome genome;
    /// objective 0 is power in W, objective 1 is IPC
    std::vector<double> objectives;
    bool valid = true;
    /// Non-domination rank and crowding distance, set by select_survivors.
    std::size_t rank = 0;
    double crowding = 0.0;
};

struct OptimizerParams {
    std::size_t population = 40;
    std::size_t generations = 20;
    /// per-gene probability of resampling
    double mutation_prob = 0.35;
    std::uint32_t max_count = 10;
    std::uint64_t rng_seed = 0;
    /// Evaluations within a generation may run on this many threads.
    std::size_t threads = 1;

    void validate() const;
};

/// True iff `a` is at least as good as `b` in every objective and strictly
/// better in one (all objectives are maximized). Throws std::invalid_argument
/// on an arity mismatch.
bool dominates(const Individual& a, const Individual& b);

/// Deb's fast non-dominated sort. Returns fronts of indices into `population`,
/// best first. When `dominance_checks` is given it receives the number of
/// pairwise dominance tests performed.
std::vector<std::vector<std::size_t>> fast_nondominated_sort(std::span<const Individual> population,
                                                             std::size_t* dominance_checks = nullptr);

/// Crowding distance of every member of one front.
std::vector<double> crowding_distance(std::span<const Individual> front);

/// The better of population[a] and population[b]: lower rank, then larger
/// crowding distance, then lower index.
std::size_t tournament_winner(std::span<const Individual> population, std::size_t a, std::size_t b);

/// Binary tournament between two uniformly drawn members.
std::size_t tournament_select(std::span<const Individual> population, Rng& rng);

/// Sets one uniformly chosen gene to 1 if all counts are zero.
void repair(Genome& genome, Rng& rng);

Genome random_genome(std::size_t genes, std::uint32_t max_count, Rng& rng);

/// Uniform crossover, clamped to [0, max_count] and repaired.
Genome recombine(const Genome& a, const Genome& b, std::uint32_t max_count, Rng& rng);

/// Resamples each gene from [0, max_count] with probability `probability`,
/// then repairs.
Genome mutate(Genome genome, double probability, std::uint32_t max_count, Rng& rng);

/// NSGA-II environmental selection: ranks `candidates`, fills up to `size`
/// front by front and truncates the split front by descending crowding
/// distance. Invalid individuals rank below all valid ones. The returned
/// individuals carry rank and crowding distance.
std::vector<Individual> select_survivors(std::vector<Individual> candidates, std::size_t size);

using Evaluator = std::function<Individual(const Genome&)>;

class EvaluationError : public std::runtime_error {
public:
    EvaluationError(std::size_t generation, std::size_t index, const std::string& what);
    std::size_t generation() const { return generation_; }
    std::size_t index() const { return index_; }

private:
    std::size_t generation_;
    std::size_t index_;
};

struct EvolveResult {
    std::vector<Individual> population;
    /// valid non-dominated members of the final population
    std::vector<Individual> pareto_front;
    std::size_t evaluations = 0;
};

/// Called after each generation's survivors are chosen (generation 0 is the
/// random initial population).
using GenerationObserver = std::function<void(std::size_t generation, const std::vector<Individual>& population)>;

/// One tab-separated log line: generation, index, access list, objectives,
/// valid flag.
std::string format_log_line(std::size_t generation, std::size_t index, const GenomeSpace& space,
                            const Individual& individual);

/// Runs NSGA-II for params.generations generations after a random initial
/// population, appending one line per evaluation to `log` when given.
EvolveResult evolve(const OptimizerParams& params, const GenomeSpace& space, const Evaluator& evaluator,
                    std::ostream* log = nullptr, const GenerationObserver& observer = nullptr);

}  // namespace ember
