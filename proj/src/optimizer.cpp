#include "ember/optimizer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <ostream>
#include <thread>

#include "ember/measurement.hpp"

namespace ember {

GenomeSpace::GenomeSpace(std::vector<AccessTarget> targets) : targets_(std::move(targets)) {
    if (targets_.empty() || !targets_.front().is_register()) {
        throw std::invalid_argument("genome targets must start with REG");
    }
    for (std::size_t i = 0; i < targets_.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (targets_[i] == targets_[j]) {
                throw std::invalid_argument("duplicate genome target " + targets_[i].token());
            }
        }
    }
}

GenomeSpace GenomeSpace::all_levels() {
    return GenomeSpace({
        AccessTarget::reg(),
        AccessTarget::memory(MemoryLevel::L1, AccessPattern::LoadStore),
        AccessTarget::memory(MemoryLevel::L2, AccessPattern::Load),
        AccessTarget::memory(MemoryLevel::L3, AccessPattern::Load),
        AccessTarget::memory(MemoryLevel::Ram, AccessPattern::Load),
    });
}

AccessSet GenomeSpace::decode(const Genome& genome) const {
    if (genome.counts.size() != targets_.size()) {
        throw std::invalid_argument("genome has " + std::to_string(genome.counts.size()) + " genes, expected " +
                                    std::to_string(targets_.size()));
    }
    std::vector<AccessGroup> groups;
    for (std::size_t i = 0; i < targets_.size(); ++i) {
        if (genome.counts[i] > 0) {
            groups.push_back(AccessGroup{targets_[i], genome.counts[i]});
        }
    }
    return AccessSet(std::move(groups));
}

void OptimizerParams::validate() const {
    if (population < 4 || population % 2 != 0) {
        throw std::invalid_argument("population must be even and at least 4");
    }
    if (generations < 1) {
        throw std::invalid_argument("at least one generation is required");
    }
    if (!(mutation_prob >= 0.0 && mutation_prob <= 1.0)) {
        throw std::invalid_argument("mutation probability must lie in [0, 1]");
    }
    if (threads < 1) {
        throw std::invalid_argument("at least one evaluation thread is required");
    }
}

bool dominates(const Individual& a, const Individual& b) {
    if (a.objectives.size() != b.objectives.size()) {
        throw std::invalid_argument("objective arity mismatch");
    }
    bool strictly_better = false;
    for (std::size_t k = 0; k < a.objectives.size(); ++k) {
        if (a.objectives[k] < b.objectives[k]) {
            return false;
        }
        if (a.objectives[k] > b.objectives[k]) {
            strictly_better = true;
        }
    }
    return strictly_better;
}

std::vector<std::vector<std::size_t>> fast_nondominated_sort(std::span<const Individual> population,
                                                             std::size_t* dominance_checks) {
    const auto n = population.size();
    std::vector<std::vector<std::size_t>> dominated(n);
    std::vector<std::size_t> domination_count(n, 0);
    std::size_t checks = 0;
    std::vector<std::vector<std::size_t>> fronts;
    std::vector<std::size_t> current;
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t q = p + 1; q < n; ++q) {
            checks += 2;
            if (dominates(population[p], population[q])) {
                dominated[p].push_back(q);
                ++domination_count[q];
            } else if (dominates(population[q], population[p])) {
                dominated[q].push_back(p);
                ++domination_count[p];
            }
        }
    }
    for (std::size_t p = 0; p < n; ++p) {
        if (domination_count[p] == 0) {
            current.push_back(p);
        }
    }
    while (!current.empty()) {
        std::vector<std::size_t> next;
        for (const auto p : current) {
            for (const auto q : dominated[p]) {
                if (--domination_count[q] == 0) {
                    next.push_back(q);
                }
            }
        }
        std::sort(next.begin(), next.end());
        fronts.push_back(std::move(current));
        current = std::move(next);
    }
    if (dominance_checks != nullptr) {
        *dominance_checks = checks;
    }
    return fronts;
}

std::vector<double> crowding_distance(std::span<const Individual> front) {
    const auto n = front.size();
    constexpr auto inf = std::numeric_limits<double>::infinity();
    if (n <= 2) {
        return std::vector<double>(n, inf);
    }
    std::vector<double> distance(n, 0.0);
    const auto objectives = front.front().objectives.size();
    std::vector<std::size_t> order(n);
    for (std::size_t k = 0; k < objectives; ++k) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return front[a].objectives[k] < front[b].objectives[k];
        });
        const auto lo = front[order.front()].objectives[k];
        const auto hi = front[order.back()].objectives[k];
        if (!(hi > lo)) {
            continue;
        }
        distance[order.front()] = inf;
        distance[order.back()] = inf;
        for (std::size_t i = 1; i + 1 < n; ++i) {
            distance[order[i]] += (front[order[i + 1]].objectives[k] - front[order[i - 1]].objectives[k]) / (hi - lo);
        }
    }
    return distance;
}

std::size_t tournament_winner(std::span<const Individual> population, std::size_t a, std::size_t b) {
    const auto& x = population[a];
    const auto& y = population[b];
    if (x.rank != y.rank) {
        return x.rank < y.rank ? a : b;
    }
    if (x.crowding != y.crowding) {
        return x.crowding > y.crowding ? a : b;
    }
    return std::min(a, b);
}

std::size_t tournament_select(std::span<const Individual> population, Rng& rng) {
    if (population.empty()) {
        throw std::invalid_argument("tournament on an empty population");
    }
    std::uniform_int_distribution<std::size_t> pick(0, population.size() - 1);
    const auto a = pick(rng);
    const auto b = pick(rng);
    return tournament_winner(population, a, b);
}

void repair(Genome& genome, Rng& rng) {
    if (genome.counts.empty()) {
        return;
    }
    if (std::all_of(genome.counts.begin(), genome.counts.end(), [](auto c) { return c == 0; })) {
        std::uniform_int_distribution<std::size_t> pick(0, genome.counts.size() - 1);
        genome.counts[pick(rng)] = 1;
    }
}

Genome random_genome(std::size_t genes, std::uint32_t max_count, Rng& rng) {
    std::uniform_int_distribution<std::uint32_t> gene(0, max_count);
    Genome genome;
    genome.counts.resize(genes);
    for (auto& c : genome.counts) {
        c = gene(rng);
    }
    repair(genome, rng);
    return genome;
}

Genome recombine(const Genome& a, const Genome& b, std::uint32_t max_count, Rng& rng) {
    if (a.counts.size() != b.counts.size()) {
        throw std::invalid_argument("recombining genomes of different length");
    }
    std::bernoulli_distribution coin(0.5);
    Genome child;
    child.counts.resize(a.counts.size());
    for (std::size_t i = 0; i < a.counts.size(); ++i) {
        child.counts[i] = std::min(coin(rng) ? a.counts[i] : b.counts[i], max_count);
    }
    repair(child, rng);
    return child;
}

Genome mutate(Genome genome, double probability, std::uint32_t max_count, Rng& rng) {
    std::bernoulli_distribution hit(probability);
    std::uniform_int_distribution<std::uint32_t> gene(0, max_count);
    for (auto& c : genome.counts) {
        if (hit(rng)) {
            c = gene(rng);
        }
    }
    repair(genome, rng);
    return genome;
}

std::vector<Individual> select_survivors(std::vector<Individual> candidates, std::size_t size) {
    std::vector<Individual> valid;
    std::vector<Individual> invalid;
    for (auto& individual : candidates) {
        (individual.valid ? valid : invalid).push_back(std::move(individual));
    }

    const auto fronts = fast_nondominated_sort(valid);
    std::vector<Individual> survivors;
    survivors.reserve(size);
    for (std::size_t r = 0; r < fronts.size() && survivors.size() < size; ++r) {
        std::vector<Individual> front;
        for (const auto index : fronts[r]) {
            front.push_back(valid[index]);
        }
        const auto distance = crowding_distance(front);
        for (std::size_t i = 0; i < front.size(); ++i) {
            front[i].rank = r;
            front[i].crowding = distance[i];
        }
        if (survivors.size() + front.size() > size) {
            std::vector<std::size_t> order(front.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return distance[a] > distance[b]; });
            order.resize(size - survivors.size());
            std::sort(order.begin(), order.end());
            for (const auto i : order) {
                survivors.push_back(std::move(front[i]));
            }
        } else {
            for (auto& member : front) {
                survivors.push_back(std::move(member));
            }
        }
    }
    for (auto& member : invalid) {
        if (survivors.size() >= size) {
            break;
        }
        member.rank = fronts.size();
        member.crowding = 0.0;
        survivors.push_back(std::move(member));
    }
    return survivors;
}

EvaluationError::EvaluationError(std::size_t generation, std::size_t index, const std::string& what)
    : std::runtime_error("generation " + std::to_string(generation) + ", individual " + std::to_string(index) + ": " +
                         what),
      generation_(generation),
      index_(index) {}

std::string format_log_line(std::size_t generation, std::size_t index, const GenomeSpace& space,
                            const Individual& individual) {
    std::string line = std::to_string(generation);
    line += '\t';
    line += std::to_string(index);
    line += '\t';
    line += format_access_set(space.decode(individual.genome));
    for (const auto value : individual.objectives) {
        line += '\t';
        line += format_value(value);
    }
    line += '\t';
    line += individual.valid ? '1' : '0';
    line += '\n';
    return line;
}

namespace {

std::vector<Individual> evaluate_batch(const std::vector<Genome>& genomes, const Evaluator& evaluator,
                                       std::size_t generation, std::size_t threads) {
    std::vector<Individual> results(genomes.size());
    std::vector<std::exception_ptr> errors(genomes.size());
    auto work = [&](std::size_t i) {
        try {
            results[i] = evaluator(genomes[i]);
            results[i].genome = genomes[i];
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    if (threads <= 1 || genomes.size() <= 1) {
        for (std::size_t i = 0; i < genomes.size(); ++i) {
            work(i);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> workers;
        for (std::size_t t = 0; t < std::min(threads, genomes.size()); ++t) {
            workers.emplace_back([&] {
                for (auto i = next++; i < genomes.size(); i = next++) {
                    work(i);
                }
            });
        }
    }
    for (std::size_t i = 0; i < errors.size(); ++i) {
        if (errors[i]) {
            try {
                std::rethrow_exception(errors[i]);
            } catch (const std::exception& e) {
                throw EvaluationError(generation, i, e.what());
            } catch (...) {
                throw EvaluationError(generation, i, "unknown error");
            }
        }
    }
    return results;
}

void log_batch(std::ostream* log, std::size_t generation, const GenomeSpace& space,
               const std::vector<Individual>& batch) {
    if (log == nullptr) {
        return;
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
        *log << format_log_line(generation, i, space, batch[i]);
    }
    log->flush();
}

}  // namespace

EvolveResult evolve(const OptimizerParams& params, const GenomeSpace& space, const Evaluator& evaluator,
                    std::ostream* log, const GenerationObserver& observer) {
    params.validate();
    Rng rng(params.rng_seed);
    EvolveResult result;

    std::vector<Genome> genomes;
    for (std::size_t i = 0; i < params.population; ++i) {
        genomes.push_back(random_genome(space.genes(), params.max_count, rng));
    }
    auto batch = evaluate_batch(genomes, evaluator, 0, params.threads);
    result.evaluations += batch.size();
    log_batch(log, 0, space, batch);
    auto population = select_survivors(std::move(batch), params.population);
    if (observer) {
        observer(0, population);
    }

    for (std::size_t generation = 1; generation <= params.generations; ++generation) {
        genomes.clear();
        for (std::size_t i = 0; i < params.population; ++i) {
            const auto& a = population[tournament_select(population, rng)];
            const auto& b = population[tournament_select(population, rng)];
            auto child = recombine(a.genome, b.genome, params.max_count, rng);
            genomes.push_back(mutate(std::move(child), params.mutation_prob, params.max_count, rng));
        }
        auto children = evaluate_batch(genomes, evaluator, generation, params.threads);
        result.evaluations += children.size();
        log_batch(log, generation, space, children);

        std::vector<Individual> merged = std::move(population);
        merged.insert(merged.end(), std::make_move_iterator(children.begin()), std::make_move_iterator(children.end()));
        population = select_survivors(std::move(merged), params.population);
        if (observer) {
            observer(generation, population);
        }
    }

    for (const auto& member : population) {
        if (member.valid && member.rank == 0) {
            result.pareto_front.push_back(member);
        }
    }
    result.population = std::move(population);
    return result;
}

}  // namespace ember
