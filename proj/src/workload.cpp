#include "ember/workload.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <limits>
#include <tuple>

namespace ember {

namespace {

constexpr std::array<std::pair<std::string_view, MemoryLevel>, 4> kLevelTokens{{
    {"L1", MemoryLevel::L1},
    {"L2", MemoryLevel::L2},
    {"L3", MemoryLevel::L3},
    {"RAM", MemoryLevel::Ram},
}};

constexpr std::array<std::pair<std::string_view, AccessPattern>, 5> kPatternTokens{{
    {"L", AccessPattern::Load},
    {"S", AccessPattern::Store},
    {"LS", AccessPattern::LoadStore},
    {"2LS", AccessPattern::TwoLoadStore},
    {"P", AccessPattern::Prefetch},
}};

AccessTarget parse_target(std::string_view token, std::size_t offset) {
    if (token.empty()) {
        throw ParseError(ParseErrorKind::Syntax, offset, "missing target before ':'");
    }
    if (token == "REG") {
        return AccessTarget::reg();
    }
    const auto sep = token.find('_');
    const auto level_token = token.substr(0, sep);
    if (level_token == "REG") {
        throw ParseError(ParseErrorKind::Syntax, offset + 3, "register targets take no access pattern");
    }
    const auto level = std::find_if(kLevelTokens.begin(), kLevelTokens.end(),
                                    [&](const auto& entry) { return entry.first == level_token; });
    if (level == kLevelTokens.end()) {
        throw ParseError(ParseErrorKind::UnknownLevel, offset,
                         "unknown memory level '" + std::string(level_token) + "'");
    }
    if (sep == std::string_view::npos) {
        throw ParseError(ParseErrorKind::Syntax, offset + token.size(),
                         "expected '_<PATTERN>' after level " + std::string(level_token));
    }
    const auto pattern_token = token.substr(sep + 1);
    const auto pattern = std::find_if(kPatternTokens.begin(), kPatternTokens.end(),
                                      [&](const auto& entry) { return entry.first == pattern_token; });
    if (pattern == kPatternTokens.end()) {
        throw ParseError(ParseErrorKind::UnknownPattern, offset + sep + 1,
                         "unknown access pattern '" + std::string(pattern_token) + "'");
    }
    return AccessTarget::memory(level->second, pattern->second);
}

std::uint32_t parse_count(std::string_view token, std::size_t offset) {
    if (token.empty()) {
        throw ParseError(ParseErrorKind::Syntax, offset, "missing count after ':'");
    }
    if (token.front() == '-' && token.size() > 1 &&
        std::all_of(token.begin() + 1, token.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        throw ParseError(ParseErrorKind::InvalidCount, offset, "count must be positive");
    }
    if (!std::all_of(token.begin(), token.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        throw ParseError(ParseErrorKind::Syntax, offset,
                         "count '" + std::string(token) + "' is not a decimal integer");
    }
    std::uint32_t value = 0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec == std::errc::result_out_of_range) {
        throw ParseError(ParseErrorKind::InvalidCount, offset, "count out of range");
    }
    if (value == 0) {
        throw ParseError(ParseErrorKind::InvalidCount, offset, "count must be positive");
    }
    return value;
}

// Depth-first placement of the groups slot by slot. Each group i must keep a
// circular distance of at least `gap[i]` between its occurrences. Candidates
// are tried earliest-deadline first, where the deadline is the last slot at
// which the group's next occurrence can go and still fit its remaining
// occurrences before wrapping back to its first one.
class SpacingSearch {
public:
    SpacingSearch(const std::vector<std::size_t>& counts, std::vector<std::size_t> gap)
        : counts_(counts), gap_(std::move(gap)), n_(0) {
        for (const auto c : counts_) {
            n_ += c;
        }
    }

    std::optional<std::vector<std::size_t>> run(std::size_t node_budget) {
        const auto g = counts_.size();
        remaining_ = counts_;
        first_.assign(g, kNone);
        last_.assign(g, kNone);
        sequence_.clear();
        frames_.clear();
        frames_.reserve(n_ + 1);

        std::size_t nodes = 0;
        frames_.push_back(Frame{candidates(0)});
        while (!frames_.empty()) {
            auto& frame = frames_.back();
            if (frame.chosen != kNone) {
                undo(frame);
            }
            if (frame.next >= frame.candidates.size) {
                frames_.pop_back();
                continue;
            }
            if (++nodes > node_budget) {
                return std::nullopt;
            }
            apply(frame, frame.candidates.group[frame.next++]);
            const auto depth = sequence_.size();
            if (depth == n_) {
                return sequence_;
            }
            frames_.push_back(Frame{candidates(depth)});
        }
        return std::nullopt;
    }

private:
    static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

    // A set holds at most one group per distinct target.
    static constexpr std::size_t kMaxGroups = 1 + 4 * 5;

    struct Candidates {
        std::array<std::uint8_t, kMaxGroups> group{};
        std::size_t size = 0;
    };

    struct Frame {
        Candidates candidates;
        std::size_t next = 0;
        std::size_t chosen = kNone;
        std::size_t saved_first = kNone;
        std::size_t saved_last = kNone;
    };

    // Latest slot for the next occurrence of group i. Signed because it can
    // fall before slot 0 on hopeless branches.
    long long deadline(std::size_t i) const {
        const auto n = static_cast<long long>(n_);
        const auto gap = static_cast<long long>(gap_[i]);
        long long top = n - 1;
        if (counts_[i] >= 2 && first_[i] != kNone) {
            top = std::min(top, static_cast<long long>(first_[i]) + n - gap);
        }
        return top - static_cast<long long>(remaining_[i] - 1) * gap;
    }

    Candidates candidates(std::size_t slot) const {
        std::array<std::tuple<long long, std::size_t, std::size_t>, kMaxGroups> order;
        std::array<long long, kMaxGroups> deadlines;
        std::size_t orders = 0;
        std::size_t pending = 0;
        for (std::size_t i = 0; i < counts_.size(); ++i) {
            if (remaining_[i] == 0) {
                continue;
            }
            const auto dl = deadline(i);
            deadlines[pending++] = dl;
            if (last_[i] != kNone && slot - last_[i] < gap_[i]) {
                continue;
            }
            // earliest deadline, then widest required gap, then input order
            order[orders++] = {dl, kNone - gap_[i], i};
        }
        // Every pending group needs its own slot for its next occurrence.
        std::sort(deadlines.begin(), deadlines.begin() + pending);
        for (std::size_t k = 0; k < pending; ++k) {
            if (deadlines[k] < static_cast<long long>(slot + k)) {
                return {};
            }
        }
        std::sort(order.begin(), order.begin() + orders);
        Candidates result;
        for (std::size_t k = 0; k < orders; ++k) {
            result.group[k] = static_cast<std::uint8_t>(std::get<2>(order[k]));
        }
        result.size = orders;
        return result;
    }

    void apply(Frame& frame, std::size_t group) {
        frame.chosen = group;
        frame.saved_first = first_[group];
        frame.saved_last = last_[group];
        const auto slot = sequence_.size();
        if (first_[group] == kNone) {
            first_[group] = slot;
        }
        last_[group] = slot;
        --remaining_[group];
        sequence_.push_back(group);
    }

    void undo(Frame& frame) {
        const auto group = frame.chosen;
        sequence_.pop_back();
        ++remaining_[group];
        first_[group] = frame.saved_first;
        last_[group] = frame.saved_last;
        frame.chosen = kNone;
    }

    const std::vector<std::size_t>& counts_;
    std::vector<std::size_t> gap_;
    std::size_t n_;
    std::vector<std::size_t> remaining_;
    std::vector<std::size_t> first_;
    std::vector<std::size_t> last_;
    std::vector<std::size_t> sequence_;
    std::vector<Frame> frames_;
};

constexpr std::size_t kSearchBudget = 2'000;

}  // namespace

std::string_view to_string(MemoryLevel level) {
    switch (level) {
        case MemoryLevel::Reg: return "REG";
        case MemoryLevel::L1: return "L1";
        case MemoryLevel::L2: return "L2";
        case MemoryLevel::L3: return "L3";
        case MemoryLevel::Ram: return "RAM";
    }
    return "?";
}

std::string_view to_string(AccessPattern pattern) {
    switch (pattern) {
        case AccessPattern::Load: return "L";
        case AccessPattern::Store: return "S";
        case AccessPattern::LoadStore: return "LS";
        case AccessPattern::TwoLoadStore: return "2LS";
        case AccessPattern::Prefetch: return "P";
    }
    return "?";
}

AccessTarget AccessTarget::memory(MemoryLevel level, AccessPattern pattern) {
    if (level == MemoryLevel::Reg) {
        throw std::invalid_argument("register targets take no access pattern");
    }
    return AccessTarget{level, pattern};
}

std::string AccessTarget::token() const {
    if (is_register()) {
        return "REG";
    }
    std::string out(to_string(level_));
    out += '_';
    out += to_string(*pattern_);
    return out;
}

AccessSet::AccessSet(std::vector<AccessGroup> groups) : groups_(std::move(groups)) {
    if (groups_.empty()) {
        throw std::invalid_argument("access set must contain at least one group");
    }
    for (std::size_t i = 0; i < groups_.size(); ++i) {
        if (groups_[i].count == 0) {
            throw std::invalid_argument("access group " + groups_[i].target.token() + " has count 0");
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (groups_[j].target == groups_[i].target) {
                throw std::invalid_argument("duplicate access target " + groups_[i].target.token());
            }
        }
    }
}

std::size_t AccessSet::total() const {
    std::size_t sum = 0;
    for (const auto& group : groups_) {
        sum += group.count;
    }
    return sum;
}

ParseError::ParseError(ParseErrorKind kind, std::size_t position, const std::string& message)
    : std::runtime_error("position " + std::to_string(position) + ": " + message),
      kind_(kind),
      position_(position) {}

AccessSet parse_access_set(std::string_view text) {
    if (text.empty()) {
        throw ParseError(ParseErrorKind::Syntax, 0, "empty access list");
    }
    std::vector<AccessGroup> groups;
    std::size_t offset = 0;
    while (true) {
        const auto comma = text.find(',', offset);
        const auto item = text.substr(offset, comma == std::string_view::npos ? std::string_view::npos
                                                                              : comma - offset);
        if (item.empty()) {
            throw ParseError(ParseErrorKind::Syntax, offset, "empty item in access list");
        }
        const auto colon = item.find(':');
        if (colon == std::string_view::npos) {
            throw ParseError(ParseErrorKind::Syntax, offset + item.size(), "expected ':<COUNT>'");
        }
        const auto target = parse_target(item.substr(0, colon), offset);
        const auto count = parse_count(item.substr(colon + 1), offset + colon + 1);
        for (const auto& existing : groups) {
            if (existing.target == target) {
                throw ParseError(ParseErrorKind::DuplicateTarget, offset,
                                 "duplicate target " + target.token());
            }
        }
        groups.push_back(AccessGroup{target, count});
        if (comma == std::string_view::npos) {
            break;
        }
        offset = comma + 1;
    }
    return AccessSet(std::move(groups));
}

std::string format_access_set(const AccessSet& set) {
    std::string out;
    for (const auto& group : set.groups()) {
        if (!out.empty()) {
            out += ',';
        }
        out += group.target.token();
        out += ':';
        out += std::to_string(group.count);
    }
    return out;
}

void InstructionSetDef::validate() const {
    if (id.empty()) {
        throw std::invalid_argument("instruction set needs an id");
    }
    if (fma_per_set + alu_per_set < 1) {
        throw std::invalid_argument("instruction set " + id + " performs no operations");
    }
    if (instructions_per_set < fma_per_set + alu_per_set) {
        throw std::invalid_argument("instruction set " + id +
                                    ": instructions_per_set below fma_per_set + alu_per_set");
    }
}

void InstructionSetRegistry::add(InstructionSetDef def) {
    def.validate();
    if (find(def.id) != nullptr) {
        throw std::invalid_argument("instruction set " + def.id + " registered twice");
    }
    defs_.push_back(std::move(def));
}

const InstructionSetDef* InstructionSetRegistry::find(std::string_view id) const {
    const auto it = std::find_if(defs_.begin(), defs_.end(), [&](const auto& def) { return def.id == id; });
    return it == defs_.end() ? nullptr : &*it;
}

InstructionSetRegistry builtin_instruction_sets() {
    InstructionSetRegistry registry;
    // two vfmadd231pd plus xor and an alternating shl/shr
    registry.add(InstructionSetDef{
        .id = "hsw_fma_alu", .fma_per_set = 2, .alu_per_set = 2, .instructions_per_set = 4, .bytes_per_set = 20});
    return registry;
}

std::size_t Schedule::count(const AccessTarget& target) const {
    return static_cast<std::size_t>(std::count(slots.begin(), slots.end(), target));
}

std::vector<std::size_t> build_base_sequence(const AccessSet& set) {
    const auto n = set.total();
    std::vector<std::size_t> counts;
    std::vector<std::size_t> ideal_gap;
    for (const auto& group : set.groups()) {
        counts.push_back(group.count);
        ideal_gap.push_back(group.count >= 2 ? n / group.count : 1);
    }
    const auto try_cap = [&](std::size_t cap, std::size_t budget) {
        std::vector<std::size_t> gap;
        for (const auto ideal : ideal_gap) {
            gap.push_back(std::min(ideal, cap));
        }
        return SpacingSearch(counts, std::move(gap)).run(budget);
    };
    const auto widest = *std::max_element(ideal_gap.begin(), ideal_gap.end());
    if (auto found = try_cap(widest, kSearchBudget)) {
        return *found;
    }
    // Not every floor(n/a) bound can be met at once. Binary search for the
    // largest cap on the required gaps that still admits an arrangement,
    // so narrow groups keep their bound and only wide ones give way.
    // A cap of 1 is a plain counting constraint and always succeeds.
    std::size_t lo = 1;
    std::size_t hi = widest - 1;
    std::optional<std::vector<std::size_t>> best;
    while (lo < hi) {
        const auto mid = lo + (hi - lo + 1) / 2;
        if (auto found = try_cap(mid, kSearchBudget)) {
            best = std::move(found);
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    if (best && lo > 1) {
        return *best;
    }
    if (auto found = try_cap(lo, std::numeric_limits<std::size_t>::max())) {
        return *found;
    }
    throw std::logic_error("interleaving search failed with unit gaps");
}

std::size_t min_circular_gap(const std::vector<std::size_t>& sequence, std::size_t group) {
    const auto n = sequence.size();
    std::vector<std::size_t> positions;
    for (std::size_t j = 0; j < n; ++j) {
        if (sequence[j] == group) {
            positions.push_back(j);
        }
    }
    if (positions.size() <= 1) {
        return n;
    }
    std::size_t best = n - positions.back() + positions.front();
    for (std::size_t k = 1; k < positions.size(); ++k) {
        best = std::min(best, positions[k] - positions[k - 1]);
    }
    return best;
}

Schedule build_schedule(const WorkloadConfig& config) {
    if (config.unroll == 0) {
        throw std::invalid_argument("unroll factor must be positive");
    }
    const auto base = build_base_sequence(config.accesses);
    const auto& groups = config.accesses.groups();
    Schedule schedule;
    schedule.slots.reserve(config.unroll);
    for (std::size_t j = 0; j < config.unroll; ++j) {
        schedule.slots.push_back(groups[base[j % base.size()]].target);
    }
    return schedule;
}

}  // namespace ember
