#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ember {

/// Levels of the memory hierarchy a slot can target, ordered from closest to
/// farthest.
enum class MemoryLevel : std::uint8_t { Reg, L1, L2, L3, Ram };

/// How a slot touches its memory level. Only meaningful for non-register
/// levels.
enum class AccessPattern : std::uint8_t { Load, Store, LoadStore, TwoLoadStore, Prefetch };

inline constexpr std::size_t kMemoryLevelCount = 5;

std::string_view to_string(MemoryLevel level);
std::string_view to_string(AccessPattern pattern);

/// The thing a slot works on: registers, or a (level, pattern) pair.
class AccessTarget {
public:
    static AccessTarget reg() { return AccessTarget{}; }
    static AccessTarget memory(MemoryLevel level, AccessPattern pattern);

    MemoryLevel level() const { return level_; }
    /// Empty for register targets.
    std::optional<AccessPattern> pattern() const { return pattern_; }
    bool is_register() const { return level_ == MemoryLevel::Reg; }

    /// Canonical token, e.g. "REG" or "L2_LS".
    std::string token() const;

    friend bool operator==(const AccessTarget&, const AccessTarget&) = default;

private:
    AccessTarget() = default;
    AccessTarget(MemoryLevel level, AccessPattern pattern) : level_(level), pattern_(pattern) {}

    MemoryLevel level_ = MemoryLevel::Reg;
    std::optional<AccessPattern> pattern_;
};

struct AccessGroup {
    AccessTarget target;
    std::uint32_t count = 1;

    friend bool operator==(const AccessGroup&, const AccessGroup&) = default;
};

/// Ordered, non-empty list of groups with pairwise distinct targets.
class AccessSet {
public:
    /// Throws std::invalid_argument when empty, when a count is zero or when
    /// two groups share a target.
    explicit AccessSet(std::vector<AccessGroup> groups);

    const std::vector<AccessGroup>& groups() const { return groups_; }
    std::size_t size() const { return groups_.size(); }
    /// Sum of all group counts.
    std::size_t total() const;

    friend bool operator==(const AccessSet&, const AccessSet&) = default;

private:
    std::vector<AccessGroup> groups_;
};

enum class ParseErrorKind { Syntax, DuplicateTarget, InvalidCount, UnknownLevel, UnknownPattern };

class ParseError : public std::runtime_error {
public:
    ParseError(ParseErrorKind kind, std::size_t position, const std::string& message);

    ParseErrorKind kind() const { return kind_; }
    /// Byte offset into the parsed text where the problem starts.
    std::size_t position() const { return position_; }

private:
    ParseErrorKind kind_;
    std::size_t position_;
};

/// Parses "REG:4,L1_L:2,L2_L:1" style access lists. Tokens are case
/// sensitive and whitespace is not accepted.
AccessSet parse_access_set(std::string_view text);

/// Canonical text form; parse_access_set(format_access_set(s)) == s.
std::string format_access_set(const AccessSet& set);

/// Description of the arithmetic work one unrolled unit of the loop performs.
struct InstructionSetDef {
    std::string id;
    std::uint32_t fma_per_set = 0;
    std::uint32_t alu_per_set = 0;
    std::uint32_t instructions_per_set = 1;
    std::uint32_t bytes_per_set = 0;

    /// Throws std::invalid_argument if the counts are inconsistent.
    void validate() const;
};

/// Instruction sets known to a build, in registration order.
class InstructionSetRegistry {
public:
    void add(InstructionSetDef def);
    const InstructionSetDef* find(std::string_view id) const;
    const std::vector<InstructionSetDef>& all() const { return defs_; }
    bool empty() const { return defs_.empty(); }

private:
    std::vector<InstructionSetDef> defs_;
};

/// Registry with the sets shipped in this build.
InstructionSetRegistry builtin_instruction_sets();

struct WorkloadConfig {
    std::string instruction_set;
    std::size_t unroll = 1;
    AccessSet accesses;
};

/// One unrolled loop body: exactly `unroll` slots, each naming its target.
struct Schedule {
    std::vector<AccessTarget> slots;

    std::size_t size() const { return slots.size(); }
    std::size_t count(const AccessTarget& target) const;
};

/// Spreads the groups of `set` over total() slots so that occurrences of the
/// same group are as far apart as possible on the circular loop. Returns, for
/// every slot, the index of the group placed there.
///
/// A group with count a >= 2 in a sequence of length n is placed with circular
/// gaps of at least floor(n / a) whenever an arrangement meeting that bound
/// for every group exists and is found within the search budget. Otherwise the
/// bound is relaxed uniformly until an arrangement exists.
std::vector<std::size_t> build_base_sequence(const AccessSet& set);

/// Smallest circular distance between consecutive occurrences of `group` in
/// `sequence`, or the sequence length if it occurs at most once.
std::size_t min_circular_gap(const std::vector<std::size_t>& sequence, std::size_t group);

/// Tiles the base sequence cyclically to exactly config.unroll slots.
Schedule build_schedule(const WorkloadConfig& config);

}  // namespace ember
