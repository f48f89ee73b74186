#pragma once
#include <cstdint>
#include <limits>

namespace brf {

// Sound 64-bit value range tracking both unsigned and signed bounds, the
// abstraction the verifier model uses instead of bit-level tnum tracking.
// Every operation over-approximates: for any concrete inputs inside the
// operand ranges, the concrete result is inside the result range in both
// the unsigned and the signed view.
struct ValueRange {
    std::uint64_t umin = 0;
    std::uint64_t umax = ~0ULL;
    std::int64_t smin = std::numeric_limits<std::int64_t>::min();
    std::int64_t smax = std::numeric_limits<std::int64_t>::max();

    static ValueRange top() { return {}; }
    static ValueRange constant(std::uint64_t v) {
        ValueRange r;
        r.umin = r.umax = v;
        r.smin = r.smax = static_cast<std::int64_t>(v);
        return r;
    }
    // Unsigned interval [lo, hi]; signed bounds derived when possible.
    static ValueRange unsigned_range(std::uint64_t lo, std::uint64_t hi);

    bool is_const() const { return umin == umax; }
    std::uint64_t const_value() const { return umin; }
    bool contains(std::uint64_t v) const {
        return v >= umin && v <= umax && static_cast<std::int64_t>(v) >= smin &&
               static_cast<std::int64_t>(v) <= smax;
    }
    bool valid() const { return umin <= umax && smin <= smax; }

    // Tightens each view from the other where one determines the sign.
    void sync();
    // Intersects with another range; result may be empty (valid() false),
    // which marks an infeasible path.
    ValueRange intersect(const ValueRange& o) const;

    bool operator==(const ValueRange&) const = default;
};

ValueRange range_add(const ValueRange& a, const ValueRange& b);
ValueRange range_sub(const ValueRange& a, const ValueRange& b);
ValueRange range_mul(const ValueRange& a, const ValueRange& b);
ValueRange range_div(const ValueRange& a, const ValueRange& b);  // unsigned; x/0 == 0
ValueRange range_mod(const ValueRange& a, const ValueRange& b);  // unsigned; x%0 == x
ValueRange range_and(const ValueRange& a, const ValueRange& b);
ValueRange range_or(const ValueRange& a, const ValueRange& b);
ValueRange range_xor(const ValueRange& a, const ValueRange& b);
ValueRange range_lsh(const ValueRange& a, const ValueRange& b);  // shift amount masked to 63
ValueRange range_rsh(const ValueRange& a, const ValueRange& b);
ValueRange range_arsh(const ValueRange& a, const ValueRange& b);
ValueRange range_neg(const ValueRange& a);

// Concrete semantics shared by both execution engines, so that the range
// tests and the interpreters agree on division and shift edge cases.
std::uint64_t concrete_alu64(std::uint8_t alu_nibble, std::uint64_t dst, std::uint64_t src);
// 32-bit variant: operates on the low words, result zero-extended.
std::uint64_t concrete_alu32(std::uint8_t alu_nibble, std::uint64_t dst, std::uint64_t src);

} // namespace brf
