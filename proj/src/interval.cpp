#include "brf/interval.hpp"

#include "brf/isa.hpp"

#include <algorithm>
#include <bit>

namespace brf {

namespace {
constexpr std::int64_t kI64Min = std::numeric_limits<std::int64_t>::min();
constexpr std::int64_t kI64Max = std::numeric_limits<std::int64_t>::max();
constexpr std::uint64_t kU64Max = ~0ULL;

// Smallest all-ones mask covering v (0 -> 0).
std::uint64_t bit_fill(std::uint64_t v) {
    if (v == 0)
        return 0;
    int width = 64 - std::countl_zero(v);
    return width == 64 ? kU64Max : (1ULL << width) - 1;
}
} // namespace

ValueRange ValueRange::unsigned_range(std::uint64_t lo, std::uint64_t hi) {
    ValueRange r;
    r.umin = lo;
    r.umax = hi;
    r.sync();
    return r;
}

void ValueRange::sync() {
    // Unsigned view determines sign: all values on one side of 2^63.
    if (umax <= static_cast<std::uint64_t>(kI64Max) ||
        umin > static_cast<std::uint64_t>(kI64Max)) {
        smin = std::max(smin, static_cast<std::int64_t>(umin));
        smax = std::min(smax, static_cast<std::int64_t>(umax));
    }
    // Signed view with a single sign determines unsigned bounds.
    if (smin >= 0 || smax < 0) {
        umin = std::max(umin, static_cast<std::uint64_t>(smin));
        umax = std::min(umax, static_cast<std::uint64_t>(smax));
    }
}

ValueRange ValueRange::intersect(const ValueRange& o) const {
    ValueRange r;
    r.umin = std::max(umin, o.umin);
    r.umax = std::min(umax, o.umax);
    r.smin = std::max(smin, o.smin);
    r.smax = std::min(smax, o.smax);
    if (r.valid())
        r.sync();
    return r;
}

ValueRange range_add(const ValueRange& a, const ValueRange& b) {
    ValueRange r = ValueRange::top();
    if (a.umax <= kU64Max - b.umax) {
        r.umin = a.umin + b.umin;
        r.umax = a.umax + b.umax;
    }
    __int128 lo = static_cast<__int128>(a.smin) + b.smin;
    __int128 hi = static_cast<__int128>(a.smax) + b.smax;
    if (lo >= kI64Min && hi <= kI64Max) {
        r.smin = static_cast<std::int64_t>(lo);
        r.smax = static_cast<std::int64_t>(hi);
    }
    r.sync();
    return r;
}

ValueRange range_sub(const ValueRange& a, const ValueRange& b) {
    ValueRange r = ValueRange::top();
    if (a.umin >= b.umax) {
        r.umin = a.umin - b.umax;
        r.umax = a.umax - b.umin;
    }
    __int128 lo = static_cast<__int128>(a.smin) - b.smax;
    __int128 hi = static_cast<__int128>(a.smax) - b.smin;
    if (lo >= kI64Min && hi <= kI64Max) {
        r.smin = static_cast<std::int64_t>(lo);
        r.smax = static_cast<std::int64_t>(hi);
    }
    r.sync();
    return r;
}

ValueRange range_mul(const ValueRange& a, const ValueRange& b) {
    ValueRange r = ValueRange::top();
    __uint128_t hi = static_cast<__uint128_t>(a.umax) * b.umax;
    if (hi <= kU64Max) {
        r.umin = a.umin * b.umin;
        r.umax = static_cast<std::uint64_t>(hi);
        r.sync();
    }
    return r;
}

ValueRange range_div(const ValueRange& a, const ValueRange& b) {
    // Runtime semantics: division by zero yields zero.
    ValueRange r = ValueRange::top();
    std::uint64_t div_min = b.umin == 0 ? 1 : b.umin;
    r.umax = a.umax / div_min;
    r.umin = b.umin == 0 ? 0 : a.umin / b.umax;
    r.smin = kI64Min;
    r.smax = kI64Max;
    r.sync();
    return r;
}

ValueRange range_mod(const ValueRange& a, const ValueRange& b) {
    // Runtime semantics: x % 0 leaves x unchanged.
    ValueRange r = ValueRange::top();
    std::uint64_t bound = b.umax == 0 ? 0 : b.umax - 1;
    if (b.umin == 0)
        bound = std::max(bound, a.umax);
    r.umin = 0;
    r.umax = bound;
    r.smin = kI64Min;
    r.smax = kI64Max;
    r.sync();
    return r;
}

ValueRange range_and(const ValueRange& a, const ValueRange& b) {
    ValueRange r = ValueRange::top();
    r.umin = 0;
    r.umax = std::min(a.umax, b.umax);
    r.smin = kI64Min;
    r.smax = kI64Max;
    r.sync();
    return r;
}

ValueRange range_or(const ValueRange& a, const ValueRange& b) {
    ValueRange r = ValueRange::top();
    r.umin = std::max(a.umin, b.umin);
    r.umax = bit_fill(a.umax | b.umax);
    r.smin = kI64Min;
    r.smax = kI64Max;
    r.sync();
    return r;
}

ValueRange range_xor(const ValueRange& a, const ValueRange& b) {
    ValueRange r = ValueRange::top();
    r.umin = 0;
    r.umax = bit_fill(a.umax | b.umax);
    r.smin = kI64Min;
    r.smax = kI64Max;
    r.sync();
    return r;
}

ValueRange range_lsh(const ValueRange& a, const ValueRange& b) {
    // Shift amounts are masked to 0..63 at runtime, so a bound >= 64 tells
    // us nothing about the effective amount.
    ValueRange r = ValueRange::top();
    if (b.umax < 64) {
        int lo_cz = std::countl_zero(a.umax | 1ULL);
        if (static_cast<std::uint64_t>(lo_cz) >= b.umax) {
            // No bits shifted out for any amount in range: monotone.
            r.umin = a.umin << b.umin;
            r.umax = a.umax << b.umax;
            r.smin = kI64Min;
            r.smax = kI64Max;
            r.sync();
        }
    }
    return r;
}

ValueRange range_rsh(const ValueRange& a, const ValueRange& b) {
    ValueRange r = ValueRange::top();
    r.umin = b.umax < 64 ? a.umin >> b.umax : 0;
    r.umax = a.umax >> b.umin % 64;
    if (b.umax >= 64)
        r.umax = a.umax; // masked amount may be 0
    r.smin = kI64Min;
    r.smax = kI64Max;
    r.sync();
    return r;
}

ValueRange range_arsh(const ValueRange& a, const ValueRange& b) {
    ValueRange r = ValueRange::top();
    if (b.umax < 64) {
        std::int64_t c0 = a.smin >> b.umin;
        std::int64_t c1 = a.smin >> b.umax;
        std::int64_t c2 = a.smax >> b.umin;
        std::int64_t c3 = a.smax >> b.umax;
        r.smin = std::min(std::min(c0, c1), std::min(c2, c3));
        r.smax = std::max(std::max(c0, c1), std::max(c2, c3));
        r.umin = 0;
        r.umax = kU64Max;
        r.sync();
    }
    return r;
}

ValueRange range_neg(const ValueRange& a) {
    ValueRange r = ValueRange::top();
    if (a.smin != kI64Min) {
        r.smin = -a.smax;
        r.smax = -a.smin;
        r.umin = 0;
        r.umax = kU64Max;
        r.sync();
    }
    return r;
}

std::uint64_t concrete_alu64(std::uint8_t alu_nibble, std::uint64_t dst, std::uint64_t src) {
    switch (alu_nibble) {
    case op::kAluAdd: return dst + src;
    case op::kAluSub: return dst - src;
    case op::kAluMul: return dst * src;
    case op::kAluDiv: return src == 0 ? 0 : dst / src;
    case op::kAluOr: return dst | src;
    case op::kAluAnd: return dst & src;
    case op::kAluLsh: return dst << (src & 63);
    case op::kAluRsh: return dst >> (src & 63);
    case op::kAluNeg: return static_cast<std::uint64_t>(-static_cast<std::int64_t>(dst));
    case op::kAluMod: return src == 0 ? dst : dst % src;
    case op::kAluXor: return dst ^ src;
    case op::kAluMov: return src;
    case op::kAluArsh:
        return static_cast<std::uint64_t>(static_cast<std::int64_t>(dst) >> (src & 63));
    }
    return 0;
}

std::uint64_t concrete_alu32(std::uint8_t alu_nibble, std::uint64_t dst, std::uint64_t src) {
    auto a = static_cast<std::uint32_t>(dst);
    auto b = static_cast<std::uint32_t>(src);
    std::uint32_t r = 0;
    switch (alu_nibble) {
    case op::kAluAdd: r = a + b; break;
    case op::kAluSub: r = a - b; break;
    case op::kAluMul: r = a * b; break;
    case op::kAluDiv: r = b == 0 ? 0 : a / b; break;
    case op::kAluOr: r = a | b; break;
    case op::kAluAnd: r = a & b; break;
    case op::kAluLsh: r = a << (b & 31); break;
    case op::kAluRsh: r = a >> (b & 31); break;
    case op::kAluNeg: r = static_cast<std::uint32_t>(-static_cast<std::int32_t>(a)); break;
    case op::kAluMod: r = b == 0 ? a : a % b; break;
    case op::kAluXor: r = a ^ b; break;
    case op::kAluMov: r = b; break;
    case op::kAluArsh: r = static_cast<std::uint32_t>(static_cast<std::int32_t>(a) >> (b & 31)); break;
    }
    return r;
}

} // namespace brf
