#pragma once
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace sal {

// All precondition / invariant violations surface as sal::Error with a
// message naming the offending entity.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}

template <typename Head, typename... Tail>
void format_into(std::ostringstream& os, Head&& head, Tail&&... tail) {
    os << std::forward<Head>(head);
    format_into(os, std::forward<Tail>(tail)...);
}
} // namespace detail

template <typename... Args>
std::string cat(Args&&... args) {
    std::ostringstream os;
    detail::format_into(os, std::forward<Args>(args)...);
    return os.str();
}

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
    throw Error(cat(std::forward<Args>(args)...));
}

template <typename... Args>
void require(bool cond, Args&&... args) {
    if (!cond) fail(std::forward<Args>(args)...);
}

// FNV-1a, used for architecture digests in checkpoints.
inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t seed = 0xcbf29ce484222325ull) {
    return fnv1a(s.data(), s.size(), seed);
}

} // namespace sal
