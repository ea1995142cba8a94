#pragma once
#include <algorithm>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sal/common.hpp"

namespace sal {

// Seeded random stream. Distribution objects are constructed per call so the
// serializable state is exactly the engine state; parallel consumers must use
// disjoint streams (see derive()).
class RngStream {
public:
    RngStream() : engine_(0) {}
    explicit RngStream(std::uint64_t seed) : engine_(seed) {}

    // Child stream with a label, e.g. derive("augment") or derive("fold", 3).
    RngStream derive(const std::string& label, std::uint64_t salt = 0) const {
        std::uint64_t h = fnv1a(label);
        h = fnv1a(&salt, sizeof(salt), h);
        RngStream copy = *this;
        std::uint64_t base = copy.engine_();
        return RngStream(base ^ h);
    }

    double uniform(double lo = 0.0, double hi = 1.0) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(engine_);
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        std::normal_distribution<double> d(mean, stddev);
        return d(engine_);
    }

    // Inclusive bounds.
    long long randint(long long lo, long long hi) {
        std::uniform_int_distribution<long long> d(lo, hi);
        return d(engine_);
    }

    bool bernoulli(double p) {
        std::bernoulli_distribution d(p);
        return d(engine_);
    }

    template <typename It>
    void shuffle(It first, It last) {
        std::shuffle(first, last, engine_);
    }

    // k distinct values from [0, n), in draw order.
    std::vector<int> sample_without_replacement(int n, int k) {
        require(k <= n, "sample_without_replacement: k=", k, " > n=", n);
        std::vector<int> pool(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
        std::vector<int> out;
        out.reserve(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) {
            long long j = randint(i, n - 1);
            std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
            out.push_back(pool[static_cast<std::size_t>(i)]);
        }
        return out;
    }

    std::string save_state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void load_state(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
        require(!is.fail(), "RngStream::load_state: malformed state string");
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

} // namespace sal
