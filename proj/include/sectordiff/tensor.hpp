#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "digest.hpp"
#include "errors.hpp"

namespace sectordiff {

// Dense row-major (channel, row, col) tensor of doubles.
struct Tensor3 {
    int ch = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor3() = default;
    Tensor3(int ch_, int h_, int w_) : ch(ch_), h(h_), w(w_), v(size_t(ch_) * h_ * w_, 0.0) {}

    double& at(int c, int y, int x) { return v[(size_t(c) * h + y) * w + x]; }
    double at(int c, int y, int x) const { return v[(size_t(c) * h + y) * w + x]; }

    double* plane(int c) { return v.data() + size_t(c) * h * w; }
    const double* plane(int c) const { return v.data() + size_t(c) * h * w; }

    size_t size() const { return v.size(); }
    bool same_shape(const Tensor3& o) const { return ch == o.ch && h == o.h && w == o.w; }

    std::string shape_str() const {
        return std::to_string(ch) + "x" + std::to_string(h) + "x" + std::to_string(w);
    }
};

inline void require_same_shape(const Tensor3& a, const Tensor3& b, const char* what) {
    if (!a.same_shape(b))
        fail("shape-mismatch", std::string(what) + ": " + a.shape_str() + " vs " + b.shape_str());
}

inline double max_abs_diff(const Tensor3& a, const Tensor3& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::fabs(a.v[i] - b.v[i]));
    return m;
}

inline double mean_abs_diff(const Tensor3& a, const Tensor3& b) {
    require_same_shape(a, b, "mean_abs_diff");
    double s = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i) s += std::fabs(a.v[i] - b.v[i]);
    return a.v.empty() ? 0.0 : s / double(a.v.size());
}

inline bool all_finite(const Tensor3& a) {
    for (double x : a.v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline void clamp_inplace(Tensor3& a, double lo, double hi) {
    for (double& x : a.v) x = std::min(hi, std::max(lo, x));
}

inline uint64_t tensor_digest(const Tensor3& a, uint64_t h = 0xcbf29ce484222325ull) {
    h = fnv1a64(&a.ch, sizeof(a.ch), h);
    h = fnv1a64(&a.h, sizeof(a.h), h);
    h = fnv1a64(&a.w, sizeof(a.w), h);
    return fnv1a64(a.v.data(), a.v.size() * sizeof(double), h);
}

}  // namespace sectordiff
