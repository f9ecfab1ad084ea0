#pragma once

// Minimal dense row-major matrix plus the few vector helpers the model and
// evaluation code need. Deliberately not a linear algebra library.

#include <cmath>
#include <cstddef>
#include <vector>

namespace nlm {

template <typename T>
struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(size_t r, size_t c) : rows(r), cols(c), data(r * c, T(0)) {}

    T& operator()(size_t r, size_t c) { return data[r * cols + c]; }
    const T& operator()(size_t r, size_t c) const { return data[r * cols + c]; }

    T* row(size_t r) { return data.data() + r * cols; }
    const T* row(size_t r) const { return data.data() + r * cols; }

    void fill(T v) { data.assign(data.size(), v); }
    size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
};

template <typename T>
inline T dot(const T* a, const T* b, size_t n) {
    T s = T(0);
    for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
inline T l2_norm(const T* a, size_t n) {
    return std::sqrt(dot(a, a, n));
}

template <typename T>
inline T cosine(const T* a, const T* b, size_t n) {
    T na = l2_norm(a, n);
    T nb = l2_norm(b, n);
    if (na == T(0) || nb == T(0)) return T(0);
    return dot(a, b, n) / (na * nb);
}

template <typename T>
inline T cosine(const std::vector<T>& a, const std::vector<T>& b) {
    return cosine(a.data(), b.data(), a.size());
}

template <typename T>
inline bool all_finite(const T* a, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        if (!std::isfinite(a[i])) return false;
    }
    return true;
}

}  // namespace nlm
