#pragma once

#include <cstddef>
#include <vector>

#include "seisforge/errors.hpp"

namespace seisforge::srfd {

/// Dense row-major matrix. Scalar is float for training (with 64-bit
/// accumulation in every reduction) or double for gradient verification.
template <class S>
struct Mat {
    int rows = 0, cols = 0;
    std::vector<S> d;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), d(static_cast<std::size_t>(r) * c, S(0)) {}

    S& operator()(int i, int j) { return d[static_cast<std::size_t>(i) * cols + j]; }
    const S& operator()(int i, int j) const { return d[static_cast<std::size_t>(i) * cols + j]; }
    S* row(int i) { return d.data() + static_cast<std::size_t>(i) * cols; }
    const S* row(int i) const { return d.data() + static_cast<std::size_t>(i) * cols; }

    std::size_t size() const { return d.size(); }
    bool empty() const { return d.empty(); }
    void zero() { std::fill(d.begin(), d.end(), S(0)); }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

namespace kern {

/// C (+)= A * B^T.  A: m*k, B: n*k, C: m*n.
template <class S>
void mm_nt(const Mat<S>& a, const Mat<S>& b, Mat<S>& c, bool accumulate) {
    if (a.cols != b.cols || c.rows != a.rows || c.cols != b.rows)
        throw ConfigError("mm_nt: shape mismatch");
    for (int i = 0; i < a.rows; ++i) {
        const S* ai = a.row(i);
        S* ci = c.row(i);
        for (int j = 0; j < b.rows; ++j) {
            const S* bj = b.row(j);
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) acc += double(ai[k]) * double(bj[k]);
            ci[j] = accumulate ? S(double(ci[j]) + acc) : S(acc);
        }
    }
}

/// C (+)= A * B.  A: m*k, B: k*n, C: m*n.
template <class S>
void mm_nn(const Mat<S>& a, const Mat<S>& b, Mat<S>& c, bool accumulate) {
    if (a.cols != b.rows || c.rows != a.rows || c.cols != b.cols)
        throw ConfigError("mm_nn: shape mismatch");
    std::vector<double> acc(static_cast<std::size_t>(c.cols));
    for (int i = 0; i < a.rows; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const S* ai = a.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double av = ai[k];
            const S* bk = b.row(k);
            for (int j = 0; j < b.cols; ++j) acc[j] += av * double(bk[j]);
        }
        S* ci = c.row(i);
        for (int j = 0; j < c.cols; ++j)
            ci[j] = accumulate ? S(double(ci[j]) + acc[j]) : S(acc[j]);
    }
}

/// C (+)= A^T * B.  A: k*m, B: k*n, C: m*n.
template <class S>
void mm_tn(const Mat<S>& a, const Mat<S>& b, Mat<S>& c, bool accumulate) {
    if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols)
        throw ConfigError("mm_tn: shape mismatch");
    std::vector<double> acc(static_cast<std::size_t>(c.rows) * c.cols, 0.0);
    for (int k = 0; k < a.rows; ++k) {
        const S* ak = a.row(k);
        const S* bk = b.row(k);
        for (int i = 0; i < a.cols; ++i) {
            const double av = ak[i];
            double* ci = acc.data() + static_cast<std::size_t>(i) * c.cols;
            for (int j = 0; j < b.cols; ++j) ci[j] += av * double(bk[j]);
        }
    }
    for (int i = 0; i < c.rows; ++i) {
        S* ci = c.row(i);
        const double* xi = acc.data() + static_cast<std::size_t>(i) * c.cols;
        for (int j = 0; j < c.cols; ++j)
            ci[j] = accumulate ? S(double(ci[j]) + xi[j]) : S(xi[j]);
    }
}

template <class S>
void add_inplace(Mat<S>& a, const Mat<S>& b) {
    if (!a.same_shape(b)) throw ConfigError("add: shape mismatch");
    for (std::size_t i = 0; i < a.d.size(); ++i) a.d[i] = S(double(a.d[i]) + double(b.d[i]));
}

/// Copy head columns [h*dh, (h+1)*dh) into a W x dh scratch matrix.
template <class S>
void split_head(const Mat<S>& x, int h, int dh, Mat<S>& out) {
    for (int i = 0; i < x.rows; ++i) {
        const S* xi = x.row(i) + h * dh;
        S* oi = out.row(i);
        for (int j = 0; j < dh; ++j) oi[j] = xi[j];
    }
}

/// Accumulate a W x dh head gradient back into the packed matrix.
template <class S>
void merge_head_add(const Mat<S>& part, int h, int dh, Mat<S>& x) {
    for (int i = 0; i < x.rows; ++i) {
        S* xi = x.row(i) + h * dh;
        const S* pi = part.row(i);
        for (int j = 0; j < dh; ++j) xi[j] = S(double(xi[j]) + double(pi[j]));
    }
}

} // namespace kern

} // namespace seisforge::srfd
