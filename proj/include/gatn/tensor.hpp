#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "gatn/errors.hpp"

namespace gatn {

struct Dims4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::int64_t count() const {
        return static_cast<std::int64_t>(n) * c * h * w;
    }
    bool operator==(const Dims4&) const = default;
};

// Dense rank-4 array, NCHW, row-major doubles. The one value type every
// numeric op in this library consumes and produces.
struct Tensor4 {
    Dims4 dims;
    Eigen::ArrayXd data;

    Tensor4() = default;
    Tensor4(int n, int c, int h, int w)
        : dims{n, c, h, w}, data(Eigen::ArrayXd::Zero(dims.count())) {}

    static Tensor4 constant(int n, int c, int h, int w, double v) {
        Tensor4 t(n, c, h, w);
        t.data.setConstant(v);
        return t;
    }

    int n() const { return dims.n; }
    int c() const { return dims.c; }
    int h() const { return dims.h; }
    int w() const { return dims.w; }
    std::int64_t size() const { return data.size(); }

    std::int64_t index(int in, int ic, int ih, int iw) const {
        return ((static_cast<std::int64_t>(in) * dims.c + ic) * dims.h + ih) * dims.w + iw;
    }
    double operator()(int in, int ic, int ih, int iw) const {
        return data[index(in, ic, ih, iw)];
    }
    double& operator()(int in, int ic, int ih, int iw) {
        return data[index(in, ic, ih, iw)];
    }

    bool same_dims(const Tensor4& o) const { return dims == o.dims; }
};

inline bool all_finite(const Tensor4& t) { return t.data.isFinite().all(); }

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Channel-flattened views: one row per channel-ish leading index.
inline Eigen::Map<RowMat> as_rows(Tensor4& t, Eigen::Index rows, Eigen::Index cols) {
    return {t.data.data(), rows, cols};
}
inline Eigen::Map<const RowMat> as_rows(const Tensor4& t, Eigen::Index rows, Eigen::Index cols) {
    return {t.data.data(), rows, cols};
}

// (n,c,1,1) tensor as an (n,c) matrix copy.
inline Eigen::MatrixXd to_matrix(const Tensor4& t) {
    if (t.h() != 1 || t.w() != 1) {
        throw ShapeError("to_matrix: spatial axes must be 1x1");
    }
    return Eigen::Map<const RowMat>(t.data.data(), t.n(), t.c());
}

inline Eigen::VectorXd to_vector(const Tensor4& t) {
    return Eigen::Map<const Eigen::VectorXd>(t.data.data(), t.size());
}

inline Tensor4 from_vector(const Eigen::VectorXd& v) {
    Tensor4 t(1, static_cast<int>(v.size()), 1, 1);
    t.data = v.array();
    return t;
}

} // namespace gatn
