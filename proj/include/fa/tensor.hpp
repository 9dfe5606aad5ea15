#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fa {

using Shape = std::vector<std::size_t>;

std::size_t shape_product(const Shape& s);
std::string shape_to_string(const Shape& s);

/// Bijective axis reordering. order[i] names the source axis that lands at
/// position i after permuting.
class Permutation {
public:
    Permutation() = default;
    explicit Permutation(std::vector<std::size_t> order);
    Permutation(std::initializer_list<std::size_t> order)
        : Permutation(std::vector<std::size_t>(order)) {}

    static Permutation identity(std::size_t rank);
    /// Puts `mode` first and keeps the remaining axes in ascending order.
    /// For rank 4 this yields (0,1,2,3), (1,0,2,3), (2,0,1,3), (3,0,1,2).
    static Permutation mode_leading(std::size_t mode, std::size_t rank);

    Permutation inverse() const;
    std::size_t rank() const { return order_.size(); }
    std::size_t operator[](std::size_t i) const { return order_[i]; }
    std::size_t leading_axis() const { return order_.front(); }
    const std::vector<std::size_t>& order() const { return order_; }
    bool is_identity() const;

    friend bool operator==(const Permutation&, const Permutation&) = default;

private:
    std::vector<std::size_t> order_;
};

/// permute_axes(permute_axes(x, first), then) == permute_axes(x, compose(first, then))
Permutation compose(const Permutation& first, const Permutation& then);

/// Dense tensor of 64-bit floats with explicit shape and contiguous row-major
/// layout. The layout is part of the public contract: unfold/fold reinterpret
/// the buffer directly, so element (i0,...,ik-1) sits at the standard
/// row-major offset.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor full(Shape shape, double value);

    std::size_t rank() const { return shape_.size(); }
    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const;
    /// Channel axis is the last axis by convention.
    std::size_t channels() const { return shape_.back(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    const std::vector<double>& values() const { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    std::vector<std::size_t> strides() const;
    std::size_t offset_of(std::span<const std::size_t> idx) const;
    double at(std::span<const std::size_t> idx) const { return data_[offset_of(idx)]; }
    double& at(std::span<const std::size_t> idx) { return data_[offset_of(idx)]; }
    double at(std::initializer_list<std::size_t> idx) const;
    double& at(std::initializer_list<std::size_t> idx);

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Odometer increment of a row-major multi-index; returns false after the
/// last index wraps around to all zeros.
bool increment_index(std::vector<std::size_t>& idx, const Shape& shape);

bool same_shape(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool bitwise_equal(const Tensor& a, const Tensor& b);

/// Row-major 2D matrix carrier for unfolded tensors and affinity matrices.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0);
    Matrix(std::size_t r, std::size_t c, std::vector<double> d);

    static Matrix identity(std::size_t n);

    std::size_t size() const { return data.size(); }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
};

double max_abs_diff(const Matrix& a, const Matrix& b);

// ---- Operations -----------------------------------------------------------

/// out.shape[i] = x.shape[p[i]]; element values move, nothing is recomputed.
Tensor permute_axes(const Tensor& x, const Permutation& p);

/// u(X, p): permute by p, then flatten all trailing axes into one. Pure
/// reinterpretation of the permuted contiguous buffer as a
/// (x.shape[p[0]], rest) matrix.
Matrix unfold(const Tensor& x, const Permutation& p);

/// f(X^p, p): inverse of unfold. fold(unfold(x, p), p, x.shape()) == x bitwise.
Tensor fold(const Matrix& m, const Permutation& p, const Shape& original_shape);

/// Standard product with fixed ascending-k accumulation per output entry, so
/// results are bit-reproducible across runs.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

/// Softmax along each row with max subtraction. Rejects non-finite input.
Matrix row_softmax(const Matrix& m);

/// Affine map along the channel (last) axis, applied independently at every
/// position: y[..., o] = sum_c w(o, c) * x[..., c] + b[o]. Empty bias means
/// no bias. Output shape replaces the channel size with w.rows.
Tensor channel_linear(const Tensor& x, const Matrix& w, std::span<const double> bias = {});

// ---- Instrumentation ------------------------------------------------------

/// Thread-local floating-point operation counters, incremented by the kernels
/// above. One multiply-add counts as 2 flops; softmax counts 4 flops per
/// entry (exp, subtract, add, divide).
struct OpCounters {
    std::uint64_t matmul_flops = 0;
    std::uint64_t softmax_flops = 0;
    std::uint64_t linear_flops = 0;

    std::uint64_t total() const { return matmul_flops + softmax_flops + linear_flops; }
    void reset() { *this = OpCounters{}; }
};

OpCounters& op_counters();

// ---- Small linear-algebra utilities ---------------------------------------

struct SingularPair {
    double first = 0.0;
    double second = 0.0;
};

/// Two largest singular values via power iteration plus rank-one deflation.
/// Deflating in the original matrix (rather than forming A A^T) keeps the
/// second value accurate near machine epsilon relative to the first, which
/// the rank-one affinity checks need.
SingularPair top_two_singular_values(const Matrix& a);

}  // namespace fa
