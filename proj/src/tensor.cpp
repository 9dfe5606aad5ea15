#include "fa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fa {

std::size_t shape_product(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

std::string shape_to_string(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ')';
    return os.str();
}

// ---- Permutation -----------------------------------------------------------

Permutation::Permutation(std::vector<std::size_t> order) : order_(std::move(order)) {
    std::vector<bool> seen(order_.size(), false);
    for (std::size_t a : order_) {
        if (a >= order_.size() || seen[a])
            throw std::invalid_argument("Permutation: order is not a bijection on [0, rank)");
        seen[a] = true;
    }
}

Permutation Permutation::identity(std::size_t rank) {
    std::vector<std::size_t> o(rank);
    std::iota(o.begin(), o.end(), std::size_t{0});
    return Permutation(std::move(o));
}

Permutation Permutation::mode_leading(std::size_t mode, std::size_t rank) {
    if (mode >= rank) throw std::invalid_argument("mode_leading: mode out of range");
    std::vector<std::size_t> o;
    o.reserve(rank);
    o.push_back(mode);
    for (std::size_t a = 0; a < rank; ++a)
        if (a != mode) o.push_back(a);
    return Permutation(std::move(o));
}

Permutation Permutation::inverse() const {
    std::vector<std::size_t> inv(order_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) inv[order_[i]] = i;
    return Permutation(std::move(inv));
}

bool Permutation::is_identity() const {
    for (std::size_t i = 0; i < order_.size(); ++i)
        if (order_[i] != i) return false;
    return true;
}

Permutation compose(const Permutation& first, const Permutation& then) {
    if (first.rank() != then.rank())
        throw std::invalid_argument("compose: rank mismatch");
    std::vector<std::size_t> o(first.rank());
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = first[then[i]];
    return Permutation(std::move(o));
}

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {
    if (shape_.empty()) throw std::invalid_argument("Tensor: rank must be >= 1");
    for (std::size_t d : shape_)
        if (d == 0) throw std::invalid_argument("Tensor: axis lengths must be positive");
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty()) throw std::invalid_argument("Tensor: rank must be >= 1");
    for (std::size_t d : shape_)
        if (d == 0) throw std::invalid_argument("Tensor: axis lengths must be positive");
    if (data_.size() != shape_product(shape_))
        throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_to_string(shape_));
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) throw std::out_of_range("Tensor::dim: axis out of range");
    return shape_[axis];
}

std::vector<std::size_t> Tensor::strides() const {
    std::vector<std::size_t> st(shape_.size());
    std::size_t acc = 1;
    for (std::size_t a = shape_.size(); a-- > 0;) {
        st[a] = acc;
        acc *= shape_[a];
    }
    return st;
}

std::size_t Tensor::offset_of(std::span<const std::size_t> idx) const {
    if (idx.size() != shape_.size()) throw std::invalid_argument("Tensor: index rank mismatch");
    std::size_t off = 0;
    for (std::size_t a = 0; a < shape_.size(); ++a) {
        if (idx[a] >= shape_[a]) throw std::out_of_range("Tensor: index out of bounds");
        off = off * shape_[a] + idx[a];
    }
    return off;
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
    return at(std::span<const std::size_t>(idx.begin(), idx.size()));
}

double& Tensor::at(std::initializer_list<std::size_t> idx) {
    return at(std::span<const std::size_t>(idx.begin(), idx.size()));
}

bool increment_index(std::vector<std::size_t>& idx, const Shape& shape) {
    for (std::size_t a = shape.size(); a-- > 0;) {
        if (++idx[a] < shape[a]) return true;
        idx[a] = 0;
    }
    return false;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i] || std::signbit(a[i]) != std::signbit(b[i])) return false;
    return true;
}

// ---- Matrix ----------------------------------------------------------------

Matrix::Matrix(std::size_t r, std::size_t c, double fill) : rows(r), cols(c), data(r * c, fill) {
    if (r == 0 || c == 0) throw std::invalid_argument("Matrix: dimensions must be positive");
}

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
    if (r == 0 || c == 0) throw std::invalid_argument("Matrix: dimensions must be positive");
    if (data.size() != r * c) throw std::invalid_argument("Matrix: data length does not match rows*cols");
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

// ---- Kernels ---------------------------------------------------------------

namespace {

// Shared by permute_axes and unfold: walks output positions with an odometer
// and a running source offset.
void permute_into(const Tensor& x, const Permutation& p, double* dst) {
    const std::size_t k = x.rank();
    const auto src_strides = x.strides();
    Shape out_shape(k);
    std::vector<std::size_t> step(k);
    for (std::size_t i = 0; i < k; ++i) {
        out_shape[i] = x.shape()[p[i]];
        step[i] = src_strides[p[i]];
    }
    std::vector<std::size_t> idx(k, 0);
    std::size_t src = 0;
    const std::size_t n = x.size();
    for (std::size_t o = 0; o < n; ++o) {
        dst[o] = x[src];
        for (std::size_t a = k; a-- > 0;) {
            ++idx[a];
            src += step[a];
            if (idx[a] < out_shape[a]) break;
            src -= step[a] * out_shape[a];
            idx[a] = 0;
        }
    }
}

void check_rank(const Tensor& x, const Permutation& p, const char* op) {
    if (p.rank() != x.rank())
        throw std::invalid_argument(std::string(op) + ": permutation rank " + std::to_string(p.rank()) +
                                    " does not match tensor rank " + std::to_string(x.rank()));
}

}  // namespace

Tensor permute_axes(const Tensor& x, const Permutation& p) {
    check_rank(x, p, "permute_axes");
    Shape out_shape(x.rank());
    for (std::size_t i = 0; i < x.rank(); ++i) out_shape[i] = x.shape()[p[i]];
    Tensor out(std::move(out_shape));
    permute_into(x, p, out.data());
    return out;
}

Matrix unfold(const Tensor& x, const Permutation& p) {
    check_rank(x, p, "unfold");
    if (x.rank() < 2) throw std::invalid_argument("unfold: tensor rank must be >= 2");
    const std::size_t rows = x.shape()[p[0]];
    const std::size_t cols = x.size() / rows;
    Matrix m(rows, cols);
    permute_into(x, p, m.data.data());
    return m;
}

Tensor fold(const Matrix& m, const Permutation& p, const Shape& original_shape) {
    if (p.rank() != original_shape.size())
        throw std::invalid_argument("fold: permutation rank does not match shape rank");
    if (m.size() != shape_product(original_shape))
        throw std::invalid_argument("fold: matrix has " + std::to_string(m.size()) +
                                    " elements but shape " + shape_to_string(original_shape) +
                                    " needs " + std::to_string(shape_product(original_shape)));
    if (m.rows != original_shape[p[0]])
        throw std::invalid_argument("fold: matrix rows " + std::to_string(m.rows) +
                                    " do not match leading permuted axis length " +
                                    std::to_string(original_shape[p[0]]));
    Shape permuted(original_shape.size());
    for (std::size_t i = 0; i < permuted.size(); ++i) permuted[i] = original_shape[p[i]];
    Tensor staged(std::move(permuted), m.data);
    return permute_axes(staged, p.inverse());
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw std::invalid_argument("matmul: inner dimensions " + std::to_string(a.cols) + " and " +
                                    std::to_string(b.rows) + " do not agree");
    Matrix out(a.rows, b.cols, 0.0);
    // ikj order: each output entry still accumulates in ascending k.
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + i * a.cols;
        double* orow = out.data.data() + i * b.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double av = arow[k];
            const double* brow = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += av * brow[j];
        }
    }
    op_counters().matmul_flops += std::uint64_t{2} * a.rows * a.cols * b.cols;
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols, m.rows);
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c) out(c, r) = m(r, c);
    return out;
}

Matrix row_softmax(const Matrix& m) {
    for (double v : m.data)
        if (!std::isfinite(v)) throw std::domain_error("row_softmax: non-finite input entry");
    Matrix out(m.rows, m.cols);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double* in = m.data.data() + r * m.cols;
        double* o = out.data.data() + r * m.cols;
        double mx = in[0];
        for (std::size_t c = 1; c < m.cols; ++c) mx = std::max(mx, in[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < m.cols; ++c) {
            o[c] = std::exp(in[c] - mx);
            sum += o[c];
        }
        for (std::size_t c = 0; c < m.cols; ++c) o[c] /= sum;
    }
    op_counters().softmax_flops += std::uint64_t{4} * m.rows * m.cols;
    return out;
}

Tensor channel_linear(const Tensor& x, const Matrix& w, std::span<const double> bias) {
    const std::size_t in_c = x.channels();
    if (w.cols != in_c)
        throw std::invalid_argument("channel_linear: weight has " + std::to_string(w.cols) +
                                    " input channels but tensor has " + std::to_string(in_c));
    if (!bias.empty() && bias.size() != w.rows)
        throw std::invalid_argument("channel_linear: bias length does not match output channels");
    const std::size_t out_c = w.rows;
    const std::size_t positions = x.size() / in_c;
    Shape out_shape = x.shape();
    out_shape.back() = out_c;
    Tensor out(std::move(out_shape));
    for (std::size_t pos = 0; pos < positions; ++pos) {
        const double* xin = x.data() + pos * in_c;
        double* yout = out.data() + pos * out_c;
        for (std::size_t o = 0; o < out_c; ++o) {
            double acc = bias.empty() ? 0.0 : bias[o];
            const double* wrow = w.data.data() + o * in_c;
            for (std::size_t c = 0; c < in_c; ++c) acc += wrow[c] * xin[c];
            yout[o] = acc;
        }
    }
    op_counters().linear_flops += std::uint64_t{2} * positions * out_c * in_c;
    if (!bias.empty()) op_counters().linear_flops += std::uint64_t{1} * positions * out_c;
    return out;
}

OpCounters& op_counters() {
    thread_local OpCounters counters;
    return counters;
}

// ---- Singular values -------------------------------------------------------

namespace {

struct SvdTriplet {
    double sigma = 0.0;
    std::vector<double> u, v;
};

double vec_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

void apply(const Matrix& a, const std::vector<double>& v, std::vector<double>& out) {
    out.assign(a.rows, 0.0);
    for (std::size_t r = 0; r < a.rows; ++r) {
        double acc = 0.0;
        const double* row = a.data.data() + r * a.cols;
        for (std::size_t c = 0; c < a.cols; ++c) acc += row[c] * v[c];
        out[r] = acc;
    }
}

void apply_transposed(const Matrix& a, const std::vector<double>& u, std::vector<double>& out) {
    out.assign(a.cols, 0.0);
    for (std::size_t r = 0; r < a.rows; ++r) {
        const double ur = u[r];
        const double* row = a.data.data() + r * a.cols;
        for (std::size_t c = 0; c < a.cols; ++c) out[c] += row[c] * ur;
    }
}

SvdTriplet dominant_triplet(const Matrix& a) {
    SvdTriplet t;
    t.v.assign(a.cols, 1.0 / std::sqrt(static_cast<double>(a.cols)));
    t.u.assign(a.rows, 0.0);
    std::vector<double> tmp;
    double sigma_prev = -1.0;
    for (int iter = 0; iter < 500; ++iter) {
        apply(a, t.v, tmp);
        double un = vec_norm(tmp);
        if (un == 0.0) {
            // Start vector annihilated; restart from a basis vector or give up.
            bool restarted = false;
            for (std::size_t c = 0; c < a.cols && !restarted; ++c) {
                std::fill(t.v.begin(), t.v.end(), 0.0);
                t.v[c] = 1.0;
                apply(a, t.v, tmp);
                un = vec_norm(tmp);
                restarted = un != 0.0;
            }
            if (!restarted) {
                t.sigma = 0.0;
                return t;
            }
        }
        for (std::size_t r = 0; r < a.rows; ++r) t.u[r] = tmp[r] / un;
        apply_transposed(a, t.u, tmp);
        double vn = vec_norm(tmp);
        if (vn == 0.0) {
            t.sigma = 0.0;
            return t;
        }
        for (std::size_t c = 0; c < a.cols; ++c) t.v[c] = tmp[c] / vn;
        t.sigma = vn;
        if (sigma_prev >= 0.0 && std::abs(t.sigma - sigma_prev) <= 1e-14 * std::max(1.0, t.sigma)) break;
        sigma_prev = t.sigma;
    }
    return t;
}

}  // namespace

SingularPair top_two_singular_values(const Matrix& a) {
    SingularPair out;
    SvdTriplet top = dominant_triplet(a);
    out.first = top.sigma;
    if (top.sigma == 0.0) return out;
    Matrix deflated = a;
    for (std::size_t r = 0; r < a.rows; ++r)
        for (std::size_t c = 0; c < a.cols; ++c) deflated(r, c) -= top.sigma * top.u[r] * top.v[c];
    out.second = dominant_triplet(deflated).sigma;
    return out;
}

}  // namespace fa
