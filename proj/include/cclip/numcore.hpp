#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cclip/errors.hpp"

namespace cclip {

// Dense row-major matrix of 64-bit reals. All training math runs in doubles;
// files store float32 (see dataset/checkpoint IO).
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;

    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    Matrix(std::initializer_list<std::initializer_list<double>> init);

    static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c, 0.0); }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    std::size_t size() const { return rows * cols; }
    bool empty() const { return data.empty(); }
    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }
    bool all_finite() const;
};

// Floor applied to softmax exponentials and log arguments for stability.
inline constexpr double kLogFloor = 1e-300;

inline double safe_log(double x) { return std::log(x < kLogFloor ? kLogFloor : x); }

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double c);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix add_row_broadcast(const Matrix& a, const Matrix& row); // row is 1 x cols
Matrix row_mean(const Matrix& a);                             // mean over rows -> 1 x cols
Matrix col_sum(const Matrix& a);                              // 1 x cols
Matrix relu(const Matrix& a);
double sum_all(const Matrix& a);

// Divides each row by its Euclidean norm. ZeroNormRow if a row norm < 1e-12.
Matrix l2_normalize_rows(const Matrix& m);

// Row-wise softmax with max subtraction; exponentials floored at kLogFloor so
// every entry stays strictly positive.
Matrix softmax_rows(const Matrix& m);

// Mean over rows of -log softmax(logits)[row, target]. IndexOutOfRange if a
// target index >= cols.
double cross_entropy_rows(const Matrix& logits, std::span<const std::size_t> targets);

// --- analytic backward rules (vector-Jacobian products) ---
// Each rule maps the gradient w.r.t. an op's output back to gradients w.r.t.
// its inputs; the grad-check harness below certifies all of them.
void matmul_backward(const Matrix& a, const Matrix& b, const Matrix& g,
                     Matrix* da, Matrix* db);
Matrix transpose_backward(const Matrix& g);
Matrix scale_backward(const Matrix& g, double c);
std::pair<Matrix, Matrix> add_row_broadcast_backward(const Matrix& g);
Matrix row_mean_backward(const Matrix& g, std::size_t rows);
Matrix relu_backward(const Matrix& g, const Matrix& output);
Matrix l2_normalize_rows_backward(const Matrix& input, const Matrix& g);
Matrix softmax_rows_backward(const Matrix& output, const Matrix& g);
Matrix cross_entropy_rows_backward(const Matrix& logits, std::span<const std::size_t> targets);

// Ordered (parameter-id, gradient) accumulator for one backward pass.
// Single-owner per training step; ids appear at most once and repeated adds
// for the same id accumulate in place.
class GradTape {
public:
    void add(std::string_view param_id, Matrix grad);
    const Matrix* find(std::string_view param_id) const;
    const std::vector<std::pair<std::string, Matrix>>& entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }

private:
    std::vector<std::pair<std::string, Matrix>> entries_;
};

// A loss with analytic gradients: returns the scalar value and, when
// want_grads is set, one gradient per parameter (aligned with params).
struct LossEval {
    double value = 0.0;
    std::vector<Matrix> grads;
};
using DifferentiableLoss =
    std::function<LossEval(std::span<const Matrix> params, bool want_grads)>;

// Central-difference gradient check. Returns the max over all parameter
// entries of |analytic - numeric| / max(1, |analytic|, |numeric|).
// eps must lie in [1e-6, 1e-2]; NonDeterministicLoss if two evaluations at
// identical params disagree.
double grad_check(const DifferentiableLoss& loss, std::vector<Matrix> params, double eps);

} // namespace cclip
