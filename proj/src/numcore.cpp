#include "cclip/numcore.hpp"

#include <algorithm>
#include <cmath>

namespace cclip {

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows = init.size();
    cols = rows == 0 ? 0 : init.begin()->size();
    data.reserve(rows * cols);
    for (const auto& r : init) {
        require(r.size() == cols, "DimMismatch", "ragged initializer rows");
        data.insert(data.end(), r.begin(), r.end());
    }
}

bool Matrix::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

namespace {

void check_shape(bool ok, const char* what) {
    require(ok, "DimMismatch", what);
}

} // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    check_shape(a.cols == b.rows, "matmul inner dimensions differ");
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + i * a.cols;
        double* orow = out.data.data() + i * out.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double av = arow[k];
            if (av == 0.0) {
                continue;
            }
            const double* brow = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) {
                orow[j] += av * brow[j];
            }
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < a.cols; ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    check_shape(a.same_shape(b), "add shapes differ");
    Matrix out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] += b.data[i];
    }
    return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    check_shape(a.same_shape(b), "sub shapes differ");
    Matrix out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] -= b.data[i];
    }
    return out;
}

Matrix scale(const Matrix& a, double c) {
    Matrix out = a;
    for (double& v : out.data) {
        v *= c;
    }
    return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    check_shape(a.same_shape(b), "hadamard shapes differ");
    Matrix out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] *= b.data[i];
    }
    return out;
}

Matrix add_row_broadcast(const Matrix& a, const Matrix& row) {
    check_shape(row.rows == 1 && row.cols == a.cols, "broadcast row shape differs");
    Matrix out = a;
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < a.cols; ++j) {
            out(i, j) += row(0, j);
        }
    }
    return out;
}

Matrix row_mean(const Matrix& a) {
    check_shape(a.rows > 0, "row_mean of empty matrix");
    Matrix out(1, a.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < a.cols; ++j) {
            out(0, j) += a(i, j);
        }
    }
    const double inv = 1.0 / static_cast<double>(a.rows);
    for (double& v : out.data) {
        v *= inv;
    }
    return out;
}

Matrix col_sum(const Matrix& a) {
    Matrix out(1, a.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < a.cols; ++j) {
            out(0, j) += a(i, j);
        }
    }
    return out;
}

Matrix relu(const Matrix& a) {
    Matrix out = a;
    for (double& v : out.data) {
        v = v > 0.0 ? v : 0.0;
    }
    return out;
}

double sum_all(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data) {
        s += v;
    }
    return s;
}

Matrix l2_normalize_rows(const Matrix& m) {
    Matrix out = m;
    for (std::size_t i = 0; i < m.rows; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) {
            sq += m(i, j) * m(i, j);
        }
        const double norm = std::sqrt(sq);
        if (norm < 1e-12) {
            fail("ZeroNormRow", "row " + std::to_string(i) + " has norm below 1e-12");
        }
        const double inv = 1.0 / norm;
        for (std::size_t j = 0; j < m.cols; ++j) {
            out(i, j) *= inv;
        }
    }
    return out;
}

Matrix softmax_rows(const Matrix& m) {
    Matrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        double mx = m(i, 0);
        for (std::size_t j = 1; j < m.cols; ++j) {
            mx = std::max(mx, m(i, j));
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) {
            double e = std::exp(m(i, j) - mx);
            if (e < kLogFloor) {
                e = kLogFloor;
            }
            out(i, j) = e;
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < m.cols; ++j) {
            out(i, j) *= inv;
        }
    }
    return out;
}

double cross_entropy_rows(const Matrix& logits, std::span<const std::size_t> targets) {
    check_shape(targets.size() == logits.rows, "one target per row required");
    double total = 0.0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const std::size_t t = targets[i];
        if (t >= logits.cols) {
            fail("IndexOutOfRange",
                 "target " + std::to_string(t) + " for row " + std::to_string(i) +
                     " exceeds " + std::to_string(logits.cols) + " columns");
        }
        double mx = logits(i, 0);
        for (std::size_t j = 1; j < logits.cols; ++j) {
            mx = std::max(mx, logits(i, j));
        }
        double sumexp = 0.0;
        for (std::size_t j = 0; j < logits.cols; ++j) {
            sumexp += std::exp(logits(i, j) - mx);
        }
        total += safe_log(sumexp) - (logits(i, t) - mx);
    }
    return total / static_cast<double>(logits.rows);
}

void matmul_backward(const Matrix& a, const Matrix& b, const Matrix& g,
                     Matrix* da, Matrix* db) {
    check_shape(g.rows == a.rows && g.cols == b.cols, "matmul grad shape differs");
    if (da != nullptr) {
        *da = matmul(g, transpose(b));
    }
    if (db != nullptr) {
        *db = matmul(transpose(a), g);
    }
}

Matrix transpose_backward(const Matrix& g) { return transpose(g); }

Matrix scale_backward(const Matrix& g, double c) { return scale(g, c); }

std::pair<Matrix, Matrix> add_row_broadcast_backward(const Matrix& g) {
    return {g, col_sum(g)};
}

Matrix row_mean_backward(const Matrix& g, std::size_t rows) {
    check_shape(g.rows == 1, "row_mean grad must be a single row");
    Matrix out(rows, g.cols);
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < g.cols; ++j) {
            out(i, j) = g(0, j) * inv;
        }
    }
    return out;
}

Matrix relu_backward(const Matrix& g, const Matrix& output) {
    check_shape(g.same_shape(output), "relu grad shape differs");
    Matrix out = g;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        if (output.data[i] <= 0.0) {
            out.data[i] = 0.0;
        }
    }
    return out;
}

// y_i = v_i / |v_i|; dL/dv = (g - (g . y) y) / |v|, per row.
Matrix l2_normalize_rows_backward(const Matrix& input, const Matrix& g) {
    check_shape(g.same_shape(input), "normalize grad shape differs");
    Matrix out(input.rows, input.cols);
    for (std::size_t i = 0; i < input.rows; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < input.cols; ++j) {
            sq += input(i, j) * input(i, j);
        }
        const double norm = std::sqrt(sq);
        require(norm >= 1e-12, "ZeroNormRow",
                "row " + std::to_string(i) + " has norm below 1e-12");
        const double inv = 1.0 / norm;
        double gy = 0.0;
        for (std::size_t j = 0; j < input.cols; ++j) {
            gy += g(i, j) * input(i, j) * inv;
        }
        for (std::size_t j = 0; j < input.cols; ++j) {
            out(i, j) = (g(i, j) - gy * input(i, j) * inv) * inv;
        }
    }
    return out;
}

// dL/dx_ij = y_ij * (g_ij - sum_k g_ik y_ik), per row.
Matrix softmax_rows_backward(const Matrix& output, const Matrix& g) {
    check_shape(g.same_shape(output), "softmax grad shape differs");
    Matrix out(output.rows, output.cols);
    for (std::size_t i = 0; i < output.rows; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < output.cols; ++j) {
            dot += g(i, j) * output(i, j);
        }
        for (std::size_t j = 0; j < output.cols; ++j) {
            out(i, j) = output(i, j) * (g(i, j) - dot);
        }
    }
    return out;
}

// d/dlogits of mean-over-rows CE with one target per row: (softmax - onehot)/rows.
Matrix cross_entropy_rows_backward(const Matrix& logits, std::span<const std::size_t> targets) {
    check_shape(targets.size() == logits.rows, "one target per row required");
    Matrix out = softmax_rows(logits);
    const double inv = 1.0 / static_cast<double>(logits.rows);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const std::size_t t = targets[i];
        if (t >= logits.cols) {
            fail("IndexOutOfRange",
                 "target " + std::to_string(t) + " for row " + std::to_string(i) +
                     " exceeds " + std::to_string(logits.cols) + " columns");
        }
        out(i, t) -= 1.0;
        for (std::size_t j = 0; j < logits.cols; ++j) {
            out(i, j) *= inv;
        }
    }
    return out;
}

void GradTape::add(std::string_view param_id, Matrix grad) {
    for (auto& [id, g] : entries_) {
        if (id == param_id) {
            require(g.same_shape(grad), "ShapeMismatch",
                    "gradient shape changed for parameter " + id);
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                g.data[i] += grad.data[i];
            }
            return;
        }
    }
    entries_.emplace_back(std::string(param_id), std::move(grad));
}

const Matrix* GradTape::find(std::string_view param_id) const {
    for (const auto& [id, g] : entries_) {
        if (id == param_id) {
            return &g;
        }
    }
    return nullptr;
}

double grad_check(const DifferentiableLoss& loss, std::vector<Matrix> params, double eps) {
    require(eps >= 1e-6 && eps <= 1e-2, "InvalidArgument",
            "grad_check eps must lie in [1e-6, 1e-2]");

    const LossEval first = loss(params, true);
    const LossEval second = loss(params, false);
    require(first.value == second.value, "NonDeterministicLoss",
            "loss changed between evaluations at identical parameters");
    require(first.grads.size() == params.size(), "ShapeMismatch",
            "analytic gradient count differs from parameter count");

    double max_rel = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        require(first.grads[p].same_shape(params[p]), "ShapeMismatch",
                "analytic gradient shape differs for parameter " + std::to_string(p));
        for (std::size_t i = 0; i < params[p].data.size(); ++i) {
            const double saved = params[p].data[i];
            params[p].data[i] = saved + eps;
            const double up = loss(params, false).value;
            params[p].data[i] = saved - eps;
            const double down = loss(params, false).value;
            params[p].data[i] = saved;

            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = first.grads[p].data[i];
            const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
            max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
        }
    }
    return max_rel;
}

} // namespace cclip
