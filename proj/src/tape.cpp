#include "namelink/tape.hpp"

#include <algorithm>
#include <cmath>

#include "namelink/error.hpp"

namespace namelink::ad {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

void Tape::backward(Var loss) {
    if (!loss.valid()) throw UsageError("backward on invalid var");
    const Mat& lv = val(loss);
    if (lv.rows != 1 || lv.cols != 1) throw UsageError("backward requires a 1x1 loss");
    for (Node& n : nodes_) n.grad = Mat();
    grad(loss)(0, 0) = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.back || n.grad.empty()) continue;
        n.back(*this, n.grad);
    }
}

Var add(Tape& t, Var a, Var b) {
    Mat out = t.val(a);
    axpy(out, t.val(b));
    return t.make(std::move(out), [a, b](Tape& tt, const Mat& g) {
        axpy(tt.grad(a), g);
        axpy(tt.grad(b), g);
    });
}

Var sub(Tape& t, Var a, Var b) {
    Mat out = t.val(a);
    axpy(out, t.val(b), -1.0);
    return t.make(std::move(out), [a, b](Tape& tt, const Mat& g) {
        axpy(tt.grad(a), g);
        axpy(tt.grad(b), g, -1.0);
    });
}

Var mul(Tape& t, Var a, Var b) {
    const Mat& av = t.val(a);
    const Mat& bv = t.val(b);
    if (!av.same_shape(bv)) throw DimensionError("mul: shape mismatch");
    Mat out(av.rows, av.cols);
    for (std::size_t i = 0; i < out.a.size(); ++i) out.a[i] = av.a[i] * bv.a[i];
    return t.make(std::move(out), [a, b](Tape& tt, const Mat& g) {
        const Mat& av2 = tt.val(a);
        const Mat& bv2 = tt.val(b);
        Mat& ga = tt.grad(a);
        Mat& gb = tt.grad(b);
        for (std::size_t i = 0; i < g.a.size(); ++i) {
            ga.a[i] += g.a[i] * bv2.a[i];
            gb.a[i] += g.a[i] * av2.a[i];
        }
    });
}

Var scale(Tape& t, Var a, double c) {
    Mat out = t.val(a);
    for (double& v : out.a) v *= c;
    return t.make(std::move(out),
                  [a, c](Tape& tt, const Mat& g) { axpy(tt.grad(a), g, c); });
}

Var add_rowvec(Tape& t, Var a, Var v) {
    const Mat& av = t.val(a);
    const Mat& vv = t.val(v);
    if (vv.rows != 1 || vv.cols != av.cols) throw DimensionError("add_rowvec: bad vector shape");
    Mat out = av;
    for (int r = 0; r < out.rows; ++r) {
        double* row = out.row_ptr(r);
        for (int c = 0; c < out.cols; ++c) row[c] += vv.a[c];
    }
    return t.make(std::move(out), [a, v](Tape& tt, const Mat& g) {
        axpy(tt.grad(a), g);
        Mat& gv = tt.grad(v);
        for (int r = 0; r < g.rows; ++r) {
            const double* row = g.row_ptr(r);
            for (int c = 0; c < g.cols; ++c) gv.a[c] += row[c];
        }
    });
}

Var matmul(Tape& t, Var a, Var b) {
    Mat out;
    matmul_into(t.val(a), t.val(b), out);
    return t.make(std::move(out), [a, b](Tape& tt, const Mat& g) {
        Mat tmp;
        matmul_nt_into(g, tt.val(b), tmp);  // dA = g * B^T
        axpy(tt.grad(a), tmp);
        matmul_tn_into(tt.val(a), g, tmp);  // dB = A^T * g
        axpy(tt.grad(b), tmp);
    });
}

Var matmul_nt(Tape& t, Var a, Var b) {
    Mat out;
    matmul_nt_into(t.val(a), t.val(b), out);
    return t.make(std::move(out), [a, b](Tape& tt, const Mat& g) {
        Mat tmp;
        matmul_into(g, tt.val(b), tmp);  // dA = g * B
        axpy(tt.grad(a), tmp);
        matmul_tn_into(g, tt.val(a), tmp);  // dB = g^T * A
        axpy(tt.grad(b), tmp);
    });
}

Var transpose(Tape& t, Var a) {
    const Mat& av = t.val(a);
    Mat out(av.cols, av.rows);
    for (int r = 0; r < av.rows; ++r)
        for (int c = 0; c < av.cols; ++c) out(c, r) = av(r, c);
    return t.make(std::move(out), [a](Tape& tt, const Mat& g) {
        Mat& ga = tt.grad(a);
        for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < g.cols; ++c) ga(c, r) += g(r, c);
    });
}

Var concat_rows(Tape& t, Var a, Var b) {
    const Mat& av = t.val(a);
    const Mat& bv = t.val(b);
    if (av.cols != bv.cols && av.rows != 0 && bv.rows != 0)
        throw DimensionError("concat_rows: column mismatch");
    const int cols = av.rows ? av.cols : bv.cols;
    Mat out(av.rows + bv.rows, cols);
    std::copy(av.a.begin(), av.a.end(), out.a.begin());
    std::copy(bv.a.begin(), bv.a.end(), out.a.begin() + av.a.size());
    return t.make(std::move(out), [a, b](Tape& tt, const Mat& g) {
        Mat& ga = tt.grad(a);
        Mat& gb = tt.grad(b);
        const std::size_t na = ga.a.size();
        for (std::size_t i = 0; i < na; ++i) ga.a[i] += g.a[i];
        for (std::size_t i = 0; i < gb.a.size(); ++i) gb.a[i] += g.a[na + i];
    });
}

Var slice_rows(Tape& t, Var a, int r0, int r1) {
    const Mat& av = t.val(a);
    if (!(0 <= r0 && r0 <= r1 && r1 <= av.rows)) throw DimensionError("slice_rows: bad range");
    Mat out(r1 - r0, av.cols);
    std::copy(av.row_ptr(r0), av.row_ptr(r0) + out.a.size(), out.a.begin());
    return t.make(std::move(out), [a, r0](Tape& tt, const Mat& g) {
        Mat& ga = tt.grad(a);
        double* base = ga.row_ptr(r0);
        for (std::size_t i = 0; i < g.a.size(); ++i) base[i] += g.a[i];
    });
}

Var slice_cols(Tape& t, Var a, int c0, int c1) {
    const Mat& av = t.val(a);
    if (!(0 <= c0 && c0 <= c1 && c1 <= av.cols)) throw DimensionError("slice_cols: bad range");
    Mat out(av.rows, c1 - c0);
    for (int r = 0; r < av.rows; ++r)
        std::copy(av.row_ptr(r) + c0, av.row_ptr(r) + c1, out.row_ptr(r));
    return t.make(std::move(out), [a, c0](Tape& tt, const Mat& g) {
        Mat& ga = tt.grad(a);
        for (int r = 0; r < g.rows; ++r) {
            const double* grow = g.row_ptr(r);
            double* arow = ga.row_ptr(r) + c0;
            for (int c = 0; c < g.cols; ++c) arow[c] += grow[c];
        }
    });
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw UsageError("concat_cols: empty part list");
    const int rows = t.val(parts[0]).rows;
    int cols = 0;
    for (Var p : parts) {
        if (t.val(p).rows != rows) throw DimensionError("concat_cols: row mismatch");
        cols += t.val(p).cols;
    }
    Mat out(rows, cols);
    int off = 0;
    for (Var p : parts) {
        const Mat& pv = t.val(p);
        for (int r = 0; r < rows; ++r)
            std::copy(pv.row_ptr(r), pv.row_ptr(r) + pv.cols, out.row_ptr(r) + off);
        off += pv.cols;
    }
    auto parts_copy = parts;
    return t.make(std::move(out), [parts_copy](Tape& tt, const Mat& g) {
        int o = 0;
        for (Var p : parts_copy) {
            Mat& gp = tt.grad(p);
            for (int r = 0; r < g.rows; ++r) {
                const double* grow = g.row_ptr(r) + o;
                double* prow = gp.row_ptr(r);
                for (int c = 0; c < gp.cols; ++c) prow[c] += grow[c];
            }
            o += gp.cols;
        }
    });
}

Var select_row(Tape& t, Var a, int r) { return slice_rows(t, a, r, r + 1); }

Var pool_rows(Tape& t, Var a, const std::vector<std::vector<int>>& groups) {
    const Mat& av = t.val(a);
    Mat out(static_cast<int>(groups.size()), av.cols);
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& rows = groups[gi];
        if (rows.empty()) throw ValidationError("pool_rows: group with zero rows");
        for (int r : rows) {
            if (r < 0 || r >= av.rows) throw DimensionError("pool_rows: row index out of range");
            const double* src = av.row_ptr(r);
            double* dst = out.row_ptr(static_cast<int>(gi));
            for (int c = 0; c < av.cols; ++c) dst[c] += src[c];
        }
        const double inv = 1.0 / static_cast<double>(rows.size());
        double* dst = out.row_ptr(static_cast<int>(gi));
        for (int c = 0; c < av.cols; ++c) dst[c] *= inv;
    }
    auto groups_copy = groups;
    return t.make(std::move(out), [a, groups_copy](Tape& tt, const Mat& g) {
        Mat& ga = tt.grad(a);
        for (std::size_t gi = 0; gi < groups_copy.size(); ++gi) {
            const double inv = 1.0 / static_cast<double>(groups_copy[gi].size());
            const double* grow = g.row_ptr(static_cast<int>(gi));
            for (int r : groups_copy[gi]) {
                double* arow = ga.row_ptr(r);
                for (int c = 0; c < g.cols; ++c) arow[c] += inv * grow[c];
            }
        }
    });
}

Var gather_rows(Tape& t, Var a, const std::vector<int>& rows) {
    const Mat& av = t.val(a);
    Mat out(static_cast<int>(rows.size()), av.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= av.rows)
            throw DimensionError("gather_rows: index out of range");
        std::copy(av.row_ptr(rows[i]), av.row_ptr(rows[i]) + av.cols,
                  out.row_ptr(static_cast<int>(i)));
    }
    auto rows_copy = rows;
    return t.make(std::move(out), [a, rows_copy](Tape& tt, const Mat& g) {
        Mat& ga = tt.grad(a);
        for (std::size_t i = 0; i < rows_copy.size(); ++i) {
            const double* src = g.row_ptr(static_cast<int>(i));
            double* dst = ga.row_ptr(rows_copy[i]);
            for (int c = 0; c < g.cols; ++c) dst[c] += src[c];
        }
    });
}

Var row_softmax(Tape& t, Var a) {
    const Mat& av = t.val(a);
    Mat out(av.rows, av.cols);
    for (int r = 0; r < av.rows; ++r) {
        const double* x = av.row_ptr(r);
        double* y = out.row_ptr(r);
        double mx = x[0];
        for (int c = 1; c < av.cols; ++c) mx = std::max(mx, x[c]);
        double z = 0.0;
        for (int c = 0; c < av.cols; ++c) {
            y[c] = std::exp(x[c] - mx);
            z += y[c];
        }
        const double inv = 1.0 / z;
        for (int c = 0; c < av.cols; ++c) y[c] *= inv;
    }
    const Mat probs = out;  // captured for the backward pass
    return t.make(std::move(out), [a, probs](Tape& tt, const Mat& g) {
        // dx = p * (g - rowsum(g * p))
        Mat& ga = tt.grad(a);
        for (int r = 0; r < g.rows; ++r) {
            const double* p = probs.row_ptr(r);
            const double* grow = g.row_ptr(r);
            double* arow = ga.row_ptr(r);
            double gp = 0.0;
            for (int c = 0; c < g.cols; ++c) gp += grow[c] * p[c];
            for (int c = 0; c < g.cols; ++c) arow[c] += p[c] * (grow[c] - gp);
        }
    });
}

Var log_softmax_rows(Tape& t, Var a) {
    const Mat& av = t.val(a);
    Mat out(av.rows, av.cols);
    for (int r = 0; r < av.rows; ++r) {
        const double* x = av.row_ptr(r);
        double* y = out.row_ptr(r);
        double mx = x[0];
        for (int c = 1; c < av.cols; ++c) mx = std::max(mx, x[c]);
        double z = 0.0;
        for (int c = 0; c < av.cols; ++c) z += std::exp(x[c] - mx);
        const double lz = std::log(z) + mx;
        for (int c = 0; c < av.cols; ++c) y[c] = x[c] - lz;
    }
    return t.make(std::move(out), [a](Tape& tt, const Mat& g) {
        // dx = g - softmax(x) * rowsum(g)
        const Mat& av2 = tt.val(a);
        Mat& ga = tt.grad(a);
        for (int r = 0; r < g.rows; ++r) {
            const double* x = av2.row_ptr(r);
            const double* grow = g.row_ptr(r);
            double* arow = ga.row_ptr(r);
            double gsum = 0.0;
            for (int c = 0; c < g.cols; ++c) gsum += grow[c];
            double mx = x[0];
            for (int c = 1; c < g.cols; ++c) mx = std::max(mx, x[c]);
            double z = 0.0;
            for (int c = 0; c < g.cols; ++c) z += std::exp(x[c] - mx);
            for (int c = 0; c < g.cols; ++c)
                arow[c] += grow[c] - std::exp(x[c] - mx) / z * gsum;
        }
    });
}

Var gelu(Tape& t, Var a) {
    const Mat& av = t.val(a);
    Mat out(av.rows, av.cols);
    for (std::size_t i = 0; i < av.a.size(); ++i) {
        const double x = av.a[i];
        out.a[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    return t.make(std::move(out), [a](Tape& tt, const Mat& g) {
        const Mat& av2 = tt.val(a);
        Mat& ga = tt.grad(a);
        for (std::size_t i = 0; i < g.a.size(); ++i) {
            const double x = av2.a[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            ga.a[i] += g.a[i] * (cdf + x * pdf);
        }
    });
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
    const Mat& xv = t.val(x);
    const Mat& gv = t.val(gamma);
    const Mat& bv = t.val(beta);
    if (gv.rows != 1 || gv.cols != xv.cols || bv.rows != 1 || bv.cols != xv.cols)
        throw DimensionError("layer_norm: scale/offset must be 1 x cols");
    Mat out(xv.rows, xv.cols);
    for (int r = 0; r < xv.rows; ++r) {
        const double* row = xv.row_ptr(r);
        double* y = out.row_ptr(r);
        double mean = 0.0;
        for (int c = 0; c < xv.cols; ++c) mean += row[c];
        mean /= xv.cols;
        double var = 0.0;
        for (int c = 0; c < xv.cols; ++c) var += (row[c] - mean) * (row[c] - mean);
        var /= xv.cols;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int c = 0; c < xv.cols; ++c) y[c] = gv.a[c] * ((row[c] - mean) * inv) + bv.a[c];
    }
    return t.make(std::move(out), [x, gamma, beta, eps](Tape& tt, const Mat& g) {
        const Mat& xv2 = tt.val(x);
        const Mat& gv2 = tt.val(gamma);
        Mat& gx = tt.grad(x);
        Mat& gg = tt.grad(gamma);
        Mat& gb = tt.grad(beta);
        const int n = xv2.cols;
        for (int r = 0; r < xv2.rows; ++r) {
            const double* row = xv2.row_ptr(r);
            const double* grow = g.row_ptr(r);
            double* gxrow = gx.row_ptr(r);
            double mean = 0.0;
            for (int c = 0; c < n; ++c) mean += row[c];
            mean /= n;
            double var = 0.0;
            for (int c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
            var /= n;
            const double inv = 1.0 / std::sqrt(var + eps);
            // xhat = (x - mean) * inv; dxhat = g * gamma
            double dxhat_mean = 0.0, dxhat_xhat_mean = 0.0;
            for (int c = 0; c < n; ++c) {
                const double xhat = (row[c] - mean) * inv;
                const double dxhat = grow[c] * gv2.a[c];
                dxhat_mean += dxhat;
                dxhat_xhat_mean += dxhat * xhat;
                gg.a[c] += grow[c] * xhat;
                gb.a[c] += grow[c];
            }
            dxhat_mean /= n;
            dxhat_xhat_mean /= n;
            for (int c = 0; c < n; ++c) {
                const double xhat = (row[c] - mean) * inv;
                const double dxhat = grow[c] * gv2.a[c];
                gxrow[c] += (dxhat - dxhat_mean - xhat * dxhat_xhat_mean) * inv;
            }
        }
    });
}

Var l2_normalize_rows(Tape& t, Var a, double min_norm) {
    const Mat& av = t.val(a);
    Mat out(av.rows, av.cols);
    for (int r = 0; r < av.rows; ++r) {
        const double* x = av.row_ptr(r);
        double n2 = 0.0;
        for (int c = 0; c < av.cols; ++c) n2 += x[c] * x[c];
        const double norm = std::sqrt(n2);
        if (!(norm > min_norm)) throw NumericError("l2_normalize_rows: zero-norm row");
        double* y = out.row_ptr(r);
        for (int c = 0; c < av.cols; ++c) y[c] = x[c] / norm;
    }
    return t.make(std::move(out), [a](Tape& tt, const Mat& g) {
        const Mat& av2 = tt.val(a);
        Mat& ga = tt.grad(a);
        for (int r = 0; r < av2.rows; ++r) {
            const double* x = av2.row_ptr(r);
            const double* grow = g.row_ptr(r);
            double* arow = ga.row_ptr(r);
            double n2 = 0.0;
            for (int c = 0; c < av2.cols; ++c) n2 += x[c] * x[c];
            const double norm = std::sqrt(n2);
            double xg = 0.0;
            for (int c = 0; c < av2.cols; ++c) xg += x[c] * grow[c];
            const double inv3 = 1.0 / (norm * norm * norm);
            for (int c = 0; c < av2.cols; ++c)
                arow[c] += grow[c] / norm - x[c] * xg * inv3;
        }
    });
}

Var dropout(Tape& t, Var a, double rate, DropoutState& state) {
    const Mat& av = t.val(a);
    if (rate <= 0.0) return a;
    if (rate >= 1.0) throw UsageError("dropout rate must be < 1");
    const std::uint64_t call = state.next_call();
    const double keep = 1.0 - rate;
    Mat mask(av.rows, av.cols);
    for (std::size_t i = 0; i < mask.a.size(); ++i) {
        const std::uint64_t h = hash4(state.seed, state.stream, call, i);
        const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
        mask.a[i] = u < rate ? 0.0 : 1.0 / keep;
    }
    Mat out(av.rows, av.cols);
    for (std::size_t i = 0; i < out.a.size(); ++i) out.a[i] = av.a[i] * mask.a[i];
    return t.make(std::move(out), [a, mask](Tape& tt, const Mat& g) {
        Mat& ga = tt.grad(a);
        for (std::size_t i = 0; i < g.a.size(); ++i) ga.a[i] += g.a[i] * mask.a[i];
    });
}

Var pick_sum(Tape& t, Var a, const std::vector<std::pair<int, int>>& entries, double coeff) {
    const Mat& av = t.val(a);
    double s = 0.0;
    for (const auto& [r, c] : entries) {
        if (r < 0 || r >= av.rows || c < 0 || c >= av.cols)
            throw DimensionError("pick_sum: entry out of range");
        s += av(r, c);
    }
    Mat out(1, 1);
    out(0, 0) = coeff * s;
    auto picks = entries;
    return t.make(std::move(out), [a, picks, coeff](Tape& tt, const Mat& g) {
        Mat& ga = tt.grad(a);
        for (const auto& [r, c] : picks) ga(r, c) += coeff * g(0, 0);
    });
}

Var pick_row_cols(Tape& t, Var a, int row, const std::vector<int>& cols) {
    const Mat& av = t.val(a);
    if (row < 0 || row >= av.rows) throw DimensionError("pick_row_cols: row out of range");
    Mat out(1, static_cast<int>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (cols[i] < 0 || cols[i] >= av.cols)
            throw DimensionError("pick_row_cols: col out of range");
        out.a[i] = av(row, cols[i]);
    }
    auto cols_copy = cols;
    return t.make(std::move(out), [a, row, cols_copy](Tape& tt, const Mat& g) {
        Mat& ga = tt.grad(a);
        for (std::size_t i = 0; i < cols_copy.size(); ++i) ga(row, cols_copy[i]) += g.a[i];
    });
}

Var bce_sum(Tape& t, Var logits, const std::vector<double>& targets) {
    const Mat& zv = t.val(logits);
    if (zv.size() != targets.size()) throw DimensionError("bce_sum: target length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double z = zv.a[i];
        // max(z,0) - z*y + log(1 + exp(-|z|))
        s += std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
    }
    Mat out(1, 1);
    out(0, 0) = s;
    auto tg = targets;
    return t.make(std::move(out), [logits, tg](Tape& tt, const Mat& g) {
        const Mat& zv2 = tt.val(logits);
        Mat& gz = tt.grad(logits);
        for (std::size_t i = 0; i < tg.size(); ++i) {
            const double sig = 1.0 / (1.0 + std::exp(-zv2.a[i]));
            gz.a[i] += g(0, 0) * (sig - tg[i]);
        }
    });
}

Var scalar_affine(Tape& t, Var s, Var alpha, Var beta) {
    const Mat& sv = t.val(s);
    const double a = t.val(alpha)(0, 0);
    const double b = t.val(beta)(0, 0);
    Mat out(sv.rows, sv.cols);
    for (std::size_t i = 0; i < sv.a.size(); ++i) out.a[i] = a * sv.a[i] + b;
    return t.make(std::move(out), [s, alpha, beta](Tape& tt, const Mat& g) {
        const Mat& sv2 = tt.val(s);
        const double a2 = tt.val(alpha)(0, 0);
        Mat& gs = tt.grad(s);
        Mat& galpha = tt.grad(alpha);
        Mat& gbeta = tt.grad(beta);
        for (std::size_t i = 0; i < g.a.size(); ++i) {
            gs.a[i] += a2 * g.a[i];
            galpha(0, 0) += g.a[i] * sv2.a[i];
            gbeta(0, 0) += g.a[i];
        }
    });
}

Var lincomb(Tape& t, const std::vector<Var>& xs, const std::vector<double>& ws) {
    if (xs.size() != ws.size()) throw DimensionError("lincomb: weight count mismatch");
    Mat out(1, 1);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const Mat& v = t.val(xs[i]);
        if (v.rows != 1 || v.cols != 1) throw DimensionError("lincomb: inputs must be 1x1");
        out(0, 0) += ws[i] * v(0, 0);
    }
    auto xs_copy = xs;
    auto ws_copy = ws;
    return t.make(std::move(out), [xs_copy, ws_copy](Tape& tt, const Mat& g) {
        for (std::size_t i = 0; i < xs_copy.size(); ++i)
            tt.grad(xs_copy[i])(0, 0) += ws_copy[i] * g(0, 0);
    });
}

}  // namespace namelink::ad
