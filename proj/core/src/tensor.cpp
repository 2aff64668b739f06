#include "mars/tensor.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace mars {

namespace {

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("tensor: negative dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

void check_finite(const double* p, std::size_t n, const char* op) {
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(p[i])) {
            throw std::runtime_error(std::string(op) + ": non-finite value in output");
        }
    }
}

bool grad_wanted(const Tensor& t) {
    return t.requires_grad() && Graph::active().recording();
}

} // namespace

Tensor::Tensor(std::vector<int> shape, bool requires_grad)
    : shape_(std::move(shape)), store_(std::make_shared<Store>()), requires_grad_(requires_grad) {
    const std::size_t n = shape_numel(shape_);
    store_->v.assign(n, 0.0);
    if (requires_grad_) store_->g.assign(n, 0.0);
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return Tensor(std::move(shape), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    Tensor t(std::move(shape), requires_grad);
    for (auto& x : t.store_->v) x = value;
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    Tensor t(std::move(shape), requires_grad);
    if (values.size() != t.numel()) throw std::invalid_argument("tensor: values/shape mismatch");
    t.store_->v = std::move(values);
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

std::size_t Tensor::numel() const {
    return store_ ? store_->v.size() : 0;
}

double* Tensor::data() { return store_->v.data(); }
const double* Tensor::data() const { return store_->v.data(); }
double* Tensor::grad() { return store_->g.empty() ? nullptr : store_->g.data(); }
const double* Tensor::grad() const { return store_->g.empty() ? nullptr : store_->g.data(); }

double Tensor::item() const {
    if (numel() != 1) throw std::runtime_error("tensor: item() on non-scalar");
    return store_->v[0];
}

void Tensor::zero_grad() {
    for (auto& g : store_->g) g = 0.0;
}

Graph& Graph::active() {
    thread_local Graph g;
    return g;
}

NoGradGuard::NoGradGuard() : prev_(Graph::active().recording_) {
    Graph::active().recording_ = false;
}

NoGradGuard::~NoGradGuard() {
    Graph::active().recording_ = prev_;
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw std::runtime_error("backward: loss must be a scalar tensor");
    }
    Graph& g = Graph::active();
    if (!loss.requires_grad() || loss.grad() == nullptr) {
        throw std::runtime_error("backward: loss is not connected to the graph");
    }
    const_cast<Tensor&>(loss).grad()[0] += 1.0;
    for (auto it = g.nodes_.rbegin(); it != g.nodes_.rend(); ++it) {
        (*it)();
    }
    g.clear();
}

// ---- primitives ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw std::invalid_argument("matmul: shape mismatch");
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    const bool rg = grad_wanted(a) || grad_wanted(b);
    Tensor out({m, n}, rg);

    const double* A = a.data();
    const double* B = b.data();
    double* C = out.data();
    for (int i = 0; i < m; ++i) {
        const double* arow = A + static_cast<std::size_t>(i) * k;
        double* crow = C + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            const double* brow = B + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
    check_finite(C, out.numel(), "matmul");

    if (rg) {
        Tensor at = a, bt = b, ot = out;
        Graph::active().push([at, bt, ot, m, k, n]() mutable {
            const double* dC = ot.grad();
            if (at.requires_grad()) {
                double* dA = at.grad();
                const double* B2 = bt.data();
                for (int i = 0; i < m; ++i) {
                    const double* dcrow = dC + static_cast<std::size_t>(i) * n;
                    double* darow = dA + static_cast<std::size_t>(i) * k;
                    for (int kk = 0; kk < k; ++kk) {
                        const double* brow = B2 + static_cast<std::size_t>(kk) * n;
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
                        darow[kk] += acc;
                    }
                }
            }
            if (bt.requires_grad()) {
                double* dB = bt.grad();
                const double* A2 = at.data();
                for (int i = 0; i < m; ++i) {
                    const double* arow = A2 + static_cast<std::size_t>(i) * k;
                    const double* dcrow = dC + static_cast<std::size_t>(i) * n;
                    for (int kk = 0; kk < k; ++kk) {
                        const double aik = arow[kk];
                        double* dbrow = dB + static_cast<std::size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) dbrow[j] += aik * dcrow[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
    const bool rg = grad_wanted(a) || grad_wanted(b);
    Tensor out(a.shape(), rg);
    const std::size_t n = out.numel();
    const double* A = a.data();
    const double* B = b.data();
    double* C = out.data();
    for (std::size_t i = 0; i < n; ++i) C[i] = A[i] + B[i];
    check_finite(C, n, "add");

    if (rg) {
        Tensor at = a, bt = b, ot = out;
        Graph::active().push([at, bt, ot, n]() mutable {
            const double* dC = ot.grad();
            if (at.requires_grad()) {
                double* dA = at.grad();
                for (std::size_t i = 0; i < n; ++i) dA[i] += dC[i];
            }
            if (bt.requires_grad()) {
                double* dB = bt.grad();
                for (std::size_t i = 0; i < n; ++i) dB[i] += dC[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("mul: shape mismatch");
    const bool rg = grad_wanted(a) || grad_wanted(b);
    Tensor out(a.shape(), rg);
    const std::size_t n = out.numel();
    const double* A = a.data();
    const double* B = b.data();
    double* C = out.data();
    for (std::size_t i = 0; i < n; ++i) C[i] = A[i] * B[i];
    check_finite(C, n, "mul");

    if (rg) {
        Tensor at = a, bt = b, ot = out;
        Graph::active().push([at, bt, ot, n]() mutable {
            const double* dC = ot.grad();
            if (at.requires_grad()) {
                double* dA = at.grad();
                const double* B2 = bt.data();
                for (std::size_t i = 0; i < n; ++i) dA[i] += dC[i] * B2[i];
            }
            if (bt.requires_grad()) {
                double* dB = bt.grad();
                const double* A2 = at.data();
                for (std::size_t i = 0; i < n; ++i) dB[i] += dC[i] * A2[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double s) {
    const bool rg = grad_wanted(a);
    Tensor out(a.shape(), rg);
    const std::size_t n = out.numel();
    const double* A = a.data();
    double* C = out.data();
    for (std::size_t i = 0; i < n; ++i) C[i] = A[i] * s;
    check_finite(C, n, "scale");

    if (rg) {
        Tensor at = a, ot = out;
        Graph::active().push([at, ot, s, n]() mutable {
            double* dA = at.grad();
            const double* dC = ot.grad();
            for (std::size_t i = 0; i < n; ++i) dA[i] += dC[i] * s;
        });
    }
    return out;
}

Tensor sum(const Tensor& a) {
    const bool rg = grad_wanted(a);
    const std::size_t n = a.numel();
    const double* A = a.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += A[i];
    Tensor out = Tensor::from({1}, {acc}, rg);
    check_finite(out.data(), 1, "sum");

    if (rg) {
        Tensor at = a, ot = out;
        Graph::active().push([at, ot, n]() mutable {
            double* dA = at.grad();
            const double d = ot.grad()[0];
            for (std::size_t i = 0; i < n; ++i) dA[i] += d;
        });
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw std::invalid_argument("transpose: expects 2-D tensor");
    const int m = a.dim(0), n = a.dim(1);
    const bool rg = grad_wanted(a);
    Tensor out({n, m}, rg);
    const double* A = a.data();
    double* C = out.data();
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            C[static_cast<std::size_t>(j) * m + i] = A[static_cast<std::size_t>(i) * n + j];
        }
    }

    if (rg) {
        Tensor at = a, ot = out;
        Graph::active().push([at, ot, m, n]() mutable {
            double* dA = at.grad();
            const double* dC = ot.grad();
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < n; ++j) {
                    dA[static_cast<std::size_t>(i) * n + j] += dC[static_cast<std::size_t>(j) * m + i];
                }
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (shape_numel(shape) != a.numel()) throw std::invalid_argument("reshape: element count mismatch");
    const bool rg = grad_wanted(a);
    Tensor out(std::move(shape), rg);
    const std::size_t n = a.numel();
    const double* A = a.data();
    double* C = out.data();
    for (std::size_t i = 0; i < n; ++i) C[i] = A[i];

    if (rg) {
        Tensor at = a, ot = out;
        Graph::active().push([at, ot, n]() mutable {
            double* dA = at.grad();
            const double* dC = ot.grad();
            for (std::size_t i = 0; i < n; ++i) dA[i] += dC[i];
        });
    }
    return out;
}

Tensor slice_cols(const Tensor& a, int start, int len) {
    if (a.ndim() != 2) throw std::invalid_argument("slice_cols: expects 2-D tensor");
    const int m = a.dim(0), n = a.dim(1);
    if (start < 0 || len <= 0 || start + len > n) throw std::invalid_argument("slice_cols: bad range");
    const bool rg = grad_wanted(a);
    Tensor out({m, len}, rg);
    const double* A = a.data();
    double* C = out.data();
    for (int i = 0; i < m; ++i) {
        const double* arow = A + static_cast<std::size_t>(i) * n + start;
        double* crow = C + static_cast<std::size_t>(i) * len;
        for (int j = 0; j < len; ++j) crow[j] = arow[j];
    }

    if (rg) {
        Tensor at = a, ot = out;
        Graph::active().push([at, ot, m, n, start, len]() mutable {
            double* dA = at.grad();
            const double* dC = ot.grad();
            for (int i = 0; i < m; ++i) {
                double* darow = dA + static_cast<std::size_t>(i) * n + start;
                const double* dcrow = dC + static_cast<std::size_t>(i) * len;
                for (int j = 0; j < len; ++j) darow[j] += dcrow[j];
            }
        });
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const int m = parts[0].dim(0);
    int total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != m) throw std::invalid_argument("concat_cols: row mismatch");
        total += p.dim(1);
        rg = rg || grad_wanted(p);
    }
    Tensor out({m, total}, rg);
    double* C = out.data();
    int off = 0;
    for (const auto& p : parts) {
        const int w = p.dim(1);
        const double* P = p.data();
        for (int i = 0; i < m; ++i) {
            double* crow = C + static_cast<std::size_t>(i) * total + off;
            const double* prow = P + static_cast<std::size_t>(i) * w;
            for (int j = 0; j < w; ++j) crow[j] = prow[j];
        }
        off += w;
    }

    if (rg) {
        std::vector<Tensor> ps = parts;
        Tensor ot = out;
        Graph::active().push([ps, ot, m, total]() mutable {
            const double* dC = ot.grad();
            int off2 = 0;
            for (auto& p : ps) {
                const int w = p.dim(1);
                if (p.requires_grad()) {
                    double* dP = p.grad();
                    for (int i = 0; i < m; ++i) {
                        const double* dcrow = dC + static_cast<std::size_t>(i) * total + off2;
                        double* dprow = dP + static_cast<std::size_t>(i) * w;
                        for (int j = 0; j < w; ++j) dprow[j] += dcrow[j];
                    }
                }
                off2 += w;
            }
        });
    }
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    const int n = parts[0].dim(1);
    int total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.dim(1) != n) throw std::invalid_argument("concat_rows: column mismatch");
        total += p.dim(0);
        rg = rg || grad_wanted(p);
    }
    Tensor out({total, n}, rg);
    double* C = out.data();
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t cnt = p.numel();
        const double* P = p.data();
        for (std::size_t i = 0; i < cnt; ++i) C[off + i] = P[i];
        off += cnt;
    }

    if (rg) {
        std::vector<Tensor> ps = parts;
        Tensor ot = out;
        Graph::active().push([ps, ot]() mutable {
            const double* dC = ot.grad();
            std::size_t off2 = 0;
            for (auto& p : ps) {
                const std::size_t cnt = p.numel();
                if (p.requires_grad()) {
                    double* dP = p.grad();
                    for (std::size_t i = 0; i < cnt; ++i) dP[i] += dC[off2 + i];
                }
                off2 += cnt;
            }
        });
    }
    return out;
}

Tensor gelu(const Tensor& a) {
    const bool rg = grad_wanted(a);
    Tensor out(a.shape(), rg);
    const std::size_t n = out.numel();
    const double* A = a.data();
    double* C = out.data();
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    for (std::size_t i = 0; i < n; ++i) {
        C[i] = 0.5 * A[i] * (1.0 + std::erf(A[i] * inv_sqrt2));
    }
    check_finite(C, n, "gelu");

    if (rg) {
        Tensor at = a, ot = out;
        Graph::active().push([at, ot, n]() mutable {
            double* dA = at.grad();
            const double* dC = ot.grad();
            const double* A2 = at.data();
            constexpr double inv_sqrt2pi = 0.3989422804014326779;
            constexpr double is2 = 0.7071067811865475244;
            for (std::size_t i = 0; i < n; ++i) {
                const double x = A2[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * is2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                dA[i] += dC[i] * (cdf + x * pdf);
            }
        });
    }
    return out;
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
    if (x.ndim() != 2 || gain.ndim() != 1 || gain.dim(0) != x.dim(1)) {
        throw std::invalid_argument("rms_norm: shape mismatch");
    }
    const int m = x.dim(0), d = x.dim(1);
    const bool rg = grad_wanted(x) || grad_wanted(gain);
    Tensor out({m, d}, rg);
    const double* X = x.data();
    const double* G = gain.data();
    double* Y = out.data();
    std::vector<double> inv_rms(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const double* xrow = X + static_cast<std::size_t>(i) * d;
        double ms = 0.0;
        for (int j = 0; j < d; ++j) ms += xrow[j] * xrow[j];
        ms = ms / d + eps;
        const double ir = 1.0 / std::sqrt(ms);
        inv_rms[static_cast<std::size_t>(i)] = ir;
        double* yrow = Y + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) yrow[j] = xrow[j] * ir * G[j];
    }
    check_finite(Y, out.numel(), "rms_norm");

    if (rg) {
        Tensor xt = x, gt = gain, ot = out;
        Graph::active().push([xt, gt, ot, inv_rms, m, d]() mutable {
            const double* dY = ot.grad();
            const double* X2 = xt.data();
            const double* G2 = gt.data();
            for (int i = 0; i < m; ++i) {
                const double ir = inv_rms[static_cast<std::size_t>(i)];
                const double* xrow = X2 + static_cast<std::size_t>(i) * d;
                const double* dyrow = dY + static_cast<std::size_t>(i) * d;
                if (gt.requires_grad()) {
                    double* dG = gt.grad();
                    for (int j = 0; j < d; ++j) dG[j] += dyrow[j] * xrow[j] * ir;
                }
                if (xt.requires_grad()) {
                    double s = 0.0;
                    for (int j = 0; j < d; ++j) s += dyrow[j] * G2[j] * xrow[j];
                    const double coef = s * ir * ir * ir / d;
                    double* dxrow = xt.grad() + static_cast<std::size_t>(i) * d;
                    for (int j = 0; j < d; ++j) {
                        dxrow[j] += dyrow[j] * G2[j] * ir - xrow[j] * coef;
                    }
                }
            }
        });
    }
    return out;
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    if (table.ndim() != 2) throw std::invalid_argument("embedding: table must be 2-D");
    const int v = table.dim(0), d = table.dim(1);
    for (int id : ids) {
        if (id < 0 || id >= v) throw std::invalid_argument("embedding: id out of range");
    }
    const int n = static_cast<int>(ids.size());
    const bool rg = grad_wanted(table);
    Tensor out({n, d}, rg);
    const double* T = table.data();
    double* C = out.data();
    for (int i = 0; i < n; ++i) {
        const double* trow = T + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d;
        double* crow = C + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) crow[j] = trow[j];
    }

    if (rg) {
        Tensor tt = table, ot = out;
        std::vector<int> ids2 = ids;
        Graph::active().push([tt, ot, ids2, n, d]() mutable {
            double* dT = tt.grad();
            const double* dC = ot.grad();
            for (int i = 0; i < n; ++i) {
                double* dtrow = dT + static_cast<std::size_t>(ids2[static_cast<std::size_t>(i)]) * d;
                const double* dcrow = dC + static_cast<std::size_t>(i) * d;
                for (int j = 0; j < d; ++j) dtrow[j] += dcrow[j];
            }
        });
    }
    return out;
}

Tensor rope(const Tensor& x, const std::vector<int>& positions, double theta_base) {
    if (x.ndim() != 2) throw std::invalid_argument("rope: expects 2-D tensor");
    const int n = x.dim(0), d = x.dim(1);
    if (d % 2 != 0) throw std::invalid_argument("rope: column count must be even");
    if (static_cast<int>(positions.size()) != n) throw std::invalid_argument("rope: positions/rows mismatch");
    const int half = d / 2;
    std::vector<double> freqs(static_cast<std::size_t>(half));
    for (int p = 0; p < half; ++p) {
        freqs[static_cast<std::size_t>(p)] = std::pow(theta_base, -2.0 * p / d);
    }

    const bool rg = grad_wanted(x);
    Tensor out({n, d}, rg);
    const double* X = x.data();
    double* Y = out.data();
    // cos/sin cached for reuse in backward
    std::vector<double> cs(static_cast<std::size_t>(n) * half), sn(static_cast<std::size_t>(n) * half);
    for (int i = 0; i < n; ++i) {
        const double pos = static_cast<double>(positions[static_cast<std::size_t>(i)]);
        const double* xrow = X + static_cast<std::size_t>(i) * d;
        double* yrow = Y + static_cast<std::size_t>(i) * d;
        for (int p = 0; p < half; ++p) {
            const double ang = pos * freqs[static_cast<std::size_t>(p)];
            const double c = std::cos(ang), s = std::sin(ang);
            cs[static_cast<std::size_t>(i) * half + p] = c;
            sn[static_cast<std::size_t>(i) * half + p] = s;
            const double x0 = xrow[2 * p], x1 = xrow[2 * p + 1];
            yrow[2 * p] = x0 * c - x1 * s;
            yrow[2 * p + 1] = x0 * s + x1 * c;
        }
    }
    check_finite(Y, out.numel(), "rope");

    if (rg) {
        Tensor xt = x, ot = out;
        Graph::active().push([xt, ot, cs, sn, n, d, half]() mutable {
            double* dX = xt.grad();
            const double* dY = ot.grad();
            for (int i = 0; i < n; ++i) {
                const double* dyrow = dY + static_cast<std::size_t>(i) * d;
                double* dxrow = dX + static_cast<std::size_t>(i) * d;
                for (int p = 0; p < half; ++p) {
                    const double c = cs[static_cast<std::size_t>(i) * half + p];
                    const double s = sn[static_cast<std::size_t>(i) * half + p];
                    const double dy0 = dyrow[2 * p], dy1 = dyrow[2 * p + 1];
                    dxrow[2 * p] += dy0 * c + dy1 * s;
                    dxrow[2 * p + 1] += -dy0 * s + dy1 * c;
                }
            }
        });
    }
    return out;
}

Tensor masked_softmax(const Tensor& scores, const Tensor& additive_mask) {
    if (scores.shape() != additive_mask.shape() || scores.ndim() != 2) {
        throw std::invalid_argument("masked_softmax: shape mismatch");
    }
    const int m = scores.dim(0), n = scores.dim(1);
    const double* S = scores.data();
    const double* M = additive_mask.data();
    const bool rg = grad_wanted(scores);
    Tensor out({m, n}, rg);
    double* P = out.data();
    for (int i = 0; i < m; ++i) {
        const double* srow = S + static_cast<std::size_t>(i) * n;
        const double* mrow = M + static_cast<std::size_t>(i) * n;
        double rowmax = -1e300;
        bool any_visible = false;
        for (int j = 0; j < n; ++j) {
            const double mv = mrow[j];
            if (mv == 0.0) {
                any_visible = true;
            } else if (mv > 0.5 * kMaskedScore) {
                throw std::invalid_argument("masked_softmax: mask entries must be 0 or the masked sentinel");
            }
            const double e = srow[j] + mv;
            if (e > rowmax) rowmax = e;
        }
        if (!any_visible) throw std::runtime_error("masked_softmax: fully-masked row");
        double* prow = P + static_cast<std::size_t>(i) * n;
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            const double e = std::exp(srow[j] + mrow[j] - rowmax);
            prow[j] = e;
            z += e;
        }
        const double inv_z = 1.0 / z;
        for (int j = 0; j < n; ++j) prow[j] *= inv_z;
    }
    check_finite(P, out.numel(), "masked_softmax");

    if (rg) {
        Tensor st = scores, ot = out;
        Graph::active().push([st, ot, m, n]() mutable {
            double* dS = st.grad();
            const double* dP = ot.grad();
            const double* P2 = ot.data();
            for (int i = 0; i < m; ++i) {
                const double* prow = P2 + static_cast<std::size_t>(i) * n;
                const double* dprow = dP + static_cast<std::size_t>(i) * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += dprow[j] * prow[j];
                double* dsrow = dS + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) dsrow[j] += prow[j] * (dprow[j] - dot);
            }
        });
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_id) {
    if (logits.ndim() != 2) throw std::invalid_argument("cross_entropy: logits must be 2-D");
    const int n = logits.dim(0), v = logits.dim(1);
    if (static_cast<int>(targets.size()) != n) throw std::invalid_argument("cross_entropy: targets/rows mismatch");
    int count = 0;
    for (int t : targets) {
        if (t == ignore_id) continue;
        if (t < 0 || t >= v) throw std::invalid_argument("cross_entropy: target out of range");
        ++count;
    }
    if (count == 0) throw std::runtime_error("cross_entropy: all positions ignored");

    const double* L = logits.data();
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const int t = targets[static_cast<std::size_t>(i)];
        if (t == ignore_id) continue;
        const double* lrow = L + static_cast<std::size_t>(i) * v;
        double rowmax = lrow[0];
        for (int j = 1; j < v; ++j) rowmax = std::max(rowmax, lrow[j]);
        double z = 0.0;
        for (int j = 0; j < v; ++j) z += std::exp(lrow[j] - rowmax);
        acc += rowmax + std::log(z) - lrow[t];
    }
    const bool rg = grad_wanted(logits);
    Tensor out = Tensor::from({1}, {acc / count}, rg);
    check_finite(out.data(), 1, "cross_entropy");

    if (rg) {
        Tensor lt = logits, ot = out;
        std::vector<int> tg = targets;
        Graph::active().push([lt, ot, tg, ignore_id, n, v, count]() mutable {
            const double d = ot.grad()[0] / count;
            double* dL = lt.grad();
            const double* L2 = lt.data();
            for (int i = 0; i < n; ++i) {
                const int t = tg[static_cast<std::size_t>(i)];
                if (t == ignore_id) continue;
                const double* lrow = L2 + static_cast<std::size_t>(i) * v;
                double rowmax = lrow[0];
                for (int j = 1; j < v; ++j) rowmax = std::max(rowmax, lrow[j]);
                double z = 0.0;
                for (int j = 0; j < v; ++j) z += std::exp(lrow[j] - rowmax);
                const double inv_z = 1.0 / z;
                double* dlrow = dL + static_cast<std::size_t>(i) * v;
                for (int j = 0; j < v; ++j) {
                    const double p = std::exp(lrow[j] - rowmax) * inv_z;
                    dlrow[j] += d * (p - (j == t ? 1.0 : 0.0));
                }
            }
        });
    }
    return out;
}

} // namespace mars
