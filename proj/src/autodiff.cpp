#include "lmk/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace lmk {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                        Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

Eigen::MatrixXd to_matrix(const Tensor& t) {
    require(t.shape.size() == 2, "expected a rank-2 tensor");
    return ConstMatMap(t.data.data(), t.shape[0], t.shape[1]);
}

Image tensor_to_image(const Tensor& t) {
    require(t.shape.size() == 2, "expected {h,w} tensor");
    Image img;
    img.height = t.shape[0];
    img.width = t.shape[1];
    img.data = t.data;
    return img;
}

}  // namespace

ValueId Tape::new_value(Tensor v) {
    values_.push_back(std::move(v));
    return ValueId(values_.size() - 1);
}

void Tape::run_op(std::unique_ptr<Op> op) {
    op->forward(*this);
    ops_.push_back(std::move(op));
}

ValueId Tape::leaf(Tensor v) { return new_value(std::move(v)); }

void Tape::backward(ValueId loss, double seed) {
    require(value(loss).size() == 1, "backward needs a scalar loss value");
    grads_.clear();
    grads_.reserve(values_.size());
    for (const auto& v : values_) grads_.emplace_back(v.shape);
    grads_[size_t(loss)].data[0] = seed;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)->backward(*this);
}

void Tape::backward_with_grad(ValueId value, const Tensor& adjoint) {
    require(adjoint.shape == this->value(value).shape,
            "adjoint shape mismatch in backward_with_grad");
    grads_.clear();
    grads_.reserve(values_.size());
    for (const auto& v : values_) grads_.emplace_back(v.shape);
    grads_[size_t(value)] = adjoint;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)->backward(*this);
}

double Tape::replay(ValueId id) {
    for (auto& op : ops_) op->forward(*this);
    return value(id).value();
}

// ---------------------------------------------------------------------------
// elementwise / shape ops

namespace {

struct AddWeightedOp final : Op {
    std::vector<std::pair<ValueId, double>> terms;
    ValueId out;
    void forward(Tape& t) override {
        double acc = 0.0;
        for (const auto& [id, w] : terms) acc += w * t.value(id).value();
        t.value_mut(out).data[0] = acc;
    }
    void backward(Tape& t) override {
        const double seed = t.grad(out).data[0];
        for (const auto& [id, w] : terms) t.grad_mut(id).data[0] += seed * w;
    }
};

struct DotConstOp final : Op {
    ValueId x, out;
    std::vector<double> weights;
    void forward(Tape& t) override {
        const auto& xv = t.value(x);
        double acc = 0.0;
        for (size_t i = 0; i < xv.size(); ++i) acc += weights[i] * xv.data[i];
        t.value_mut(out).data[0] = acc;
    }
    void backward(Tape& t) override {
        const double seed = t.grad(out).data[0];
        auto& gx = t.grad_mut(x);
        for (size_t i = 0; i < gx.size(); ++i) gx.data[i] += seed * weights[i];
    }
};

struct ScaleShiftColsOp final : Op {
    ValueId x, out;
    double sx, cx, sy, cy;
    void forward(Tape& t) override {
        const auto& v = t.value(x);
        auto& o = t.value_mut(out);
        const int m = v.shape[0];
        for (int i = 0; i < m; ++i) {
            o.data[2 * i] = sx * v.data[2 * i] + cx;
            o.data[2 * i + 1] = sy * v.data[2 * i + 1] + cy;
        }
    }
    void backward(Tape& t) override {
        const auto& go = t.grad(out);
        auto& gx = t.grad_mut(x);
        const int m = t.value(x).shape[0];
        for (int i = 0; i < m; ++i) {
            gx.data[2 * i] += sx * go.data[2 * i];
            gx.data[2 * i + 1] += sy * go.data[2 * i + 1];
        }
    }
};

struct ReshapeOp final : Op {
    ValueId x, out;
    void forward(Tape& t) override {
        t.value_mut(out).data = t.value(x).data;
    }
    void backward(Tape& t) override {
        auto& gx = t.grad_mut(x);
        const auto& go = t.grad(out);
        for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += go.data[i];
    }
};

struct AppendRowsOp final : Op {
    ValueId learned, out;
    Tensor anchors;  // constant rows, excluded from differentiation
    void forward(Tape& t) override {
        const auto& v = t.value(learned);
        auto& o = t.value_mut(out);
        std::copy(v.data.begin(), v.data.end(), o.data.begin());
        std::copy(anchors.data.begin(), anchors.data.end(),
                  o.data.begin() + v.data.size());
    }
    void backward(Tape& t) override {
        auto& gl = t.grad_mut(learned);
        const auto& go = t.grad(out);
        for (size_t i = 0; i < gl.data.size(); ++i) gl.data[i] += go.data[i];
    }
};

}  // namespace

ValueId Tape::add_weighted(
    const std::vector<std::pair<ValueId, double>>& terms) {
    auto op = std::make_unique<AddWeightedOp>();
    for (const auto& [id, w] : terms)
        require(value(id).size() == 1, "add_weighted needs scalar inputs");
    op->terms = terms;
    const ValueId out = new_value(Tensor({1}));
    op->out = out;
    run_op(std::move(op));
    return out;
}

ValueId Tape::dot_const(ValueId x, std::vector<double> weights) {
    require(weights.size() == value(x).size(), "dot_const weight length mismatch");
    auto op = std::make_unique<DotConstOp>();
    op->x = x;
    op->weights = std::move(weights);
    const ValueId out = new_value(Tensor({1}));
    op->out = out;
    run_op(std::move(op));
    return out;
}

ValueId Tape::scale_shift_cols(ValueId x, double sx, double cx, double sy,
                               double cy) {
    const auto& s = value(x).shape;
    require(s.size() == 2 && s[1] == 2, "scale_shift_cols expects {m,2}");
    auto op = std::make_unique<ScaleShiftColsOp>();
    op->x = x;
    op->sx = sx;
    op->cx = cx;
    op->sy = sy;
    op->cy = cy;
    const ValueId out = new_value(Tensor(s));
    op->out = out;
    run_op(std::move(op));
    return out;
}

ValueId Tape::reshape(ValueId x, std::vector<int> new_shape) {
    require(Tensor::element_count(new_shape) == value(x).size(),
            "reshape changes the element count");
    auto op = std::make_unique<ReshapeOp>();
    op->x = x;
    const ValueId out = new_value(Tensor(std::move(new_shape)));
    op->out = out;
    run_op(std::move(op));
    return out;
}

ValueId Tape::append_rows_stopgrad(ValueId learned, const Tensor& anchors) {
    const auto& s = value(learned).shape;
    require(s.size() == 2 && anchors.shape.size() == 2 &&
                s[1] == anchors.shape[1],
            "append_rows_stopgrad expects matching column counts");
    auto op = std::make_unique<AppendRowsOp>();
    op->learned = learned;
    op->anchors = anchors;
    const ValueId out = new_value(Tensor({s[0] + anchors.shape[0], s[1]}));
    op->out = out;
    run_op(std::move(op));
    return out;
}

// ---------------------------------------------------------------------------
// neural-net primitives

namespace {

struct Conv3x3Op final : Op {
    ValueId x, w, b, out;
    bool relu;
    void forward(Tape& t) override {
        const auto& xv = t.value(x);
        const auto& wv = t.value(w);
        const auto& bv = t.value(b);
        auto& ov = t.value_mut(out);
        const int ic_n = xv.shape[0], h = xv.shape[1], wd = xv.shape[2];
        const int oc_n = wv.shape[0];
        const size_t plane = size_t(h) * wd;
        for (int oc = 0; oc < oc_n; ++oc)
            std::fill_n(ov.data.begin() + oc * plane, plane, bv.data[oc]);
        for (int oc = 0; oc < oc_n; ++oc) {
            double* outp = ov.data.data() + oc * plane;
            for (int ic = 0; ic < ic_n; ++ic) {
                const double* inp = xv.data.data() + ic * plane;
                const double* wp = wv.data.data() + ((oc * ic_n) + ic) * 9;
                for (int ky = 0; ky < 3; ++ky) {
                    const int dy = ky - 1;
                    const int y_lo = std::max(0, -dy);
                    const int y_hi = std::min(h, h - dy);
                    for (int kx = 0; kx < 3; ++kx) {
                        const int dx = kx - 1;
                        const double coef = wp[ky * 3 + kx];
                        const int x_lo = std::max(0, -dx);
                        const int x_hi = std::min(wd, wd - dx);
                        for (int y = y_lo; y < y_hi; ++y) {
                            double* orow = outp + size_t(y) * wd;
                            const double* irow = inp + size_t(y + dy) * wd + dx;
                            for (int xx = x_lo; xx < x_hi; ++xx)
                                orow[xx] += coef * irow[xx];
                        }
                    }
                }
            }
        }
        if (relu)
            for (auto& v : ov.data) v = v > 0.0 ? v : 0.0;
    }
    void backward(Tape& t) override {
        const auto& xv = t.value(x);
        const auto& wv = t.value(w);
        const auto& ov = t.value(out);
        const auto& go = t.grad(out);
        auto& gx = t.grad_mut(x);
        auto& gw = t.grad_mut(w);
        auto& gb = t.grad_mut(b);
        const int ic_n = xv.shape[0], h = xv.shape[1], wd = xv.shape[2];
        const int oc_n = wv.shape[0];
        const size_t plane = size_t(h) * wd;
        // ReLU gate: pre-activation <= 0 exactly when the stored output is 0
        std::vector<double> dpre(go.data.size());
        if (relu) {
            for (size_t i = 0; i < dpre.size(); ++i)
                dpre[i] = ov.data[i] > 0.0 ? go.data[i] : 0.0;
        } else {
            dpre = go.data;
        }
        for (int oc = 0; oc < oc_n; ++oc) {
            const double* dp = dpre.data() + oc * plane;
            double acc = 0.0;
            for (size_t i = 0; i < plane; ++i) acc += dp[i];
            gb.data[oc] += acc;
            for (int ic = 0; ic < ic_n; ++ic) {
                const double* inp = xv.data.data() + ic * plane;
                double* gxp = gx.data.data() + ic * plane;
                const double* wp = wv.data.data() + ((oc * ic_n) + ic) * 9;
                double* gwp = gw.data.data() + ((oc * ic_n) + ic) * 9;
                for (int ky = 0; ky < 3; ++ky) {
                    const int dy = ky - 1;
                    const int y_lo = std::max(0, -dy);
                    const int y_hi = std::min(h, h - dy);
                    for (int kx = 0; kx < 3; ++kx) {
                        const int dx = kx - 1;
                        const int x_lo = std::max(0, -dx);
                        const int x_hi = std::min(wd, wd - dx);
                        const double coef = wp[ky * 3 + kx];
                        double wacc = 0.0;
                        for (int y = y_lo; y < y_hi; ++y) {
                            const double* drow = dp + size_t(y) * wd;
                            const double* irow = inp + size_t(y + dy) * wd + dx;
                            double* grow = gxp + size_t(y + dy) * wd + dx;
                            for (int xx = x_lo; xx < x_hi; ++xx) {
                                wacc += drow[xx] * irow[xx];
                                grow[xx] += coef * drow[xx];
                            }
                        }
                        gwp[ky * 3 + kx] += wacc;
                    }
                }
            }
        }
    }
};

struct MaxPool2Op final : Op {
    ValueId x, out;
    std::vector<uint8_t> argmax;  // ky*2 + kx per output element
    void forward(Tape& t) override {
        const auto& xv = t.value(x);
        auto& ov = t.value_mut(out);
        const int c_n = xv.shape[0], h = xv.shape[1], wd = xv.shape[2];
        const int oh = h / 2, ow = wd / 2;
        argmax.assign(ov.size(), 0);
        size_t oi = 0;
        for (int c = 0; c < c_n; ++c) {
            const double* plane = xv.data.data() + size_t(c) * h * wd;
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx, ++oi) {
                    const double* p = plane + size_t(2 * y) * wd + 2 * xx;
                    double best = p[0];
                    uint8_t arg = 0;
                    if (p[1] > best) { best = p[1]; arg = 1; }
                    if (p[wd] > best) { best = p[wd]; arg = 2; }
                    if (p[wd + 1] > best) { best = p[wd + 1]; arg = 3; }
                    ov.data[oi] = best;
                    argmax[oi] = arg;
                }
        }
    }
    void backward(Tape& t) override {
        const auto& xv = t.value(x);
        const auto& go = t.grad(out);
        auto& gx = t.grad_mut(x);
        const int c_n = xv.shape[0], h = xv.shape[1], wd = xv.shape[2];
        const int oh = h / 2, ow = wd / 2;
        size_t oi = 0;
        for (int c = 0; c < c_n; ++c) {
            double* plane = gx.data.data() + size_t(c) * h * wd;
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx, ++oi) {
                    const uint8_t a = argmax[oi];
                    const int yy = 2 * y + (a >> 1), xxx = 2 * xx + (a & 1);
                    plane[size_t(yy) * wd + xxx] += go.data[oi];
                }
        }
    }
};

struct LinearOp final : Op {
    ValueId x, w, b, out;
    void forward(Tape& t) override {
        const auto& xv = t.value(x);
        const auto& wv = t.value(w);
        const auto& bv = t.value(b);
        auto& ov = t.value_mut(out);
        const int n = int(xv.size()), m = int(bv.size());
        ConstMatMap wm(wv.data.data(), m, n);
        ConstVecMap xm(xv.data.data(), n);
        VecMap om(ov.data.data(), m);
        om = wm * xm + ConstVecMap(bv.data.data(), m);
    }
    void backward(Tape& t) override {
        const auto& xv = t.value(x);
        const auto& wv = t.value(w);
        const auto& go = t.grad(out);
        const int n = int(xv.size()), m = int(go.size());
        ConstMatMap wm(wv.data.data(), m, n);
        ConstVecMap xm(xv.data.data(), n);
        ConstVecMap gom(go.data.data(), m);
        VecMap gxm(t.grad_mut(x).data.data(), n);
        MatMap gwm(t.grad_mut(w).data.data(), m, n);
        VecMap gbm(t.grad_mut(b).data.data(), m);
        gxm.noalias() += wm.transpose() * gom;
        gwm.noalias() += gom * xm.transpose();
        gbm += gom;
    }
};

struct TanhOp final : Op {
    ValueId x, out;
    void forward(Tape& t) override {
        const auto& xv = t.value(x);
        auto& ov = t.value_mut(out);
        for (size_t i = 0; i < xv.size(); ++i) ov.data[i] = std::tanh(xv.data[i]);
    }
    void backward(Tape& t) override {
        const auto& ov = t.value(out);
        const auto& go = t.grad(out);
        auto& gx = t.grad_mut(x);
        for (size_t i = 0; i < go.size(); ++i)
            gx.data[i] += go.data[i] * (1.0 - ov.data[i] * ov.data[i]);
    }
};

}  // namespace

ValueId Tape::conv3x3(ValueId x, ValueId w, ValueId b, bool relu) {
    const auto& xs = value(x).shape;
    const auto& ws = value(w).shape;
    require(xs.size() == 3 && ws.size() == 4 && ws[1] == xs[0] && ws[2] == 3 &&
                ws[3] == 3 && int(value(b).size()) == ws[0],
            "conv3x3 shape mismatch");
    auto op = std::make_unique<Conv3x3Op>();
    op->x = x;
    op->w = w;
    op->b = b;
    op->relu = relu;
    const ValueId out = new_value(Tensor({ws[0], xs[1], xs[2]}));
    op->out = out;
    run_op(std::move(op));
    return out;
}

ValueId Tape::maxpool2(ValueId x) {
    const auto& xs = value(x).shape;
    require(xs.size() == 3 && xs[1] % 2 == 0 && xs[2] % 2 == 0,
            "maxpool2 needs even spatial extents");
    auto op = std::make_unique<MaxPool2Op>();
    op->x = x;
    const ValueId out = new_value(Tensor({xs[0], xs[1] / 2, xs[2] / 2}));
    op->out = out;
    run_op(std::move(op));
    return out;
}

ValueId Tape::linear(ValueId x, ValueId w, ValueId b) {
    const auto& ws = value(w).shape;
    require(ws.size() == 2 && size_t(ws[1]) == value(x).size() &&
                size_t(ws[0]) == value(b).size(),
            "linear shape mismatch");
    auto op = std::make_unique<LinearOp>();
    op->x = x;
    op->w = w;
    op->b = b;
    const ValueId out = new_value(Tensor({ws[0]}));
    op->out = out;
    run_op(std::move(op));
    return out;
}

ValueId Tape::tanh_op(ValueId x) {
    auto op = std::make_unique<TanhOp>();
    op->x = x;
    const ValueId out = new_value(Tensor(value(x).shape));
    op->out = out;
    run_op(std::move(op));
    return out;
}

// ---------------------------------------------------------------------------
// TPS primitives

namespace {

LandmarkSet tensor_to_landmarks(const Tensor& t) {
    require(t.shape.size() == 2 && t.shape[1] == 2, "expected {m,2} tensor");
    LandmarkSet lms;
    lms.points.resize(size_t(t.shape[0]));
    for (int i = 0; i < t.shape[0]; ++i)
        lms.points[i] = {t.data[2 * i], t.data[2 * i + 1]};
    return lms;
}

struct TpsSystemOp final : Op {
    ValueId target, source;
    ValueId block, kx, ky;
    void forward(Tape& t) override {
        const auto src = tensor_to_landmarks(t.value(source));
        const auto tgt = tensor_to_landmarks(t.value(target));
        const TpsSystem sys = build_system(src, tgt);
        const int n = int(sys.block.rows());
        auto& bt = t.value_mut(block);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) bt.data[size_t(i) * n + j] = sys.block(i, j);
        std::copy(sys.kx.data(), sys.kx.data() + n, t.value_mut(kx).data.begin());
        std::copy(sys.ky.data(), sys.ky.data() + n, t.value_mut(ky).data.begin());
    }
    void backward(Tape& t) override {
        const auto& tv = t.value(target);
        const int m = tv.shape[0];
        const int n = m + 3;
        const auto& gb = t.grad(block);
        const auto& gkx = t.grad(kx);
        const auto& gky = t.grad(ky);
        auto& gt = t.grad_mut(target);
        auto& gs = t.grad_mut(source);
        // rhs rows 3..m+2 carry the source coordinates
        for (int i = 0; i < m; ++i) {
            gs.data[2 * i] += gkx.data[3 + i];
            gs.data[2 * i + 1] += gky.data[3 + i];
        }
        // constraint rows and the affine columns carry target coordinates
        for (int j = 0; j < m; ++j) {
            gt.data[2 * j] += gb.data[size_t(0) * n + j];
            gt.data[2 * j + 1] += gb.data[size_t(1) * n + j];
        }
        for (int i = 0; i < m; ++i) {
            gt.data[2 * i] += gb.data[size_t(3 + i) * n + m];
            gt.data[2 * i + 1] += gb.data[size_t(3 + i) * n + m + 1];
        }
        // kernel entries phi(||t_i - t_j||); d phi / d r2 = (log r2 + 1) / 2
        for (int i = 0; i < m; ++i) {
            const double xi = tv.data[2 * i], yi = tv.data[2 * i + 1];
            for (int j = 0; j < m; ++j) {
                if (i == j) continue;
                const double g = gb.data[size_t(3 + i) * n + j];
                if (g == 0.0) continue;
                const double dx = xi - tv.data[2 * j];
                const double dy = yi - tv.data[2 * j + 1];
                const double r2 = dx * dx + dy * dy;
                if (r2 <= 0.0) continue;  // removable-singularity limit
                const double dphi = 0.5 * (std::log(r2) + 1.0);
                gt.data[2 * i] += g * dphi * 2.0 * dx;
                gt.data[2 * i + 1] += g * dphi * 2.0 * dy;
                gt.data[2 * j] -= g * dphi * 2.0 * dx;
                gt.data[2 * j + 1] -= g * dphi * 2.0 * dy;
            }
        }
    }
};

struct TpsSolveOp final : Op {
    ValueId block, kx, ky;
    ValueId wx, wy;
    void forward(Tape& t) override {
        const auto& bt = t.value(block);
        const int n = bt.shape[0];
        const Eigen::MatrixXd b = to_matrix(bt);
        const auto lu = factorize_block(b);
        ConstVecMap kxm(t.value(kx).data.data(), n);
        ConstVecMap kym(t.value(ky).data.data(), n);
        const Eigen::VectorXd sx = solve_refined(lu, b, kxm);
        const Eigen::VectorXd sy = solve_refined(lu, b, kym);
        std::copy(sx.data(), sx.data() + n, t.value_mut(wx).data.begin());
        std::copy(sy.data(), sy.data() + n, t.value_mut(wy).data.begin());
    }
    void backward(Tape& t) override {
        // w = B^-1 k:  dL/dk = B^-T g,  dL/dB = -(B^-T g) w^T
        const auto& bt = t.value(block);
        const int n = bt.shape[0];
        const Eigen::MatrixXd b = to_matrix(bt);
        Eigen::PartialPivLU<Eigen::MatrixXd> lu_t(b.transpose());
        ConstVecMap gwx(t.grad(wx).data.data(), n);
        ConstVecMap gwy(t.grad(wy).data.data(), n);
        const Eigen::VectorXd gkx = lu_t.solve(gwx);
        const Eigen::VectorXd gky = lu_t.solve(gwy);
        ConstVecMap wxv(t.value(wx).data.data(), n);
        ConstVecMap wyv(t.value(wy).data.data(), n);
        MatMap gb(t.grad_mut(block).data.data(), n, n);
        gb.noalias() -= gkx * wxv.transpose();
        gb.noalias() -= gky * wyv.transpose();
        VecMap(t.grad_mut(kx).data.data(), n) += gkx;
        VecMap(t.grad_mut(ky).data.data(), n) += gky;
    }
};

struct TransformGridOp final : Op {
    ValueId wx, wy, ctrl;
    ValueId out;  // {2, h*w}: row 0 = tx, row 1 = ty
    int width = 0, height = 0;
    std::vector<double> logr2;  // cached log(r^2) per (control, pixel)

    void forward(Tape& t) override {
        const auto& wxv = t.value(wx).data;
        const auto& wyv = t.value(wy).data;
        const auto& cv = t.value(ctrl);
        const int m = cv.shape[0];
        const size_t npix = size_t(width) * height;
        auto& ov = t.value_mut(out);
        double* tx = ov.data.data();
        double* ty = ov.data.data() + npix;
        const double ax = wxv[m], bx = wxv[m + 1], cx0 = wxv[m + 2];
        const double ay = wyv[m], by = wyv[m + 1], cy0 = wyv[m + 2];
        size_t idx = 0;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x, ++idx) {
                tx[idx] = ax * x + bx * y + cx0;
                ty[idx] = ay * x + by * y + cy0;
            }
        logr2.assign(size_t(m) * npix, 0.0);
        for (int i = 0; i < m; ++i) {
            const double px = cv.data[2 * i], py = cv.data[2 * i + 1];
            const double wxi = wxv[i], wyi = wyv[i];
            double* lr = logr2.data() + size_t(i) * npix;
            idx = 0;
            for (int y = 0; y < height; ++y) {
                const double dy = y - py;
                const double dy2 = dy * dy;
                for (int x = 0; x < width; ++x, ++idx) {
                    const double dx = x - px;
                    const double r2 = dx * dx + dy2;
                    double phi = 0.0;
                    if (r2 > 0.0) {
                        const double l = std::log(r2);
                        lr[idx] = l;
                        phi = 0.5 * r2 * l;
                    }
                    tx[idx] += wxi * phi;
                    ty[idx] += wyi * phi;
                }
            }
        }
    }

    void backward(Tape& t) override {
        const auto& wxv = t.value(wx).data;
        const auto& wyv = t.value(wy).data;
        const auto& cv = t.value(ctrl);
        const int m = cv.shape[0];
        const size_t npix = size_t(width) * height;
        const auto& go = t.grad(out);
        const double* gtx = go.data.data();
        const double* gty = go.data.data() + npix;
        auto& gwx = t.grad_mut(wx).data;
        auto& gwy = t.grad_mut(wy).data;
        auto& gc = t.grad_mut(ctrl).data;

        // affine coefficients
        double s_ax = 0, s_bx = 0, s_cx = 0, s_ay = 0, s_by = 0, s_cy = 0;
        size_t idx = 0;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x, ++idx) {
                s_ax += gtx[idx] * x;
                s_bx += gtx[idx] * y;
                s_cx += gtx[idx];
                s_ay += gty[idx] * x;
                s_by += gty[idx] * y;
                s_cy += gty[idx];
            }
        gwx[m] += s_ax;
        gwx[m + 1] += s_bx;
        gwx[m + 2] += s_cx;
        gwy[m] += s_ay;
        gwy[m + 1] += s_by;
        gwy[m + 2] += s_cy;

        for (int i = 0; i < m; ++i) {
            const double px = cv.data[2 * i], py = cv.data[2 * i + 1];
            const double wxi = wxv[i], wyi = wyv[i];
            const double* lr = logr2.data() + size_t(i) * npix;
            double acc_wx = 0.0, acc_wy = 0.0, acc_px = 0.0, acc_py = 0.0;
            idx = 0;
            for (int y = 0; y < height; ++y) {
                const double dy = y - py;
                const double dy2 = dy * dy;
                for (int x = 0; x < width; ++x, ++idx) {
                    const double dx = x - px;
                    const double r2 = dx * dx + dy2;
                    if (r2 <= 0.0) continue;
                    const double l = lr[idx];
                    const double phi = 0.5 * r2 * l;
                    const double g = gtx[idx] * wxi + gty[idx] * wyi;
                    acc_wx += gtx[idx] * phi;
                    acc_wy += gty[idx] * phi;
                    // d phi / d px = -(log r2 + 1) * dx
                    const double dphi = l + 1.0;
                    acc_px -= g * dphi * dx;
                    acc_py -= g * dphi * dy;
                }
            }
            gwx[i] += acc_wx;
            gwy[i] += acc_wy;
            gc[2 * i] += acc_px;
            gc[2 * i + 1] += acc_py;
        }
    }
};

struct GridSampleOp final : Op {
    ValueId coords, out;
    Image source;
    void forward(Tape& t) override {
        const auto& cv = t.value(coords);
        const size_t npix = cv.size() / 2;
        const double* tx = cv.data.data();
        const double* ty = cv.data.data() + npix;
        auto& ov = t.value_mut(out);
        for (size_t i = 0; i < npix; ++i)
            ov.data[i] = bilinear_sample(source, tx[i], ty[i]);
    }
    void backward(Tape& t) override {
        const auto& cv = t.value(coords);
        const size_t npix = cv.size() / 2;
        const double* tx = cv.data.data();
        const double* ty = cv.data.data() + npix;
        const auto& go = t.grad(out);
        auto& gc = t.grad_mut(coords);
        for (size_t i = 0; i < npix; ++i) {
            if (go.data[i] == 0.0) continue;
            double dvdx, dvdy;
            bilinear_sample_grad(source, tx[i], ty[i], dvdx, dvdy);
            gc.data[i] += go.data[i] * dvdx;
            gc.data[npix + i] += go.data[i] * dvdy;
        }
    }
};

struct MatchLossOp final : Op {
    ValueId warped, out;
    Image target;
    MatchSpec spec;
    void forward(Tape& t) override {
        const Image reg = tensor_to_image(t.value(warped));
        t.value_mut(out).data[0] = match_loss(target, reg, spec);
    }
    void backward(Tape& t) override {
        const double seed = t.grad(out).data[0];
        if (seed == 0.0) return;
        const Image reg = tensor_to_image(t.value(warped));
        std::vector<double> d_reg;
        match_loss_grad(target, reg, spec, d_reg);
        auto& gw = t.grad_mut(warped);
        for (size_t i = 0; i < d_reg.size(); ++i)
            gw.data[i] += seed * d_reg[i];
    }
};

struct MaskMulOp final : Op {
    ValueId x, out;
    Mask mask;
    void forward(Tape& t) override {
        const auto& xv = t.value(x);
        auto& ov = t.value_mut(out);
        for (size_t i = 0; i < xv.size(); ++i)
            ov.data[i] = xv.data[i] * mask.data[i];
    }
    void backward(Tape& t) override {
        const auto& go = t.grad(out);
        auto& gx = t.grad_mut(x);
        for (size_t i = 0; i < go.size(); ++i)
            gx.data[i] += go.data[i] * mask.data[i];
    }
};

struct CondNumberOp final : Op {
    ValueId block, out;
    Eigen::MatrixXd inv;  // cached from forward
    void forward(Tape& t) override {
        const Eigen::MatrixXd b = to_matrix(t.value(block));
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(b);
        const double rc = lu.rcond();
        if (!(rc > 0.0))
            throw SolverError("singular block in condition-number term",
                              std::numeric_limits<double>::infinity());
        inv = lu.inverse();
        t.value_mut(out).data[0] = 2.0 * b.norm() * inv.norm();
    }
    void backward(Tape& t) override {
        const double seed = t.grad(out).data[0];
        if (seed == 0.0) return;
        const Eigen::MatrixXd b = to_matrix(t.value(block));
        const double nb = b.norm();
        const double ni = inv.norm();
        // d kappa / dB = 2 [ (||C||/||B||) B - (||B||/||C||) C^T C C^T ],
        // C = B^-1 (from d(B^-1) = -B^-1 dB B^-1)
        const Eigen::MatrixXd d =
            2.0 * ((ni / nb) * b -
                   (nb / ni) * (inv.transpose() * inv * inv.transpose()));
        const int n = int(b.rows());
        auto& gb = t.grad_mut(block);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                gb.data[size_t(i) * n + j] += seed * d(i, j);
    }
};

struct MatInverseOp final : Op {
    ValueId m, out;
    void forward(Tape& t) override {
        const Eigen::MatrixXd a = to_matrix(t.value(m));
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
        const double rc = lu.rcond();
        if (!(rc > 0.0))
            throw SolverError("matrix inverse of a singular matrix",
                              std::numeric_limits<double>::infinity());
        const Eigen::MatrixXd c = lu.inverse();
        auto& ov = t.value_mut(out);
        const int n = int(a.rows());
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) ov.data[size_t(i) * n + j] = c(i, j);
    }
    void backward(Tape& t) override {
        const Eigen::MatrixXd c = to_matrix(t.value(out));
        const Eigen::MatrixXd gc = to_matrix(t.grad(out));
        const Eigen::MatrixXd gm = -c.transpose() * gc * c.transpose();
        const int n = int(c.rows());
        auto& g = t.grad_mut(m);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) g.data[size_t(i) * n + j] += gm(i, j);
    }
};

}  // namespace

Tape::TpsSystemIds Tape::tps_system(ValueId target_lms, ValueId source_lms) {
    const auto& ts = value(target_lms).shape;
    require(ts.size() == 2 && ts[1] == 2 && value(source_lms).shape == ts,
            "tps_system expects two {m,2} tensors");
    const int n = ts[0] + 3;
    auto op = std::make_unique<TpsSystemOp>();
    op->target = target_lms;
    op->source = source_lms;
    TpsSystemIds ids;
    ids.block = new_value(Tensor({n, n}));
    ids.kx = new_value(Tensor({n}));
    ids.ky = new_value(Tensor({n}));
    op->block = ids.block;
    op->kx = ids.kx;
    op->ky = ids.ky;
    run_op(std::move(op));
    return ids;
}

Tape::TpsSolveIds Tape::tps_solve(ValueId block, ValueId kx, ValueId ky) {
    const auto& bs = value(block).shape;
    require(bs.size() == 2 && bs[0] == bs[1] &&
                int(value(kx).size()) == bs[0] && int(value(ky).size()) == bs[0],
            "tps_solve shape mismatch");
    auto op = std::make_unique<TpsSolveOp>();
    op->block = block;
    op->kx = kx;
    op->ky = ky;
    TpsSolveIds ids;
    ids.wx = new_value(Tensor({bs[0]}));
    ids.wy = new_value(Tensor({bs[0]}));
    op->wx = ids.wx;
    op->wy = ids.wy;
    run_op(std::move(op));
    return ids;
}

ValueId Tape::transform_grid(ValueId wx, ValueId wy, ValueId control_lms,
                             int width, int height) {
    const auto& cs = value(control_lms).shape;
    require(cs.size() == 2 && cs[1] == 2, "transform_grid expects {m,2} controls");
    require(int(value(wx).size()) == cs[0] + 3 &&
                int(value(wy).size()) == cs[0] + 3,
            "transform_grid solution length mismatch");
    auto op = std::make_unique<TransformGridOp>();
    op->wx = wx;
    op->wy = wy;
    op->ctrl = control_lms;
    op->width = width;
    op->height = height;
    const ValueId out = new_value(Tensor({2, height * width}));
    op->out = out;
    run_op(std::move(op));
    return out;
}

ValueId Tape::grid_sample(ValueId coords, const Image& source) {
    const auto& cs = value(coords).shape;
    require(cs.size() == 2 && cs[0] == 2 &&
                cs[1] == source.width * source.height,
            "grid_sample coordinate shape mismatch");
    auto op = std::make_unique<GridSampleOp>();
    op->coords = coords;
    op->source = source;
    const ValueId out = new_value(Tensor({source.height, source.width}));
    op->out = out;
    run_op(std::move(op));
    return out;
}

ValueId Tape::match_loss_op(ValueId warped, const Image& target,
                            const MatchSpec& spec) {
    const auto& ws = value(warped).shape;
    require(ws.size() == 2 && ws[0] == target.height && ws[1] == target.width,
            "match_loss_op extent mismatch");
    auto op = std::make_unique<MatchLossOp>();
    op->warped = warped;
    op->target = target;
    op->spec = spec;
    const ValueId out = new_value(Tensor({1}));
    op->out = out;
    run_op(std::move(op));
    return out;
}

ValueId Tape::mask_mul(ValueId x, const Mask& mask) {
    const auto& xs = value(x).shape;
    require(xs.size() == 2 && xs[0] == mask.height && xs[1] == mask.width,
            "mask_mul extent mismatch");
    auto op = std::make_unique<MaskMulOp>();
    op->x = x;
    op->mask = mask;
    const ValueId out = new_value(Tensor(xs));
    op->out = out;
    run_op(std::move(op));
    return out;
}

ValueId Tape::condition_number_op(ValueId block) {
    const auto& bs = value(block).shape;
    require(bs.size() == 2 && bs[0] == bs[1], "condition_number_op needs square");
    auto op = std::make_unique<CondNumberOp>();
    op->block = block;
    const ValueId out = new_value(Tensor({1}));
    op->out = out;
    run_op(std::move(op));
    return out;
}

ValueId Tape::mat_inverse(ValueId m) {
    const auto& ms = value(m).shape;
    require(ms.size() == 2 && ms[0] == ms[1], "mat_inverse needs a square matrix");
    auto op = std::make_unique<MatInverseOp>();
    op->m = m;
    const ValueId out = new_value(Tensor(ms));
    op->out = out;
    run_op(std::move(op));
    return out;
}

// ---------------------------------------------------------------------------

double fd_check(const std::function<double(const std::vector<double>&)>& fn,
                const std::function<std::vector<double>(
                    const std::vector<double>&)>& reverse_grad,
                const std::vector<double>& point, double step) {
    const std::vector<double> g_rm = reverse_grad(point);
    require(g_rm.size() == point.size(),
            "reverse-mode gradient length mismatch");
    double max_err = 0.0;
    std::vector<double> p = point;
    for (size_t i = 0; i < point.size(); ++i) {
        p[i] = point[i] + step;
        const double f_plus = fn(p);
        p[i] = point[i] - step;
        const double f_minus = fn(p);
        p[i] = point[i];
        require(std::isfinite(f_plus) && std::isfinite(f_minus),
                "non-finite function value in fd_check");
        const double g_fd = (f_plus - f_minus) / (2.0 * step);
        const double err = std::abs(g_rm[i] - g_fd) / (std::abs(g_fd) + 1e-8);
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace lmk
