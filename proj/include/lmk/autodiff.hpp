#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "lmk/image.hpp"
#include "lmk/losses.hpp"
#include "lmk/tps.hpp"

namespace lmk {

// Dense row-major tensor of doubles. Shapes are small vectors such as
// {c,h,w}, {m,2}, {n} or {1} for scalars.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(element_count(shape), 0.0);
    }
    Tensor(std::vector<int> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        require(data.size() == element_count(shape), "tensor shape/data mismatch");
    }
    static size_t element_count(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) n *= size_t(d);
        return n;
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    size_t size() const { return data.size(); }
    double value() const {
        require(data.size() == 1, "tensor is not a scalar");
        return data[0];
    }
};

using ValueId = int;

class Tape;

// A recorded primitive. forward() recomputes outputs from inputs in place;
// backward() accumulates input adjoints from output adjoints.
struct Op {
    virtual ~Op() = default;
    virtual void forward(Tape& t) = 0;
    virtual void backward(Tape& t) = 0;
};

// Ordered record of primitive operations with saved intermediates. Emitting
// an op runs its forward pass immediately; backward() visits ops in exact
// reverse order. Single-owner: not thread-safe, but independent tapes can
// run concurrently.
class Tape {
public:
    ValueId leaf(Tensor v);

    const Tensor& value(ValueId id) const { return values_[size_t(id)]; }
    Tensor& value_mut(ValueId id) { return values_[size_t(id)]; }
    const Tensor& grad(ValueId id) const { return grads_[size_t(id)]; }
    Tensor& grad_mut(ValueId id) { return grads_[size_t(id)]; }

    // elementwise and scalar ops
    ValueId add_weighted(const std::vector<std::pair<ValueId, double>>& terms);
    ValueId dot_const(ValueId x, std::vector<double> weights);  // -> scalar
    ValueId scale_shift_cols(ValueId x, double sx, double cx, double sy,
                             double cy);  // x has shape {m,2}
    ValueId reshape(ValueId x, std::vector<int> new_shape);

    // neural-net primitives (conv is 3x3, stride 1, zero same-padding, with
    // fused bias and ReLU unless linear_output is set)
    ValueId conv3x3(ValueId x, ValueId w, ValueId b, bool relu = true);
    ValueId maxpool2(ValueId x);
    ValueId linear(ValueId x, ValueId w, ValueId b);
    ValueId tanh_op(ValueId x);

    // landmark plumbing: concatenates constant anchor rows below the learned
    // rows; the anchor block receives no gradient
    ValueId append_rows_stopgrad(ValueId learned, const Tensor& anchors);

    // TPS primitives
    struct TpsSystemIds {
        ValueId block, kx, ky;
    };
    TpsSystemIds tps_system(ValueId target_lms, ValueId source_lms);
    struct TpsSolveIds {
        ValueId wx, wy;
    };
    TpsSolveIds tps_solve(ValueId block, ValueId kx, ValueId ky);
    ValueId transform_grid(ValueId wx, ValueId wy, ValueId control_lms,
                           int width, int height);
    ValueId grid_sample(ValueId coords, const Image& source);

    // losses and regularizer
    ValueId match_loss_op(ValueId warped, const Image& target,
                          const MatchSpec& spec);
    ValueId mask_mul(ValueId x, const Mask& mask);
    ValueId condition_number_op(ValueId block);
    ValueId mat_inverse(ValueId m);

    // Runs the reverse pass from a scalar value; adjoints accumulate into
    // grad(id) for every value, in exact reverse op order.
    void backward(ValueId loss, double seed = 1.0);

    // Reverse pass seeded with a full adjoint tensor at `value` (used when a
    // downstream consumer outside this tape supplies d loss / d value).
    void backward_with_grad(ValueId value, const Tensor& adjoint);

    // Re-runs every recorded forward in order and returns value(id).
    double replay(ValueId id);

    size_t op_count() const { return ops_.size(); }

private:
    friend struct Op;
    ValueId new_value(Tensor v);
    void run_op(std::unique_ptr<Op> op);

    std::vector<Tensor> values_;
    std::vector<Tensor> grads_;
    std::vector<std::unique_ptr<Op>> ops_;

public:
    // internal: used by op implementations
    ValueId push_value(Tensor v) { return new_value(std::move(v)); }
};

// Max relative error between a reverse-mode gradient and central finite
// differences of fn at the given point:
//   max_i |g_rm[i] - g_fd[i]| / (|g_fd[i]| + 1e-8)
double fd_check(const std::function<double(const std::vector<double>&)>& fn,
                const std::function<std::vector<double>(
                    const std::vector<double>&)>& reverse_grad,
                const std::vector<double>& point, double step);

}  // namespace lmk
