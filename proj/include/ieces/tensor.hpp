#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ieces {

// Storage precision. f32 keeps every stored value representable as a
// 32-bit float (compute happens in double, results are rounded on store),
// f64 is the verification mode all numerical oracles run in.
enum class FloatMode { f32, f64 };

FloatMode float_mode();
void set_float_mode(FloatMode mode);

// RAII switch used by tests and the CLI --f64 flag.
struct FloatModeGuard {
    explicit FloatModeGuard(FloatMode mode) : prev_(float_mode()) { set_float_mode(mode); }
    ~FloatModeGuard() { set_float_mode(prev_); }

  private:
    FloatMode prev_;
};

// While active, ops produce constant outputs: no parents, no backward
// closure, requires_grad false. This is what makes the template branch a
// genuine stop-gradient.
bool grad_enabled();

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();

  private:
    bool prev_;
};

struct Value;
using ValuePtr = std::shared_ptr<Value>;

// A shaped array participating in reverse-mode differentiation. The
// computation record is the implicit DAG formed by `parents`; backward()
// topologically sorts it and runs each node's closure exactly once.
struct Value : std::enable_shared_from_this<Value> {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;   // same length as data once backward touches it
    bool requires_grad = false;
    std::uint64_t id = 0;

    std::vector<ValuePtr> parents;
    std::function<void()> backward_fn;

    static ValuePtr make(std::vector<int> shape, bool requires_grad = false);
    static ValuePtr make(std::vector<int> shape, std::vector<double> data,
                         bool requires_grad = false);
    static ValuePtr scalar(double v, bool requires_grad = false);

    std::size_t size() const { return data.size(); }
    bool is_scalar() const { return data.size() == 1; }
    double item() const;

    void ensure_grad();
    void zero_grad();
    // Rounds stored data through float precision when the f32 mode is active.
    void finalize();
    // Detached constant copy carrying the same numbers.
    ValuePtr detach_copy() const;
};

std::size_t shape_numel(const std::vector<int>& shape);

// ---- forward operators (each records its backward closure) ----

// Cross-correlation, C_in x H x W input against C_out x C_in x kh x kw kernel.
ValuePtr conv2d(const ValuePtr& input, const ValuePtr& kernel, const ValuePtr& bias,
                int stride, int padding);

ValuePtr maxpool2d(const ValuePtr& input, int window, int stride, int padding);
// Asymmetric padding variant used for "same" pooling with even windows.
ValuePtr maxpool2d(const ValuePtr& input, int window, int stride,
                   int pad_top, int pad_left, int pad_bottom, int pad_right);

// Center the input inside a target_h x target_w zero canvas.
ValuePtr zero_pad(const ValuePtr& input, int target_h, int target_w);

// weight (M x N) * input (N) + bias (M)
ValuePtr linear(const ValuePtr& input, const ValuePtr& weight, const ValuePtr& bias);

ValuePtr relu(const ValuePtr& input);
ValuePtr softmax(const ValuePtr& logits);
ValuePtr cross_entropy(const ValuePtr& probabilities, int target_class);
ValuePtr concat_channels(const std::vector<ValuePtr>& inputs);

ValuePtr add(const ValuePtr& a, const ValuePtr& b);
ValuePtr sub(const ValuePtr& a, const ValuePtr& b);
// Elementwise a*x + b with plain-double coefficients.
ValuePtr scale_add(const ValuePtr& x, double a, double b);
ValuePtr sum(const ValuePtr& x);
ValuePtr sum_squares(const ValuePtr& x);
ValuePtr mul_elem(const ValuePtr& a, const ValuePtr& b);
// coeffs[i] * items[i], summed into one scalar; items must be scalars.
ValuePtr weighted_sum(const std::vector<ValuePtr>& items, const std::vector<double>& coeffs);
ValuePtr flatten(const ValuePtr& x);

// Reverse-mode accumulation from a scalar loss into every requires_grad leaf.
void backward(const ValuePtr& loss);

// Central finite differences of fn around point, compared against the
// analytic gradient backward() produces. Returns the worst relative error.
double grad_check(const std::function<ValuePtr(const ValuePtr&)>& fn, const ValuePtr& point,
                  double eps = 1e-3);

bool all_finite(const Value& v);

}  // namespace ieces
