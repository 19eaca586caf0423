#pragma once

// Dense 2-D tensors with reverse-mode automatic differentiation.
//
// Every tensor is a row-major matrix (vectors are N x 1 or 1 x C, scalars are
// 1 x 1). Operations record a dynamic tape through parent pointers; calling
// backward() on a scalar walks that tape once and then releases it.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcl {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class GraphError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class DegenerateError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;
    std::vector<double> grad;  // empty until the first accumulation
    bool requires_grad = false;
    bool consumed = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    double* grad_buffer();
};

class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0, bool requires_grad = false);
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad = false);

    static Tensor scalar(double v, bool requires_grad = false) { return Tensor(1, 1, v, requires_grad); }
    // Builds a tensor from nested rows; every row must have the same length.
    static Tensor from_rows(const std::vector<std::vector<double>>& rows, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    std::size_t rows() const { return node_->rows; }
    std::size_t cols() const { return node_->cols; }
    std::size_t size() const { return node_->data.size(); }
    std::vector<std::size_t> shape() const { return {node_->rows, node_->cols}; }

    std::span<const double> data() const { return node_->data; }
    std::span<double> mutable_data() { return node_->data; }
    double operator()(std::size_t r, std::size_t c) const { return node_->data[r * node_->cols + c]; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    // Gradient buffer; zeros if nothing has been accumulated yet.
    std::vector<double> grad() const;
    void zero_grad() { node_->grad.clear(); }

    // A leaf copy of the values, cut from the tape.
    Tensor detach() const;

    const std::shared_ptr<Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<Node> node_;
};

// Runs reverse accumulation from a 1 x 1 loss. Each tensor reachable through
// recorded ops gets d(loss)/d(tensor) added to its grad. Intermediate nodes
// are released afterwards; calling backward again on the same loss throws.
void backward(const Tensor& loss);

// ---- operations ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // a * b
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // a^T * b
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor add_row(const Tensor& a, const Tensor& row);  // a[i,:] + row[0,:]
Tensor sub_row(const Tensor& a, const Tensor& row);
Tensor mul_col(const Tensor& a, const Tensor& col);  // a[i,:] * col[i,0]

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);

Tensor softmax_rows(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_rows(const Tensor& a);   // N x C -> 1 x C
Tensor max_rows(const Tensor& a);   // N x C -> 1 x C, first maximal row wins ties
Tensor repeat_rows(const Tensor& row, std::size_t n);
Tensor row_norm(const Tensor& a);   // N x C -> N x 1, Euclidean

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols);

// For every row of a, the Euclidean distance to its nearest row of b
// (first index on ties). Gradient flows through the selected pair.
Tensor nn_distance(const Tensor& a, const Tensor& b);

// Maps a 6-element tensor to a 3 x 3 rotation whose columns are the
// Gram-Schmidt orthonormalization of (v0..v2), (v3..v5) and their cross
// product. Throws DegenerateError when either norm falls below 1e-8.
Tensor rot6d(const Tensor& v);

}  // namespace dcl
