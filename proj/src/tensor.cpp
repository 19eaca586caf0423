#include "dcl/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace dcl {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat view(const Node& n) { return {n.data.data(), Eigen::Index(n.rows), Eigen::Index(n.cols)}; }
ConstMapMat grad_view(const Node& n) { return {n.grad.data(), Eigen::Index(n.rows), Eigen::Index(n.cols)}; }
MapMat grad_mut(Node& n) { return {n.grad_buffer(), Eigen::Index(n.rows), Eigen::Index(n.cols)}; }

std::string dims(const Tensor& t) { return std::to_string(t.rows()) + "x" + std::to_string(t.cols()); }

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(op) + ": shape mismatch " + dims(a) + " vs " + dims(b));
}

// Creates the output node; the backward closure is only kept when some
// parent needs gradients.
Tensor make_result(std::size_t rows, std::size_t cols, std::vector<double> values,
                   std::vector<Tensor> inputs, std::function<void(Node&)> bw) {
    auto node = std::make_shared<Node>();
    node->rows = rows;
    node->cols = cols;
    node->data = std::move(values);
    bool needs = false;
    for (const auto& in : inputs) {
        if (in.node()->consumed) throw GraphError("operation on a tensor whose graph was consumed");
        needs = needs || in.requires_grad();
    }
    if (needs) {
        node->requires_grad = true;
        for (auto& in : inputs) node->parents.push_back(in.node());
        node->backward_fn = std::move(bw);
    }
    return Tensor(std::move(node));
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

}  // namespace

double* Node::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad.data();
}

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill, bool requires_grad)
    : Tensor(rows, cols, std::vector<double>(rows * cols, fill), requires_grad) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad) {
    if (rows == 0 || cols == 0) throw ShapeError("tensor dimensions must be positive");
    if (values.size() != rows * cols)
        throw ShapeError("tensor payload has " + std::to_string(values.size()) + " values for shape " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    node_ = std::make_shared<Node>();
    node_->rows = rows;
    node_->cols = cols;
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows, bool requires_grad) {
    if (rows.empty() || rows.front().empty()) throw ShapeError("from_rows: empty input");
    std::vector<double> flat;
    for (const auto& r : rows) {
        if (r.size() != rows.front().size()) throw ShapeError("from_rows: ragged rows");
        flat.insert(flat.end(), r.begin(), r.end());
    }
    return Tensor(rows.size(), rows.front().size(), std::move(flat), requires_grad);
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on a " + dims(*this) + " tensor");
    return node_->data[0];
}

std::vector<double> Tensor::grad() const {
    if (node_->grad.empty()) return std::vector<double>(size(), 0.0);
    return node_->grad;
}

Tensor Tensor::detach() const { return Tensor(rows(), cols(), node_->data, false); }

void backward(const Tensor& loss) {
    if (!loss.defined()) throw GraphError("backward on an undefined tensor");
    if (loss.size() != 1) throw ShapeError("backward needs a scalar loss, got " + dims(loss));
    Node* root = loss.node().get();
    if (root->consumed) throw GraphError("backward on a consumed graph");
    if (!root->requires_grad) throw GraphError("loss does not depend on any tensor requiring grad");

    // Iterative post-order DFS gives a topological order (inputs first).
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
    for (Node* n : order) {
        if (n->parents.empty()) continue;  // leaves keep their gradients
        n->parents.clear();
        n->backward_fn = nullptr;
        n->grad.clear();
        n->consumed = true;
    }
}

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ, " + dims(a) + " x " + dims(b));
    std::vector<double> out(a.rows() * b.cols());
    MapMat(out.data(), a.rows(), b.cols()).noalias() = view(*a.node()) * view(*b.node());
    return make_result(a.rows(), b.cols(), std::move(out), {a, b}, [](Node& self) {
        Node& x = parent(self, 0);
        Node& y = parent(self, 1);
        auto g = grad_view(self);
        if (x.requires_grad) grad_mut(x).noalias() += g * view(y).transpose();
        if (y.requires_grad) grad_mut(y).noalias() += view(x).transpose() * g;
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dimensions differ, " + dims(a) + " x " + dims(b) + "^T");
    std::vector<double> out(a.rows() * b.rows());
    MapMat(out.data(), a.rows(), b.rows()).noalias() = view(*a.node()) * view(*b.node()).transpose();
    return make_result(a.rows(), b.rows(), std::move(out), {a, b}, [](Node& self) {
        Node& x = parent(self, 0);
        Node& y = parent(self, 1);
        auto g = grad_view(self);
        if (x.requires_grad) grad_mut(x).noalias() += g * view(y);
        if (y.requires_grad) grad_mut(y).noalias() += g.transpose() * view(x);
    });
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) throw ShapeError("matmul_tn: inner dimensions differ, " + dims(a) + "^T x " + dims(b));
    std::vector<double> out(a.cols() * b.cols());
    MapMat(out.data(), a.cols(), b.cols()).noalias() = view(*a.node()).transpose() * view(*b.node());
    return make_result(a.cols(), b.cols(), std::move(out), {a, b}, [](Node& self) {
        Node& x = parent(self, 0);
        Node& y = parent(self, 1);
        auto g = grad_view(self);
        if (x.requires_grad) grad_mut(x).noalias() += view(y) * g.transpose();
        if (y.requires_grad) grad_mut(y).noalias() += view(x) * g;
    });
}

Tensor transpose(const Tensor& a) {
    std::vector<double> out(a.size());
    MapMat(out.data(), a.cols(), a.rows()) = view(*a.node()).transpose();
    return make_result(a.cols(), a.rows(), std::move(out), {a}, [](Node& self) {
        grad_mut(parent(self, 0)) += grad_view(self).transpose();
    });
}

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_result(a.rows(), a.cols(), std::move(out), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            Node& p = parent(self, k);
            if (!p.requires_grad) continue;
            double* g = p.grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return make_result(a.rows(), a.cols(), std::move(out), {a, b}, [](Node& self) {
        Node& x = parent(self, 0);
        Node& y = parent(self, 1);
        if (x.requires_grad) {
            double* g = x.grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
        if (y.requires_grad) {
            double* g = y.grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return make_result(a.rows(), a.cols(), std::move(out), {a, b}, [](Node& self) {
        Node& x = parent(self, 0);
        Node& y = parent(self, 1);
        if (x.requires_grad) {
            double* g = x.grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * y.data[i];
        }
        if (y.requires_grad) {
            double* g = y.grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * x.data[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& v : out) v *= s;
    return make_result(a.rows(), a.cols(), std::move(out), {a}, [s](Node& self) {
        double* g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += s * self.grad[i];
    });
}

Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& v : out) v += s;
    return make_result(a.rows(), a.cols(), std::move(out), {a}, [](Node& self) {
        double* g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

namespace {

Tensor row_broadcast(const Tensor& a, const Tensor& row, double sign, const char* op) {
    if (row.rows() != 1 || row.cols() != a.cols())
        throw ShapeError(std::string(op) + ": expected 1x" + std::to_string(a.cols()) + " row, got " + dims(row));
    const std::size_t n = a.rows(), c = a.cols();
    std::vector<double> out(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] += sign * row.data()[j];
    return make_result(n, c, std::move(out), {a, row}, [n, c, sign](Node& self) {
        Node& x = parent(self, 0);
        Node& r = parent(self, 1);
        if (x.requires_grad) {
            double* g = x.grad_buffer();
            for (std::size_t i = 0; i < n * c; ++i) g[i] += self.grad[i];
        }
        if (r.requires_grad) {
            double* g = r.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) g[j] += sign * self.grad[i * c + j];
        }
    });
}

}  // namespace

Tensor add_row(const Tensor& a, const Tensor& row) { return row_broadcast(a, row, 1.0, "add_row"); }
Tensor sub_row(const Tensor& a, const Tensor& row) { return row_broadcast(a, row, -1.0, "sub_row"); }

Tensor mul_col(const Tensor& a, const Tensor& col) {
    if (col.cols() != 1 || col.rows() != a.rows())
        throw ShapeError("mul_col: expected " + std::to_string(a.rows()) + "x1 column, got " + dims(col));
    const std::size_t n = a.rows(), c = a.cols();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a.data()[i * c + j] * col.data()[i];
    return make_result(n, c, std::move(out), {a, col}, [n, c](Node& self) {
        Node& x = parent(self, 0);
        Node& w = parent(self, 1);
        if (x.requires_grad) {
            double* g = x.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] * w.data[i];
        }
        if (w.requires_grad) {
            double* g = w.grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < c; ++j) acc += self.grad[i * c + j] * x.data[i * c + j];
                g[i] += acc;
            }
        }
    });
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& v : out) v = v > 0.0 ? v : 0.0;
    return make_result(a.rows(), a.cols(), std::move(out), {a}, [](Node& self) {
        Node& x = parent(self, 0);
        double* g = x.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (x.data[i] > 0.0) g[i] += self.grad[i];
    });
}

Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.data()[i];
        // Branching keeps exp() from overflowing on either tail.
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return make_result(a.rows(), a.cols(), std::move(out), {a}, [](Node& self) {
        double* g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double s = self.data[i];
            g[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

Tensor log(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(a.data()[i] > 0.0)) throw DegenerateError("log of a non-positive value");
        out[i] = std::log(a.data()[i]);
    }
    return make_result(a.rows(), a.cols(), std::move(out), {a}, [](Node& self) {
        Node& x = parent(self, 0);
        double* g = x.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / x.data[i];
    });
}

// ---- reductions -------------------------------------------------------------

Tensor softmax_rows(const Tensor& a) {
    const std::size_t n = a.rows(), c = a.cols();
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = a.data().data() + i * c;
        double* y = out.data() + i * c;
        const double mx = *std::max_element(x, x + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += (y[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < c; ++j) y[j] /= z;
    }
    return make_result(n, c, std::move(out), {a}, [n, c](Node& self) {
        double* g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
            const double* y = self.data.data() + i * c;
            const double* gy = self.grad.data() + i * c;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += y[j] * gy[j];
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (gy[j] - dot);
        }
    });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return make_result(1, 1, {s}, {a}, [](Node& self) {
        Node& x = parent(self, 0);
        double* g = x.grad_buffer();
        for (std::size_t i = 0; i < x.data.size(); ++i) g[i] += self.grad[0];
    });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor sum_rows(const Tensor& a) {
    const std::size_t n = a.rows(), c = a.cols();
    std::vector<double> out(c, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += a.data()[i * c + j];
    return make_result(1, c, std::move(out), {a}, [n, c](Node& self) {
        double* g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j];
    });
}

Tensor max_rows(const Tensor& a) {
    const std::size_t n = a.rows(), c = a.cols();
    std::vector<double> out(c);
    std::vector<std::size_t> arg(c, 0);
    for (std::size_t j = 0; j < c; ++j) {
        out[j] = a.data()[j];
        for (std::size_t i = 1; i < n; ++i)
            if (a.data()[i * c + j] > out[j]) {
                out[j] = a.data()[i * c + j];
                arg[j] = i;
            }
    }
    return make_result(1, c, std::move(out), {a}, [c, arg = std::move(arg)](Node& self) {
        double* g = parent(self, 0).grad_buffer();
        for (std::size_t j = 0; j < c; ++j) g[arg[j] * c + j] += self.grad[j];
    });
}

Tensor repeat_rows(const Tensor& row, std::size_t n) {
    if (row.rows() != 1) throw ShapeError("repeat_rows: expected a single row, got " + dims(row));
    if (n == 0) throw ShapeError("repeat_rows: zero repetitions");
    const std::size_t c = row.cols();
    std::vector<double> out(n * c);
    for (std::size_t i = 0; i < n; ++i) std::copy(row.data().begin(), row.data().end(), out.begin() + i * c);
    return make_result(n, c, std::move(out), {row}, [n, c](Node& self) {
        double* g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    });
}

Tensor row_norm(const Tensor& a) {
    const std::size_t n = a.rows(), c = a.cols();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += a.data()[i * c + j] * a.data()[i * c + j];
        out[i] = std::sqrt(s);
    }
    return make_result(n, 1, std::move(out), {a}, [n, c](Node& self) {
        Node& x = parent(self, 0);
        double* g = x.grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
            const double norm = self.data[i];
            if (norm == 0.0) continue;  // subgradient 0 at the kink
            const double k = self.grad[i] / norm;
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += k * x.data[i * c + j];
        }
    });
}

// ---- structural -------------------------------------------------------------

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t n = parts.front().rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rows() != n) throw ShapeError("concat_cols: row counts differ");
        total += p.cols();
    }
    std::vector<double> out(n * total);
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < n; ++i)
            std::copy_n(p.data().data() + i * p.cols(), p.cols(), out.data() + i * total + off);
        off += p.cols();
    }
    return make_result(n, total, std::move(out), parts, [n, total](Node& self) {
        std::size_t offset = 0;
        for (auto& pp : self.parents) {
            Node& p = *pp;
            if (p.requires_grad) {
                double* g = p.grad_buffer();
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < p.cols; ++j) g[i * p.cols + j] += self.grad[i * total + offset + j];
            }
            offset += p.cols;
        }
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t c = parts.front().cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.cols() != c) throw ShapeError("concat_rows: column counts differ");
        total += p.rows();
    }
    std::vector<double> out;
    out.reserve(total * c);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return make_result(total, c, std::move(out), parts, [](Node& self) {
        std::size_t offset = 0;
        for (auto& pp : self.parents) {
            Node& p = *pp;
            if (p.requires_grad) {
                double* g = p.grad_buffer();
                for (std::size_t i = 0; i < p.data.size(); ++i) g[i] += self.grad[offset + i];
            }
            offset += p.data.size();
        }
    });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
    if (begin >= end || end > a.rows()) throw ShapeError("slice_rows: bad range for " + dims(a));
    const std::size_t c = a.cols();
    std::vector<double> out(a.data().begin() + begin * c, a.data().begin() + end * c);
    return make_result(end - begin, c, std::move(out), {a}, [begin, c](Node& self) {
        double* g = parent(self, 0).grad_buffer() + begin * c;
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
    if (begin >= end || end > a.cols()) throw ShapeError("slice_cols: bad range for " + dims(a));
    const std::size_t n = a.rows(), c = a.cols(), w = end - begin;
    std::vector<double> out(n * w);
    for (std::size_t i = 0; i < n; ++i) std::copy_n(a.data().data() + i * c + begin, w, out.data() + i * w);
    return make_result(n, w, std::move(out), {a}, [n, c, w, begin](Node& self) {
        double* g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += self.grad[i * w + j];
    });
}

Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols) {
    if (rows * cols != a.size()) throw ShapeError("reshape: element count mismatch for " + dims(a));
    std::vector<double> out(a.data().begin(), a.data().end());
    return make_result(rows, cols, std::move(out), {a}, [](Node& self) {
        double* g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

// ---- geometry-flavoured ops ---------------------------------------------------

Tensor nn_distance(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) throw ShapeError("nn_distance: point dimensions differ");
    const std::size_t n = a.rows(), m = b.rows(), c = a.cols();
    std::vector<double> out(n);
    std::vector<std::size_t> arg(n);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < m; ++j) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < c; ++k) {
                const double d = pa[i * c + k] - pb[j * c + k];
                d2 += d * d;
            }
            if (d2 < best) {
                best = d2;
                best_j = j;
            }
        }
        out[i] = std::sqrt(best);
        arg[i] = best_j;
    }
    return make_result(n, 1, std::move(out), {a, b}, [n, c, arg = std::move(arg)](Node& self) {
        Node& x = parent(self, 0);
        Node& y = parent(self, 1);
        for (std::size_t i = 0; i < n; ++i) {
            const double d = self.data[i];
            if (d == 0.0) continue;
            const double k = self.grad[i] / d;
            for (std::size_t q = 0; q < c; ++q) {
                const double diff = x.data[i * c + q] - y.data[arg[i] * c + q];
                if (x.requires_grad) x.grad_buffer()[i * c + q] += k * diff;
                if (y.requires_grad) y.grad_buffer()[arg[i] * c + q] -= k * diff;
            }
        }
    });
}

Tensor rot6d(const Tensor& v) {
    if (v.size() != 6) throw ShapeError("rot6d: expected 6 values, got " + dims(v));
    using Eigen::Vector3d;
    const auto d = v.data();
    const Vector3d a(d[0], d[1], d[2]);
    const Vector3d b(d[3], d[4], d[5]);
    const double na = a.norm();
    if (na < 1e-8) throw DegenerateError("rot6d: first vector has near-zero norm");
    const Vector3d b1 = a / na;
    const Vector3d u = b - b1.dot(b) * b1;
    const double nu = u.norm();
    if (nu < 1e-8) throw DegenerateError("rot6d: second vector is parallel to the first");
    const Vector3d b2 = u / nu;
    const Vector3d b3 = b1.cross(b2);
    std::vector<double> out(9);
    for (int r = 0; r < 3; ++r) {
        out[r * 3 + 0] = b1[r];
        out[r * 3 + 1] = b2[r];
        out[r * 3 + 2] = b3[r];
    }
    return make_result(3, 3, std::move(out), {v}, [b, b1, b2, na, nu](Node& self) {
        const auto& gr = self.grad;
        Vector3d g1(gr[0], gr[3], gr[6]);
        Vector3d g2(gr[1], gr[4], gr[7]);
        const Vector3d g3(gr[2], gr[5], gr[8]);
        // b3 = b1 x b2
        g1 += b2.cross(g3);
        g2 += g3.cross(b1);
        // b2 = u / |u|
        const Vector3d gu = (g2 - b2 * b2.dot(g2)) / nu;
        // u = b - (b1.b) b1
        const Vector3d gb = gu - b1 * b1.dot(gu);
        g1 += -b1.dot(gu) * b - b1.dot(b) * gu;
        // b1 = a / |a|
        const Vector3d ga = (g1 - b1 * b1.dot(g1)) / na;
        double* g = parent(self, 0).grad_buffer();
        for (int k = 0; k < 3; ++k) {
            g[k] += ga[k];
            g[3 + k] += gb[k];
        }
    });
}

}  // namespace dcl
