#include <cmarl/diffcore.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace cmarl::diff {

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    std::size_t n = 1;
    for (auto e : shape_) n *= e;
    if (n != data_.size()) throw std::invalid_argument("Tensor: shape/data size mismatch");
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return Tensor(std::move(shape), std::vector<double>(n, v));
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ')';
    return os.str();
}

Tensor randn(std::vector<std::size_t> shape, std::mt19937_64& rng, double stddev) {
    Tensor t = Tensor::zeros(std::move(shape));
    std::normal_distribution<double> d(0.0, stddev);
    for (auto& v : t.data()) v = d(rng);
    return t;
}

void Node::accumulate(const Tensor& g) {
    if (grad.size() == 0) grad = Tensor::zeros(value.shape());
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
}

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
}

Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> back) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->inputs = std::move(inputs);
    n->backprop = std::move(back);
    for (const auto& in : n->inputs)
        if (in->requires_grad) n->requires_grad = true;
    return n;
}

Var unary(const Var& a, Tensor value, std::function<double(double x, double y, double g)> dfn) {
    return make_node(std::move(value), {a}, [dfn](Node& n) {
        Tensor g = Tensor::zeros(n.inputs[0]->value.shape());
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] = dfn(n.inputs[0]->value[i], n.value[i], n.grad[i]);
        n.inputs[0]->accumulate(g);
    });
}

}  // namespace

Var constant(Tensor t) { return make_node(std::move(t), {}, nullptr); }

Var make_leaf(Tensor t) {
    auto n = make_node(std::move(t), {}, nullptr);
    n->requires_grad = true;
    return n;
}

Var matmul(const Var& a, const Var& b) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) shape_error("matmul", A, B);
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor C = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A.at(i, p);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) C.at(i, j) += av * B.at(p, j);
        }
    return make_node(std::move(C), {a, b}, [m, k, n](Node& node) {
        const Tensor& A = node.inputs[0]->value;
        const Tensor& B = node.inputs[1]->value;
        const Tensor& dC = node.grad;
        Tensor dA = Tensor::zeros({m, k});
        Tensor dB = Tensor::zeros({k, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double g = dC.at(i, j);
                if (g == 0.0) continue;
                for (std::size_t p = 0; p < k; ++p) {
                    dA.at(i, p) += g * B.at(p, j);
                    dB.at(p, j) += g * A.at(i, p);
                }
            }
        node.inputs[0]->accumulate(dA);
        node.inputs[1]->accumulate(dB);
    });
}

Var transpose(const Var& a) {
    const Tensor& A = a->value;
    if (A.rank() != 2) throw std::invalid_argument("transpose: rank-2 required " + A.shape_str());
    const std::size_t m = A.rows(), n = A.cols();
    Tensor T = Tensor::zeros({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) T.at(j, i) = A.at(i, j);
    return make_node(std::move(T), {a}, [m, n](Node& node) {
        Tensor g = Tensor::zeros({m, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g.at(i, j) = node.grad.at(j, i);
        node.inputs[0]->accumulate(g);
    });
}

Var add(const Var& a, const Var& b) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (A.same_shape(B)) {
        Tensor C = A;
        for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
        return make_node(std::move(C), {a, b}, [](Node& node) {
            node.inputs[0]->accumulate(node.grad);
            node.inputs[1]->accumulate(node.grad);
        });
    }
    // Row broadcast: (m,n) + (n) or (m,n) + (1,n).
    if (A.rank() == 2 && B.size() == A.cols() && (B.rank() == 1 || B.rows() == 1)) {
        const std::size_t m = A.rows(), n = A.cols();
        Tensor C = A;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) C.at(i, j) += B[j];
        return make_node(std::move(C), {a, b}, [m, n](Node& node) {
            node.inputs[0]->accumulate(node.grad);
            Tensor db = Tensor::zeros(node.inputs[1]->value.shape());
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) db[j] += node.grad.at(i, j);
            node.inputs[1]->accumulate(db);
        });
    }
    shape_error("add", A, B);
}

Var sub(const Var& a, const Var& b) { return add(a, neg(b)); }

Var mul(const Var& a, const Var& b) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (!A.same_shape(B)) shape_error("mul", A, B);
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
    return make_node(std::move(C), {a, b}, [](Node& node) {
        Tensor ga = Tensor::zeros(node.value.shape());
        Tensor gb = Tensor::zeros(node.value.shape());
        for (std::size_t i = 0; i < node.value.size(); ++i) {
            ga[i] = node.grad[i] * node.inputs[1]->value[i];
            gb[i] = node.grad[i] * node.inputs[0]->value[i];
        }
        node.inputs[0]->accumulate(ga);
        node.inputs[1]->accumulate(gb);
    });
}

Var divide(const Var& a, const Var& b) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (!A.same_shape(B)) shape_error("divide", A, B);
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C[i] /= B[i];
    return make_node(std::move(C), {a, b}, [](Node& node) {
        Tensor ga = Tensor::zeros(node.value.shape());
        Tensor gb = Tensor::zeros(node.value.shape());
        for (std::size_t i = 0; i < node.value.size(); ++i) {
            const double bv = node.inputs[1]->value[i];
            ga[i] = node.grad[i] / bv;
            gb[i] = -node.grad[i] * node.inputs[0]->value[i] / (bv * bv);
        }
        node.inputs[0]->accumulate(ga);
        node.inputs[1]->accumulate(gb);
    });
}

Var neg(const Var& a) {
    Tensor C = a->value;
    for (auto& v : C.data()) v = -v;
    return unary(a, std::move(C), [](double, double, double g) { return -g; });
}

Var scale(const Var& a, double s) {
    Tensor C = a->value;
    for (auto& v : C.data()) v *= s;
    return unary(a, std::move(C), [s](double, double, double g) { return s * g; });
}

Var add_scalar(const Var& a, double c) {
    Tensor C = a->value;
    for (auto& v : C.data()) v += c;
    return unary(a, std::move(C), [](double, double, double g) { return g; });
}

Var tanh_op(const Var& a) {
    Tensor C = a->value;
    for (auto& v : C.data()) v = std::tanh(v);
    return unary(a, std::move(C), [](double, double y, double g) { return g * (1.0 - y * y); });
}

Var exp_op(const Var& a) {
    Tensor C = a->value;
    for (auto& v : C.data()) v = std::exp(std::min(v, 700.0));
    return unary(a, std::move(C),
                 [](double x, double y, double g) { return x <= 700.0 ? g * y : 0.0; });
}

Var log_op(const Var& a) {
    Tensor C = a->value;
    for (auto& v : C.data()) v = std::log(v);
    return unary(a, std::move(C), [](double x, double, double g) { return g / x; });
}

Var softplus(const Var& a) {
    Tensor C = a->value;
    for (auto& v : C.data()) v = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
    return unary(a, std::move(C), [](double x, double, double g) {
        return g / (1.0 + std::exp(-x));
    });
}

Var softmax(const Var& a, int axis) {
    Var x = a;
    const bool transposed = (a->value.rank() == 2 && axis == 0);
    if (transposed) x = transpose(a);
    const Tensor& A = x->value;
    if (A.rank() > 2) throw std::invalid_argument("softmax: rank <= 2 required");
    const std::size_t m = A.rank() == 2 ? A.rows() : 1;
    const std::size_t n = A.cols();
    Tensor C = A;
    for (std::size_t i = 0; i < m; ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, C[i * n + j]);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            C[i * n + j] = std::exp(C[i * n + j] - mx);
            s += C[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) C[i * n + j] /= s;
    }
    Var y = make_node(std::move(C), {x}, [m, n](Node& node) {
        Tensor g = Tensor::zeros(node.value.shape());
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                dot += node.grad[i * n + j] * node.value[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
                g[i * n + j] = node.value[i * n + j] * (node.grad[i * n + j] - dot);
        }
        node.inputs[0]->accumulate(g);
    });
    return transposed ? transpose(y) : y;
}

Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: empty");
    const std::size_t rank = parts[0]->value.rank();
    if (rank == 1) {
        std::size_t total = 0;
        for (const auto& p : parts) total += p->value.size();
        Tensor C = Tensor::zeros({total});
        std::size_t off = 0;
        for (const auto& p : parts) {
            std::copy(p->value.data().begin(), p->value.data().end(),
                      C.data().begin() + static_cast<long>(off));
            off += p->value.size();
        }
        return make_node(std::move(C), parts, [](Node& node) {
            std::size_t off = 0;
            for (auto& in : node.inputs) {
                Tensor g = Tensor::zeros(in->value.shape());
                for (std::size_t i = 0; i < g.size(); ++i) g[i] = node.grad[off + i];
                in->accumulate(g);
                off += g.size();
            }
        });
    }
    if (rank == 2 && axis == 0) {
        const std::size_t cols = parts[0]->value.cols();
        for (const auto& p : parts)
            if (p->value.cols() != cols) shape_error("concat", parts[0]->value, p->value);
        std::size_t rows = 0;
        for (const auto& p : parts) rows += p->value.rows();
        Tensor C = Tensor::zeros({rows, cols});
        std::size_t off = 0;
        for (const auto& p : parts) {
            std::copy(p->value.data().begin(), p->value.data().end(),
                      C.data().begin() + static_cast<long>(off));
            off += p->value.size();
        }
        return make_node(std::move(C), parts, [](Node& node) {
            std::size_t off = 0;
            for (auto& in : node.inputs) {
                Tensor g = Tensor::zeros(in->value.shape());
                for (std::size_t i = 0; i < g.size(); ++i) g[i] = node.grad[off + i];
                in->accumulate(g);
                off += g.size();
            }
        });
    }
    if (rank == 2 && axis == 1) {
        const std::size_t rows = parts[0]->value.rows();
        std::size_t cols = 0;
        for (const auto& p : parts) {
            if (p->value.rows() != rows) shape_error("concat", parts[0]->value, p->value);
            cols += p->value.cols();
        }
        Tensor C = Tensor::zeros({rows, cols});
        std::size_t coff = 0;
        for (const auto& p : parts) {
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < p->value.cols(); ++j)
                    C.at(i, coff + j) = p->value.at(i, j);
            coff += p->value.cols();
        }
        return make_node(std::move(C), parts, [rows](Node& node) {
            std::size_t coff = 0;
            for (auto& in : node.inputs) {
                const std::size_t c = in->value.cols();
                Tensor g = Tensor::zeros(in->value.shape());
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < c; ++j) g.at(i, j) = node.grad.at(i, coff + j);
                in->accumulate(g);
                coff += c;
            }
        });
    }
    throw std::invalid_argument("concat: unsupported rank/axis");
}

Var slice(const Var& a, int axis, std::size_t start, std::size_t len) {
    const Tensor& A = a->value;
    if (A.rank() == 1) {
        if (start + len > A.size()) throw std::invalid_argument("slice: out of range");
        Tensor C = Tensor::zeros({len});
        for (std::size_t i = 0; i < len; ++i) C[i] = A[start + i];
        return make_node(std::move(C), {a}, [start, len](Node& node) {
            Tensor g = Tensor::zeros(node.inputs[0]->value.shape());
            for (std::size_t i = 0; i < len; ++i) g[start + i] = node.grad[i];
            node.inputs[0]->accumulate(g);
        });
    }
    if (A.rank() != 2) throw std::invalid_argument("slice: rank <= 2 required");
    const std::size_t m = A.rows(), n = A.cols();
    if (axis == 0) {
        if (start + len > m) throw std::invalid_argument("slice: out of range");
        Tensor C = Tensor::zeros({len, n});
        for (std::size_t i = 0; i < len; ++i)
            for (std::size_t j = 0; j < n; ++j) C.at(i, j) = A.at(start + i, j);
        return make_node(std::move(C), {a}, [start, len, n](Node& node) {
            Tensor g = Tensor::zeros(node.inputs[0]->value.shape());
            for (std::size_t i = 0; i < len; ++i)
                for (std::size_t j = 0; j < n; ++j) g.at(start + i, j) = node.grad.at(i, j);
            node.inputs[0]->accumulate(g);
        });
    }
    if (start + len > n) throw std::invalid_argument("slice: out of range");
    Tensor C = Tensor::zeros({m, len});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < len; ++j) C.at(i, j) = A.at(i, start + j);
    return make_node(std::move(C), {a}, [start, len, m](Node& node) {
        Tensor g = Tensor::zeros(node.inputs[0]->value.shape());
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < len; ++j) g.at(i, start + j) = node.grad.at(i, j);
        node.inputs[0]->accumulate(g);
    });
}

Var sum_all(const Var& a) {
    double s = std::accumulate(a->value.data().begin(), a->value.data().end(), 0.0);
    return make_node(Tensor::scalar(s), {a}, [](Node& node) {
        Tensor g = Tensor::full(node.inputs[0]->value.shape(), node.grad[0]);
        node.inputs[0]->accumulate(g);
    });
}

Var sum_axis(const Var& a, int axis) {
    const Tensor& A = a->value;
    if (A.rank() != 2) throw std::invalid_argument("sum_axis: rank-2 required");
    const std::size_t m = A.rows(), n = A.cols();
    if (axis == 0) {
        Tensor C = Tensor::zeros({n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) C[j] += A.at(i, j);
        return make_node(std::move(C), {a}, [m, n](Node& node) {
            Tensor g = Tensor::zeros({m, n});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) g.at(i, j) = node.grad[j];
            node.inputs[0]->accumulate(g);
        });
    }
    Tensor C = Tensor::zeros({m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) C[i] += A.at(i, j);
    return make_node(std::move(C), {a}, [m, n](Node& node) {
        Tensor g = Tensor::zeros({m, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g.at(i, j) = node.grad[i];
        node.inputs[0]->accumulate(g);
    });
}

Var mean_all(const Var& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a->value.size()));
}

Var mean_axis(const Var& a, int axis) {
    const double denom =
        static_cast<double>(axis == 0 ? a->value.rows() : a->value.cols());
    return scale(sum_axis(a, axis), 1.0 / denom);
}

Var minimum(const Var& a, const Var& b) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (!A.same_shape(B)) shape_error("minimum", A, B);
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C[i] = std::min(A[i], B[i]);
    return make_node(std::move(C), {a, b}, [](Node& node) {
        Tensor ga = Tensor::zeros(node.value.shape());
        Tensor gb = Tensor::zeros(node.value.shape());
        for (std::size_t i = 0; i < node.value.size(); ++i) {
            if (node.inputs[0]->value[i] <= node.inputs[1]->value[i])
                ga[i] = node.grad[i];
            else
                gb[i] = node.grad[i];
        }
        node.inputs[0]->accumulate(ga);
        node.inputs[1]->accumulate(gb);
    });
}

Var mul_scalar_var(const Var& a, const Var& s) {
    if (s->value.size() != 1) throw std::invalid_argument("mul_scalar_var: s must be scalar");
    Tensor C = a->value;
    const double sv = s->value[0];
    for (auto& v : C.data()) v *= sv;
    return make_node(std::move(C), {a, s}, [](Node& node) {
        const double sv = node.inputs[1]->value[0];
        Tensor ga = Tensor::zeros(node.inputs[0]->value.shape());
        double gs = 0.0;
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] = node.grad[i] * sv;
            gs += node.grad[i] * node.inputs[0]->value[i];
        }
        node.inputs[0]->accumulate(ga);
        node.inputs[1]->accumulate(Tensor::scalar(gs));
    });
}

Var clamp_op(const Var& a, double lo, double hi) {
    Tensor C = a->value;
    for (auto& v : C.data()) v = std::clamp(v, lo, hi);
    return unary(a, std::move(C), [lo, hi](double x, double, double g) {
        return (x >= lo && x <= hi) ? g : 0.0;
    });
}

void backward(const Var& loss) {
    if (loss->value.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    // Iterative post-order DFS; recursion would overflow on long scan chains.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->inputs.size()) {
            Node* child = node->inputs[idx++].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order) n->grad = Tensor();
    loss->grad = Tensor::full(loss->value.shape(), 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->requires_grad && n->grad.size() != 0) n->backprop(*n);
    }
}

Var Tape::param(Tensor& t) {
    auto it = leaves_.find(&t);
    if (it != leaves_.end()) return it->second;
    Var v = make_leaf(t);
    leaves_.emplace(&t, v);
    return v;
}

const Tensor* Tape::grad_of(const Tensor& t) const {
    auto it = leaves_.find(&t);
    if (it == leaves_.end() || it->second->grad.size() == 0) return nullptr;
    return &it->second->grad;
}

double grad_check(const std::function<Var(Tape&)>& build, const std::vector<Tensor*>& params,
                  double eps) {
    Tape tape;
    Var loss = build(tape);
    backward(loss);
    double max_err = 0.0;
    for (Tensor* p : params) {
        const Tensor* g = tape.grad_of(*p);
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double orig = (*p)[i];
            (*p)[i] = orig + eps;
            Tape t1;
            const double fp = build(t1)->value[0];
            (*p)[i] = orig - eps;
            Tape t2;
            const double fm = build(t2)->value[0];
            (*p)[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double analytic = g ? (*g)[i] : 0.0;
            // Hybrid tolerance: gradients below 1e-3 are held to an absolute
            // bound instead, keeping rounding noise on near-zero entries from
            // masquerading as relative error.
            const double err = std::abs(analytic - numeric) /
                               std::max(1e-3, std::abs(analytic) + std::abs(numeric));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void AdamW::step(double lr, const std::vector<Entry>& entries) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& e : entries) {
        auto it = moments_.find(e.name);
        if (it == moments_.end()) {
            it = moments_
                     .emplace(e.name, std::make_pair(Tensor::zeros(e.param->shape()),
                                                     Tensor::zeros(e.param->shape())))
                     .first;
        }
        Tensor& m = it->second.first;
        Tensor& v = it->second.second;
        for (std::size_t i = 0; i < e.param->size(); ++i) {
            const double g = e.grad ? (*e.grad)[i] : 0.0;
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            (*e.param)[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) +
                                   weight_decay_ * (*e.param)[i]);
        }
    }
}

void AdamW::visit_state(const std::function<void(const std::string&, Tensor&)>& fn) {
    Tensor step_t = Tensor::scalar(static_cast<double>(t_));
    fn("step", step_t);
    t_ = static_cast<std::int64_t>(step_t[0]);
    for (auto& [name, mv] : moments_) {
        fn(name + ".m", mv.first);
        fn(name + ".v", mv.second);
    }
}

void AdamW::restore_state(const std::map<std::string, Tensor>& named) {
    auto it = named.find("step");
    if (it != named.end()) t_ = static_cast<std::int64_t>(it->second[0]);
    for (const auto& [name, t] : named) {
        if (name.size() > 2 && name.substr(name.size() - 2) == ".m") {
            const std::string base = name.substr(0, name.size() - 2);
            auto vt = named.find(base + ".v");
            if (vt != named.end()) moments_[base] = {t, vt->second};
        }
    }
}

}  // namespace cmarl::diff
