#include "procver/autodiff.hpp"

#include <cmath>
#include <numbers>

namespace procver {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);

double gelu_value(double x) {
    return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
}

double gelu_derivative(double x) {
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// softmax of one contiguous row, max-shifted
void softmax_row(const double* in, double* out, std::size_t n) {
    double m = in[0];
    for (std::size_t i = 1; i < n; ++i) {
        m = std::max(m, in[i]);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(in[i] - m);
        sum += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
        out[i] /= sum;
    }
}

} // namespace

void Tape::check_id(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
        throw ShapeError("tape: invalid node id");
    }
}

bool Tape::any_needs_grad(const std::vector<NodeId>& ids) const {
    for (NodeId id : ids) {
        if (nodes_[static_cast<std::size_t>(id)].needs_grad) {
            return true;
        }
    }
    return false;
}

Tape::NodeId Tape::push(Tensor value, std::vector<NodeId> parents,
                        std::function<void(Tape&, NodeId)> bw, const char* op_name) {
    for (NodeId p : parents) {
        check_id(p);
    }
    if (!value.all_finite()) {
        throw NumericError(std::string("non-finite result in op '") + op_name + "'");
    }
    Node n;
    n.value = std::move(value);
    n.needs_grad = !parents.empty() && any_needs_grad(parents);
    n.parents = std::move(parents);
    if (n.needs_grad) {
        n.backward = std::move(bw);
    }
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::constant(Tensor v) {
    return push(std::move(v), {}, nullptr, "constant");
}

Tape::NodeId Tape::input(Tensor v) {
    NodeId id = push(std::move(v), {}, nullptr, "input");
    nodes_.back().needs_grad = true;
    return id;
}

Tape::NodeId Tape::param(Parameter& p) {
    if (!p.value.same_shape(p.grad)) {
        throw ShapeError("parameter '" + p.name + "': gradient shape differs from value shape");
    }
    NodeId id = push(p.value, {}, nullptr, "param");
    nodes_.back().needs_grad = true;
    nodes_.back().bound_param = &p;
    return id;
}

Tensor& Tape::grad_slot(NodeId id) {
    Tensor& g = grads_[static_cast<std::size_t>(id)];
    if (g.data.empty()) {
        g = Tensor::zeros(nodes_[static_cast<std::size_t>(id)].value.shape);
    }
    return g;
}

void Tape::accumulate(NodeId id, const Tensor& delta) {
    if (!nodes_[static_cast<std::size_t>(id)].needs_grad) {
        return;
    }
    Tensor& g = grad_slot(id);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
        g.data[i] += delta.data[i];
    }
}

Tensor Tape::grad(NodeId id) const {
    check_id(id);
    if (!grads_.empty() && !grads_[static_cast<std::size_t>(id)].data.empty()) {
        return grads_[static_cast<std::size_t>(id)];
    }
    return Tensor::zeros(nodes_[static_cast<std::size_t>(id)].value.shape);
}

void Tape::backward(NodeId root) {
    check_id(root);
    const Node& r = nodes_[static_cast<std::size_t>(root)];
    if (!r.value.is_scalar()) {
        throw ShapeError("backward: root must be scalar, got " + r.value.shape_str());
    }
    grads_.assign(nodes_.size(), Tensor());
    grad_slot(root).data[0] = 1.0;

    for (NodeId id = root; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad) {
            continue;
        }
        const Tensor& g = grads_[static_cast<std::size_t>(id)];
        if (g.data.empty()) {
            continue; // not on a path to root
        }
        if (!g.all_finite()) {
            throw NumericError("non-finite gradient reached node " + std::to_string(id));
        }
        if (n.backward) {
            n.backward(*this, id);
        }
        if (n.bound_param) {
            Tensor& pg = n.bound_param->grad;
            for (std::size_t i = 0; i < pg.data.size(); ++i) {
                pg.data[i] += g.data[i];
            }
        }
    }
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
    check_id(a);
    check_id(b);
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
        throw ShapeError("matmul: " + A.shape_str() + " x " + B.shape_str());
    }
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor C({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A(i, p);
            if (av == 0.0) {
                continue;
            }
            const double* brow = &B.data[p * n];
            double* crow = &C.data[i * n];
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
    auto bw = [a, b](Tape& t, NodeId self) {
        const Tensor& A2 = t.value(a);
        const Tensor& B2 = t.value(b);
        const Tensor& dC = t.grads_[static_cast<std::size_t>(self)];
        const std::size_t m2 = A2.rows(), k2 = A2.cols(), n2 = B2.cols();
        if (t.nodes_[static_cast<std::size_t>(a)].needs_grad) {
            Tensor dA({m2, k2});
            for (std::size_t i = 0; i < m2; ++i) {
                for (std::size_t j = 0; j < n2; ++j) {
                    const double dv = dC(i, j);
                    if (dv == 0.0) {
                        continue;
                    }
                    for (std::size_t p = 0; p < k2; ++p) {
                        dA(i, p) += dv * B2(p, j);
                    }
                }
            }
            t.accumulate(a, dA);
        }
        if (t.nodes_[static_cast<std::size_t>(b)].needs_grad) {
            Tensor dB({k2, n2});
            for (std::size_t i = 0; i < m2; ++i) {
                for (std::size_t p = 0; p < k2; ++p) {
                    const double av = A2(i, p);
                    if (av == 0.0) {
                        continue;
                    }
                    for (std::size_t j = 0; j < n2; ++j) {
                        dB(p, j) += av * dC(i, j);
                    }
                }
            }
            t.accumulate(b, dB);
        }
    };
    return push(std::move(C), {a, b}, bw, "matmul");
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
    check_id(a);
    check_id(b);
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) {
        throw ShapeError("add: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    }
    Tensor C = A;
    for (std::size_t i = 0; i < C.data.size(); ++i) {
        C.data[i] += B.data[i];
    }
    auto bw = [a, b](Tape& t, NodeId self) {
        const Tensor& dC = t.grads_[static_cast<std::size_t>(self)];
        t.accumulate(a, dC);
        t.accumulate(b, dC);
    };
    return push(std::move(C), {a, b}, bw, "add");
}

Tape::NodeId Tape::add_row_broadcast(NodeId m, NodeId row) {
    check_id(m);
    check_id(row);
    const Tensor& M = value(m);
    const Tensor& R = value(row);
    if (M.rank() != 2 || R.rank() != 1 || R.shape[0] != M.cols()) {
        throw ShapeError("add_row_broadcast: " + M.shape_str() + " + " + R.shape_str());
    }
    Tensor C = M;
    for (std::size_t i = 0; i < M.rows(); ++i) {
        for (std::size_t j = 0; j < M.cols(); ++j) {
            C(i, j) += R[j];
        }
    }
    auto bw = [m, row](Tape& t, NodeId self) {
        const Tensor& dC = t.grads_[static_cast<std::size_t>(self)];
        t.accumulate(m, dC);
        if (t.nodes_[static_cast<std::size_t>(row)].needs_grad) {
            Tensor dR({dC.cols()});
            for (std::size_t i = 0; i < dC.rows(); ++i) {
                for (std::size_t j = 0; j < dC.cols(); ++j) {
                    dR[j] += dC(i, j);
                }
            }
            t.accumulate(row, dR);
        }
    };
    return push(std::move(C), {m, row}, bw, "add_row_broadcast");
}

Tape::NodeId Tape::affine(NodeId a, double mul, double shift) {
    check_id(a);
    Tensor C = value(a);
    for (double& v : C.data) {
        v = mul * v + shift;
    }
    auto bw = [a, mul](Tape& t, NodeId self) {
        const Tensor& dC = t.grads_[static_cast<std::size_t>(self)];
        Tensor dA = dC;
        for (double& v : dA.data) {
            v *= mul;
        }
        t.accumulate(a, dA);
    };
    return push(std::move(C), {a}, bw, "affine");
}

Tape::NodeId Tape::transpose(NodeId a) {
    check_id(a);
    const Tensor& A = value(a);
    if (A.rank() != 2) {
        throw ShapeError("transpose: need rank-2, got " + A.shape_str());
    }
    Tensor C({A.cols(), A.rows()});
    for (std::size_t i = 0; i < A.rows(); ++i) {
        for (std::size_t j = 0; j < A.cols(); ++j) {
            C(j, i) = A(i, j);
        }
    }
    auto bw = [a](Tape& t, NodeId self) {
        const Tensor& dC = t.grads_[static_cast<std::size_t>(self)];
        Tensor dA({dC.cols(), dC.rows()});
        for (std::size_t i = 0; i < dC.rows(); ++i) {
            for (std::size_t j = 0; j < dC.cols(); ++j) {
                dA(j, i) = dC(i, j);
            }
        }
        t.accumulate(a, dA);
    };
    return push(std::move(C), {a}, bw, "transpose");
}

Tape::NodeId Tape::reshape(NodeId a, std::vector<std::size_t> shape) {
    check_id(a);
    const Tensor& A = value(a);
    if (shape_product(shape) != A.size()) {
        throw ShapeError("reshape: element count mismatch");
    }
    Tensor C;
    C.shape = std::move(shape);
    C.data = A.data;
    auto bw = [a](Tape& t, NodeId self) {
        const Tensor& dC = t.grads_[static_cast<std::size_t>(self)];
        Tensor dA;
        dA.shape = t.value(a).shape;
        dA.data = dC.data;
        t.accumulate(a, dA);
    };
    return push(std::move(C), {a}, bw, "reshape");
}

Tape::NodeId Tape::slice_cols(NodeId a, std::size_t begin, std::size_t count) {
    check_id(a);
    const Tensor& A = value(a);
    if (A.rank() != 2 || begin + count > A.cols() || count == 0) {
        throw ShapeError("slice_cols: bad range on " + A.shape_str());
    }
    Tensor C({A.rows(), count});
    for (std::size_t i = 0; i < A.rows(); ++i) {
        for (std::size_t j = 0; j < count; ++j) {
            C(i, j) = A(i, begin + j);
        }
    }
    auto bw = [a, begin, count](Tape& t, NodeId self) {
        const Tensor& dC = t.grads_[static_cast<std::size_t>(self)];
        const Tensor& A2 = t.value(a);
        Tensor dA({A2.rows(), A2.cols()});
        for (std::size_t i = 0; i < A2.rows(); ++i) {
            for (std::size_t j = 0; j < count; ++j) {
                dA(i, begin + j) = dC(i, j);
            }
        }
        t.accumulate(a, dA);
    };
    return push(std::move(C), {a}, bw, "slice_cols");
}

Tape::NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_cols: no parts");
    }
    std::size_t total_cols = 0;
    const std::size_t rows = value(parts[0]).rows();
    for (NodeId p : parts) {
        check_id(p);
        const Tensor& P = value(p);
        if (P.rank() != 2 || P.rows() != rows) {
            throw ShapeError("concat_cols: row mismatch");
        }
        total_cols += P.cols();
    }
    Tensor C({rows, total_cols});
    std::size_t off = 0;
    for (NodeId p : parts) {
        const Tensor& P = value(p);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < P.cols(); ++j) {
                C(i, off + j) = P(i, j);
            }
        }
        off += P.cols();
    }
    auto bw = [parts](Tape& t, NodeId self) {
        const Tensor& dC = t.grads_[static_cast<std::size_t>(self)];
        std::size_t off2 = 0;
        for (NodeId p : parts) {
            const Tensor& P = t.value(p);
            if (t.nodes_[static_cast<std::size_t>(p)].needs_grad) {
                Tensor dP({P.rows(), P.cols()});
                for (std::size_t i = 0; i < P.rows(); ++i) {
                    for (std::size_t j = 0; j < P.cols(); ++j) {
                        dP(i, j) = dC(i, off2 + j);
                    }
                }
                t.accumulate(p, dP);
            }
            off2 += P.cols();
        }
    };
    return push(std::move(C), parts, bw, "concat_cols");
}

Tape::NodeId Tape::softmax_rows(NodeId a) {
    check_id(a);
    const Tensor& A = value(a);
    if (A.rank() != 1 && A.rank() != 2) {
        throw ShapeError("softmax_rows: need rank-1/2, got " + A.shape_str());
    }
    const std::size_t rows = A.rank() == 2 ? A.shape[0] : 1;
    const std::size_t cols = A.rank() == 2 ? A.shape[1] : A.shape[0];
    Tensor C = A;
    for (std::size_t i = 0; i < rows; ++i) {
        softmax_row(&A.data[i * cols], &C.data[i * cols], cols);
    }
    auto bw = [a, rows, cols](Tape& t, NodeId self) {
        const Tensor& Y = t.value(self);
        const Tensor& dY = t.grads_[static_cast<std::size_t>(self)];
        Tensor dA = dY;
        for (std::size_t i = 0; i < rows; ++i) {
            const double* y = &Y.data[i * cols];
            const double* dy = &dY.data[i * cols];
            double inner = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
                inner += y[j] * dy[j];
            }
            double* dst = &dA.data[i * cols];
            for (std::size_t j = 0; j < cols; ++j) {
                dst[j] = y[j] * (dy[j] - inner);
            }
        }
        t.accumulate(a, dA);
    };
    return push(std::move(C), {a}, bw, "softmax_rows");
}

Tape::NodeId Tape::layer_norm_rows(NodeId x, NodeId gamma, NodeId beta, double eps) {
    check_id(x);
    check_id(gamma);
    check_id(beta);
    const Tensor& X = value(x);
    const Tensor& G = value(gamma);
    const Tensor& B = value(beta);
    if (X.rank() != 2 || G.rank() != 1 || B.rank() != 1 ||
        G.shape[0] != X.cols() || B.shape[0] != X.cols()) {
        throw ShapeError("layer_norm_rows: " + X.shape_str() + ", gamma " + G.shape_str());
    }
    const std::size_t rows = X.rows(), cols = X.cols();
    Tensor C({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            mean += X(i, j);
        }
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double d = X(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < cols; ++j) {
            C(i, j) = G[j] * ((X(i, j) - mean) * inv) + B[j];
        }
    }
    auto bw = [x, gamma, beta, eps](Tape& t, NodeId self) {
        const Tensor& X2 = t.value(x);
        const Tensor& G2 = t.value(gamma);
        const Tensor& dY = t.grads_[static_cast<std::size_t>(self)];
        const std::size_t rows2 = X2.rows(), cols2 = X2.cols();
        const double n = static_cast<double>(cols2);
        Tensor dX({rows2, cols2});
        Tensor dG({cols2});
        Tensor dB({cols2});
        std::vector<double> xhat(cols2);
        for (std::size_t i = 0; i < rows2; ++i) {
            double mean = 0.0;
            for (std::size_t j = 0; j < cols2; ++j) {
                mean += X2(i, j);
            }
            mean /= n;
            double var = 0.0;
            for (std::size_t j = 0; j < cols2; ++j) {
                const double d = X2(i, j) - mean;
                var += d * d;
            }
            var /= n;
            const double inv = 1.0 / std::sqrt(var + eps);
            for (std::size_t j = 0; j < cols2; ++j) {
                xhat[j] = (X2(i, j) - mean) * inv;
            }
            // dxhat = dy * gamma; dx = inv*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < cols2; ++j) {
                const double dxh = dY(i, j) * G2[j];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * xhat[j];
            }
            mean_dxhat /= n;
            mean_dxhat_xhat /= n;
            for (std::size_t j = 0; j < cols2; ++j) {
                const double dxh = dY(i, j) * G2[j];
                dX(i, j) = inv * (dxh - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                dG[j] += dY(i, j) * xhat[j];
                dB[j] += dY(i, j);
            }
        }
        t.accumulate(x, dX);
        t.accumulate(gamma, dG);
        t.accumulate(beta, dB);
    };
    return push(std::move(C), {x, gamma, beta}, bw, "layer_norm_rows");
}

Tape::NodeId Tape::gelu(NodeId a) {
    check_id(a);
    Tensor C = value(a);
    for (double& v : C.data) {
        v = gelu_value(v);
    }
    auto bw = [a](Tape& t, NodeId self) {
        const Tensor& A2 = t.value(a);
        const Tensor& dC = t.grads_[static_cast<std::size_t>(self)];
        Tensor dA = dC;
        for (std::size_t i = 0; i < dA.data.size(); ++i) {
            dA.data[i] *= gelu_derivative(A2.data[i]);
        }
        t.accumulate(a, dA);
    };
    return push(std::move(C), {a}, bw, "gelu");
}

Tape::NodeId Tape::mean_over_axis(NodeId a, int axis) {
    check_id(a);
    const Tensor& A = value(a);
    if (A.rank() != 2 || (axis != 0 && axis != 1)) {
        throw ShapeError("mean_over_axis: need rank-2 and axis 0/1");
    }
    const std::size_t rows = A.rows(), cols = A.cols();
    Tensor C({axis == 0 ? cols : rows});
    if (axis == 0) {
        for (std::size_t j = 0; j < cols; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < rows; ++i) {
                s += A(i, j);
            }
            C[j] = s / static_cast<double>(rows);
        }
    } else {
        for (std::size_t i = 0; i < rows; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
                s += A(i, j);
            }
            C[i] = s / static_cast<double>(cols);
        }
    }
    auto bw = [a, axis, rows, cols](Tape& t, NodeId self) {
        const Tensor& dC = t.grads_[static_cast<std::size_t>(self)];
        Tensor dA({rows, cols});
        if (axis == 0) {
            for (std::size_t i = 0; i < rows; ++i) {
                for (std::size_t j = 0; j < cols; ++j) {
                    dA(i, j) = dC[j] / static_cast<double>(rows);
                }
            }
        } else {
            for (std::size_t i = 0; i < rows; ++i) {
                for (std::size_t j = 0; j < cols; ++j) {
                    dA(i, j) = dC[i] / static_cast<double>(cols);
                }
            }
        }
        t.accumulate(a, dA);
    };
    return push(std::move(C), {a}, bw, "mean_over_axis");
}

Tape::NodeId Tape::mean_all(NodeId a) {
    check_id(a);
    const Tensor& A = value(a);
    double s = 0.0;
    for (double v : A.data) {
        s += v;
    }
    Tensor C = Tensor::scalar(s / static_cast<double>(A.size()));
    auto bw = [a](Tape& t, NodeId self) {
        const Tensor& A2 = t.value(a);
        const double g = t.grads_[static_cast<std::size_t>(self)].data[0] / static_cast<double>(A2.size());
        Tensor dA = Tensor::zeros(A2.shape);
        for (double& v : dA.data) {
            v = g;
        }
        t.accumulate(a, dA);
    };
    return push(std::move(C), {a}, bw, "mean_all");
}

Tape::NodeId Tape::l2_normalize_rows(NodeId a) {
    check_id(a);
    const Tensor& A = value(a);
    if (A.rank() != 1 && A.rank() != 2) {
        throw ShapeError("l2_normalize_rows: need rank-1/2");
    }
    const std::size_t rows = A.rank() == 2 ? A.shape[0] : 1;
    const std::size_t cols = A.rank() == 2 ? A.shape[1] : A.shape[0];
    Tensor C = A;
    for (std::size_t i = 0; i < rows; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            sq += A.data[i * cols + j] * A.data[i * cols + j];
        }
        const double norm = std::sqrt(sq);
        if (norm < 1e-12) {
            throw NumericError("l2_normalize: degenerate input (zero-norm vector at row " +
                               std::to_string(i) + ")");
        }
        for (std::size_t j = 0; j < cols; ++j) {
            C.data[i * cols + j] /= norm;
        }
    }
    auto bw = [a, rows, cols](Tape& t, NodeId self) {
        const Tensor& A2 = t.value(a);
        const Tensor& dY = t.grads_[static_cast<std::size_t>(self)];
        Tensor dA = dY;
        for (std::size_t i = 0; i < rows; ++i) {
            const double* x = &A2.data[i * cols];
            const double* dy = &dY.data[i * cols];
            double sq = 0.0, xdy = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
                sq += x[j] * x[j];
                xdy += x[j] * dy[j];
            }
            const double norm = std::sqrt(sq);
            const double inv = 1.0 / norm;
            const double inv3 = inv * inv * inv;
            double* dst = &dA.data[i * cols];
            for (std::size_t j = 0; j < cols; ++j) {
                dst[j] = dy[j] * inv - x[j] * xdy * inv3;
            }
        }
        t.accumulate(a, dA);
    };
    return push(std::move(C), {a}, bw, "l2_normalize_rows");
}

Tape::NodeId Tape::cross_entropy_from_logits(NodeId logits, std::size_t target) {
    check_id(logits);
    const Tensor& L = value(logits);
    std::size_t classes = 0;
    if (L.rank() == 1) {
        classes = L.shape[0];
    } else if (L.rank() == 2 && L.rows() == 1) {
        classes = L.cols();
    } else {
        throw ShapeError("cross_entropy_from_logits: need one logit row, got " + L.shape_str());
    }
    if (target >= classes) {
        throw DataError("cross_entropy_from_logits: target " + std::to_string(target) +
                        " out of range [0, " + std::to_string(classes) + ")");
    }
    double m = L.data[0];
    for (std::size_t i = 1; i < classes; ++i) {
        m = std::max(m, L.data[i]);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < classes; ++i) {
        sum += std::exp(L.data[i] - m);
    }
    const double log_sum_exp = m + std::log(sum);
    Tensor C = Tensor::scalar(log_sum_exp - L.data[target]);
    auto bw = [logits, target, classes](Tape& t, NodeId self) {
        const Tensor& L2 = t.value(logits);
        const double g = t.grads_[static_cast<std::size_t>(self)].data[0];
        Tensor dL = Tensor::zeros(L2.shape);
        softmax_row(L2.data.data(), dL.data.data(), classes);
        dL.data[target] -= 1.0;
        for (double& v : dL.data) {
            v *= g;
        }
        t.accumulate(logits, dL);
    };
    return push(std::move(C), {logits}, bw, "cross_entropy_from_logits");
}

Tape::NodeId Tape::abs_sum(NodeId a) {
    check_id(a);
    const Tensor& A = value(a);
    double s = 0.0;
    for (double v : A.data) {
        s += std::abs(v);
    }
    Tensor C = Tensor::scalar(s);
    auto bw = [a](Tape& t, NodeId self) {
        const Tensor& A2 = t.value(a);
        const double g = t.grads_[static_cast<std::size_t>(self)].data[0];
        Tensor dA = Tensor::zeros(A2.shape);
        for (std::size_t i = 0; i < A2.data.size(); ++i) {
            const double v = A2.data[i];
            dA.data[i] = g * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
        }
        t.accumulate(a, dA);
    };
    return push(std::move(C), {a}, bw, "abs_sum");
}

Tape::NodeId Tape::diagonal(NodeId a) {
    check_id(a);
    const Tensor& A = value(a);
    if (A.rank() != 2 || A.rows() != A.cols()) {
        throw ShapeError("diagonal: need square matrix, got " + A.shape_str());
    }
    const std::size_t n = A.rows();
    Tensor C({n});
    for (std::size_t i = 0; i < n; ++i) {
        C[i] = A(i, i);
    }
    auto bw = [a, n](Tape& t, NodeId self) {
        const Tensor& dC = t.grads_[static_cast<std::size_t>(self)];
        Tensor dA({n, n});
        for (std::size_t i = 0; i < n; ++i) {
            dA(i, i) = dC[i];
        }
        t.accumulate(a, dA);
    };
    return push(std::move(C), {a}, bw, "diagonal");
}

Tape::NodeId Tape::multi_head_attention(NodeId x,
                                        NodeId wq, NodeId bq,
                                        NodeId wk, NodeId bk,
                                        NodeId wv, NodeId bv,
                                        NodeId wo, NodeId bo,
                                        std::size_t heads) {
    const Tensor& X = value(x);
    if (X.rank() != 2) {
        throw ShapeError("multi_head_attention: input must be rank-2");
    }
    const std::size_t d = X.cols();
    if (heads == 0 || d % heads != 0) {
        throw ShapeError("multi_head_attention: width not divisible by heads");
    }
    const std::size_t head_dim = d / heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    NodeId q = add_row_broadcast(matmul(x, wq), bq);
    NodeId k = add_row_broadcast(matmul(x, wk), bk);
    NodeId v = add_row_broadcast(matmul(x, wv), bv);

    std::vector<NodeId> head_outputs;
    head_outputs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        NodeId qh = slice_cols(q, h * head_dim, head_dim);
        NodeId kh = slice_cols(k, h * head_dim, head_dim);
        NodeId vh = slice_cols(v, h * head_dim, head_dim);
        NodeId scores = scale(matmul(qh, transpose(kh)), att_scale);
        NodeId weights = softmax_rows(scores);
        head_outputs.push_back(matmul(weights, vh));
    }
    NodeId merged = heads == 1 ? head_outputs[0] : concat_cols(head_outputs);
    return add_row_broadcast(matmul(merged, wo), bo);
}

} // namespace procver
