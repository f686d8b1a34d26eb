#include "figclip/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace figclip {

const std::vector<double> Tape::empty_grad_{};

namespace {
constexpr double kLayerNormEps = 1e-5;

void check_2d(const Tensor& t, const char* op) {
    if (t.ndim() != 2) throw ShapeError(std::string(op) + ": expected rank 2, got " + Tensor::shape_str(t.shape));
}
}  // namespace

NodeId Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&, const Node&)> back) {
    value.round_to(precision_);
    Node n;
    n.value = std::move(value);
    n.requires_grad = grad_enabled_ && requires_grad;
    if (n.requires_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

std::vector<double>& Tape::grad_buf(NodeId id) {
    Node& n = nodes_[id];
    if (n.grad.size() != n.value.data.size()) n.grad.assign(n.value.data.size(), 0.0);
    return n.grad;
}

const std::vector<double>& Tape::grad(NodeId id) const {
    const Node& n = nodes_[id];
    return n.grad.empty() ? empty_grad_ : n.grad;
}

void Tape::backward(NodeId loss) {
    const Node& top = nodes_[loss];
    if (top.value.numel() != 1)
        throw ShapeError("backward: loss must be a single element, got " + Tensor::shape_str(top.value.shape));
    if (!top.requires_grad) return;
    grad_buf(loss)[0] = 1.0;
    for (size_t i = loss + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad.empty() || !n.back) continue;
        n.back(*this, n);
    }
}

NodeId Tape::constant(Tensor t) { return push(std::move(t), false, nullptr); }

NodeId Tape::leaf(const Tensor& t, bool requires_grad) {
    return push(t, requires_grad, nullptr);
}

NodeId Tape::add(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    check_same_shape(ta, tb, "add");
    Tensor out = ta;
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] += tb.data[i];
    bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
    return push(std::move(out), rg, [a, b](Tape& t, const Node& self) {
        for (NodeId p : {a, b}) {
            if (!t.nodes_[p].requires_grad) continue;
            auto& pg = t.grad_buf(p);
            for (size_t i = 0; i < self.grad.size(); ++i) pg[i] += self.grad[i];
        }
    });
}

NodeId Tape::sub(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    check_same_shape(ta, tb, "sub");
    Tensor out = ta;
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] -= tb.data[i];
    bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
    return push(std::move(out), rg, [a, b](Tape& t, const Node& self) {
        if (t.nodes_[a].requires_grad) {
            auto& pg = t.grad_buf(a);
            for (size_t i = 0; i < self.grad.size(); ++i) pg[i] += self.grad[i];
        }
        if (t.nodes_[b].requires_grad) {
            auto& pg = t.grad_buf(b);
            for (size_t i = 0; i < self.grad.size(); ++i) pg[i] -= self.grad[i];
        }
    });
}

NodeId Tape::add_rowvec(NodeId x, NodeId v) {
    const Tensor& tx = nodes_[x].value;
    const Tensor& tv = nodes_[v].value;
    check_2d(tx, "add_rowvec");
    if (tv.ndim() != 1 || tv.shape[0] != tx.shape[1])
        throw ShapeError("add_rowvec: " + Tensor::shape_str(tx.shape) + " vs " + Tensor::shape_str(tv.shape));
    Tensor out = tx;
    const size_t rows = tx.shape[0], cols = tx.shape[1];
    for (size_t r = 0; r < rows; ++r)
        for (size_t c = 0; c < cols; ++c) out.data[r * cols + c] += tv.data[c];
    bool rg = nodes_[x].requires_grad || nodes_[v].requires_grad;
    return push(std::move(out), rg, [x, v, rows, cols](Tape& t, const Node& self) {
        if (t.nodes_[x].requires_grad) {
            auto& pg = t.grad_buf(x);
            for (size_t i = 0; i < self.grad.size(); ++i) pg[i] += self.grad[i];
        }
        if (t.nodes_[v].requires_grad) {
            auto& pg = t.grad_buf(v);
            for (size_t r = 0; r < rows; ++r)
                for (size_t c = 0; c < cols; ++c) pg[c] += self.grad[r * cols + c];
        }
    });
}

NodeId Tape::scale(NodeId a, double c) {
    Tensor out = nodes_[a].value;
    for (double& v : out.data) v *= c;
    return push(std::move(out), nodes_[a].requires_grad, [a, c](Tape& t, const Node& self) {
        auto& pg = t.grad_buf(a);
        for (size_t i = 0; i < self.grad.size(); ++i) pg[i] += c * self.grad[i];
    });
}

NodeId Tape::mul_scalar(NodeId a, NodeId s) {
    const Tensor& ts = nodes_[s].value;
    if (ts.numel() != 1) throw ShapeError("mul_scalar: scalar operand has shape " + Tensor::shape_str(ts.shape));
    const double sv = ts.data[0];
    Tensor out = nodes_[a].value;
    for (double& v : out.data) v *= sv;
    bool rg = nodes_[a].requires_grad || nodes_[s].requires_grad;
    return push(std::move(out), rg, [a, s, sv](Tape& t, const Node& self) {
        if (t.nodes_[a].requires_grad) {
            auto& pg = t.grad_buf(a);
            for (size_t i = 0; i < self.grad.size(); ++i) pg[i] += sv * self.grad[i];
        }
        if (t.nodes_[s].requires_grad) {
            const auto& av = t.nodes_[a].value.data;
            double acc = 0.0;
            for (size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * av[i];
            t.grad_buf(s)[0] += acc;
        }
    });
}

NodeId Tape::gelu(NodeId x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    Tensor out = nodes_[x].value;
    for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
    return push(std::move(out), nodes_[x].requires_grad, [x](Tape& t, const Node& self) {
        constexpr double is2 = 0.7071067811865475244;
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        const auto& xv = t.nodes_[x].value.data;
        auto& pg = t.grad_buf(x);
        for (size_t i = 0; i < self.grad.size(); ++i) {
            double xi = xv[i];
            double d = 0.5 * (1.0 + std::erf(xi * is2)) + xi * std::exp(-0.5 * xi * xi) * inv_sqrt_2pi;
            pg[i] += self.grad[i] * d;
        }
    });
}

NodeId Tape::log(NodeId x) {
    Tensor out = nodes_[x].value;
    for (double& v : out.data) v = std::log(v);
    return push(std::move(out), nodes_[x].requires_grad, [x](Tape& t, const Node& self) {
        const auto& xv = t.nodes_[x].value.data;
        auto& pg = t.grad_buf(x);
        for (size_t i = 0; i < self.grad.size(); ++i) pg[i] += self.grad[i] / xv[i];
    });
}

NodeId Tape::exp(NodeId x) {
    Tensor out = nodes_[x].value;
    for (double& v : out.data) v = std::exp(v);
    return push(std::move(out), nodes_[x].requires_grad, [x](Tape& t, const Node& self) {
        auto& pg = t.grad_buf(x);
        for (size_t i = 0; i < self.grad.size(); ++i) pg[i] += self.grad[i] * self.value.data[i];
    });
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    check_2d(ta, "matmul");
    check_2d(tb, "matmul");
    if (ta.shape[1] != tb.shape[0])
        throw ShapeError("matmul: " + Tensor::shape_str(ta.shape) + " x " + Tensor::shape_str(tb.shape));
    const size_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
    Tensor out({m, n});
    const double* A = ta.data.data();
    const double* B = tb.data.data();
    double* C = out.data.data();
    for (size_t i = 0; i < m; ++i) {
        double* crow = C + i * n;
        for (size_t kk = 0; kk < k; ++kk) {
            const double aik = A[i * k + kk];
            if (aik == 0.0) continue;
            const double* brow = B + kk * n;
            for (size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
    bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
    return push(std::move(out), rg, [a, b, m, k, n](Tape& t, const Node& self) {
        const double* G = self.grad.data();
        if (t.nodes_[a].requires_grad) {
            const double* B = t.nodes_[b].value.data.data();
            double* dA = t.grad_buf(a).data();
            for (size_t i = 0; i < m; ++i) {
                const double* grow = G + i * n;
                for (size_t kk = 0; kk < k; ++kk) {
                    const double* brow = B + kk * n;
                    double acc = 0.0;
                    for (size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    dA[i * k + kk] += acc;
                }
            }
        }
        if (t.nodes_[b].requires_grad) {
            const double* A = t.nodes_[a].value.data.data();
            double* dB = t.grad_buf(b).data();
            for (size_t i = 0; i < m; ++i) {
                const double* grow = G + i * n;
                for (size_t kk = 0; kk < k; ++kk) {
                    const double aik = A[i * k + kk];
                    if (aik == 0.0) continue;
                    double* dbrow = dB + kk * n;
                    for (size_t j = 0; j < n; ++j) dbrow[j] += aik * grow[j];
                }
            }
        }
    });
}

NodeId Tape::transpose(NodeId a) {
    const Tensor& ta = nodes_[a].value;
    check_2d(ta, "transpose");
    const size_t m = ta.shape[0], n = ta.shape[1];
    Tensor out({n, m});
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out.data[j * m + i] = ta.data[i * n + j];
    return push(std::move(out), nodes_[a].requires_grad, [a, m, n](Tape& t, const Node& self) {
        auto& pg = t.grad_buf(a);
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) pg[i * n + j] += self.grad[j * m + i];
    });
}

NodeId Tape::concat(const std::vector<NodeId>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no parts");
    const Tensor& first = nodes_[parts[0]].value;
    bool rg = false;
    for (NodeId p : parts) rg = rg || nodes_[p].requires_grad;

    if (first.ndim() == 1 && axis == 0) {
        size_t total = 0;
        for (NodeId p : parts) {
            if (nodes_[p].value.ndim() != 1) throw ShapeError("concat: mixed ranks");
            total += nodes_[p].value.shape[0];
        }
        Tensor out({total});
        size_t off = 0;
        for (NodeId p : parts) {
            const auto& d = nodes_[p].value.data;
            std::copy(d.begin(), d.end(), out.data.begin() + off);
            off += d.size();
        }
        auto ps = parts;
        return push(std::move(out), rg, [ps](Tape& t, const Node& self) {
            size_t off = 0;
            for (NodeId p : ps) {
                size_t n = t.nodes_[p].value.numel();
                if (t.nodes_[p].requires_grad) {
                    auto& pg = t.grad_buf(p);
                    for (size_t i = 0; i < n; ++i) pg[i] += self.grad[off + i];
                }
                off += n;
            }
        });
    }

    check_2d(first, "concat");
    if (axis == 0) {
        const size_t cols = first.shape[1];
        size_t rows = 0;
        for (NodeId p : parts) {
            const Tensor& tp = nodes_[p].value;
            check_2d(tp, "concat");
            if (tp.shape[1] != cols)
                throw ShapeError("concat axis 0: " + Tensor::shape_str(first.shape) + " vs " + Tensor::shape_str(tp.shape));
            rows += tp.shape[0];
        }
        Tensor out({rows, cols});
        size_t off = 0;
        for (NodeId p : parts) {
            const auto& d = nodes_[p].value.data;
            std::copy(d.begin(), d.end(), out.data.begin() + off);
            off += d.size();
        }
        auto ps = parts;
        return push(std::move(out), rg, [ps](Tape& t, const Node& self) {
            size_t off = 0;
            for (NodeId p : ps) {
                size_t n = t.nodes_[p].value.numel();
                if (t.nodes_[p].requires_grad) {
                    auto& pg = t.grad_buf(p);
                    for (size_t i = 0; i < n; ++i) pg[i] += self.grad[off + i];
                }
                off += n;
            }
        });
    }
    if (axis == 1) {
        const size_t rows = first.shape[0];
        size_t cols = 0;
        for (NodeId p : parts) {
            const Tensor& tp = nodes_[p].value;
            check_2d(tp, "concat");
            if (tp.shape[0] != rows)
                throw ShapeError("concat axis 1: " + Tensor::shape_str(first.shape) + " vs " + Tensor::shape_str(tp.shape));
            cols += tp.shape[1];
        }
        Tensor out({rows, cols});
        size_t coff = 0;
        for (NodeId p : parts) {
            const Tensor& tp = nodes_[p].value;
            for (size_t r = 0; r < rows; ++r)
                std::copy(tp.data.begin() + r * tp.shape[1], tp.data.begin() + (r + 1) * tp.shape[1],
                          out.data.begin() + r * cols + coff);
            coff += tp.shape[1];
        }
        auto ps = parts;
        return push(std::move(out), rg, [ps, rows, cols](Tape& t, const Node& self) {
            size_t coff = 0;
            for (NodeId p : ps) {
                const size_t pc = t.nodes_[p].value.shape[1];
                if (t.nodes_[p].requires_grad) {
                    auto& pg = t.grad_buf(p);
                    for (size_t r = 0; r < rows; ++r)
                        for (size_t c = 0; c < pc; ++c) pg[r * pc + c] += self.grad[r * cols + coff + c];
                }
                coff += pc;
            }
        });
    }
    throw ShapeError("concat: unsupported axis " + std::to_string(axis));
}

NodeId Tape::stack_rows(const std::vector<NodeId>& vecs) {
    if (vecs.empty()) throw ShapeError("stack_rows: no vectors");
    const size_t d = nodes_[vecs[0]].value.numel();
    bool rg = false;
    Tensor out({vecs.size(), d});
    for (size_t r = 0; r < vecs.size(); ++r) {
        const Tensor& tv = nodes_[vecs[r]].value;
        if (tv.ndim() != 1 || tv.shape[0] != d)
            throw ShapeError("stack_rows: row " + std::to_string(r) + " has shape " + Tensor::shape_str(tv.shape));
        std::copy(tv.data.begin(), tv.data.end(), out.data.begin() + r * d);
        rg = rg || nodes_[vecs[r]].requires_grad;
    }
    auto vs = vecs;
    return push(std::move(out), rg, [vs, d](Tape& t, const Node& self) {
        for (size_t r = 0; r < vs.size(); ++r) {
            if (!t.nodes_[vs[r]].requires_grad) continue;
            auto& pg = t.grad_buf(vs[r]);
            for (size_t c = 0; c < d; ++c) pg[c] += self.grad[r * d + c];
        }
    });
}

NodeId Tape::slice(NodeId a, int axis, size_t start, size_t len) {
    const Tensor& ta = nodes_[a].value;
    if (ta.ndim() == 1) {
        if (axis != 0 || start + len > ta.shape[0])
            throw ShapeError("slice: [" + std::to_string(start) + "," + std::to_string(start + len) +
                             ") of " + Tensor::shape_str(ta.shape));
        Tensor out({len});
        std::copy(ta.data.begin() + start, ta.data.begin() + start + len, out.data.begin());
        return push(std::move(out), nodes_[a].requires_grad, [a, start, len](Tape& t, const Node& self) {
            auto& pg = t.grad_buf(a);
            for (size_t i = 0; i < len; ++i) pg[start + i] += self.grad[i];
        });
    }
    check_2d(ta, "slice");
    const size_t rows = ta.shape[0], cols = ta.shape[1];
    if (axis == 0) {
        if (start + len > rows) throw ShapeError("slice rows: out of range for " + Tensor::shape_str(ta.shape));
        Tensor out({len, cols});
        std::copy(ta.data.begin() + start * cols, ta.data.begin() + (start + len) * cols, out.data.begin());
        return push(std::move(out), nodes_[a].requires_grad, [a, start, len, cols](Tape& t, const Node& self) {
            auto& pg = t.grad_buf(a);
            for (size_t i = 0; i < len * cols; ++i) pg[start * cols + i] += self.grad[i];
        });
    }
    if (axis == 1) {
        if (start + len > cols) throw ShapeError("slice cols: out of range for " + Tensor::shape_str(ta.shape));
        Tensor out({rows, len});
        for (size_t r = 0; r < rows; ++r)
            std::copy(ta.data.begin() + r * cols + start, ta.data.begin() + r * cols + start + len,
                      out.data.begin() + r * len);
        return push(std::move(out), nodes_[a].requires_grad, [a, start, len, rows, cols](Tape& t, const Node& self) {
            auto& pg = t.grad_buf(a);
            for (size_t r = 0; r < rows; ++r)
                for (size_t c = 0; c < len; ++c) pg[r * cols + start + c] += self.grad[r * len + c];
        });
    }
    throw ShapeError("slice: unsupported axis " + std::to_string(axis));
}

NodeId Tape::row(NodeId a, size_t i) {
    const Tensor& ta = nodes_[a].value;
    check_2d(ta, "row");
    if (i >= ta.shape[0]) throw ShapeError("row: index " + std::to_string(i) + " of " + Tensor::shape_str(ta.shape));
    const size_t cols = ta.shape[1];
    Tensor out({cols});
    std::copy(ta.data.begin() + i * cols, ta.data.begin() + (i + 1) * cols, out.data.begin());
    return push(std::move(out), nodes_[a].requires_grad, [a, i, cols](Tape& t, const Node& self) {
        auto& pg = t.grad_buf(a);
        for (size_t c = 0; c < cols; ++c) pg[i * cols + c] += self.grad[c];
    });
}

NodeId Tape::layer_norm(NodeId x, NodeId gamma, NodeId beta) {
    const Tensor& tx = nodes_[x].value;
    const Tensor& tg = nodes_[gamma].value;
    const Tensor& tb = nodes_[beta].value;
    const size_t d = tx.ndim() == 1 ? tx.shape[0] : tx.shape.back();
    const size_t rows = tx.numel() / d;
    if (tx.ndim() > 2) throw ShapeError("layer_norm: rank > 2 input " + Tensor::shape_str(tx.shape));
    if (tg.numel() != d || tb.numel() != d)
        throw ShapeError("layer_norm: gamma/beta " + Tensor::shape_str(tg.shape) + "/" +
                         Tensor::shape_str(tb.shape) + " vs feature dim " + std::to_string(d));
    Tensor out(tx.shape);
    for (size_t r = 0; r < rows; ++r) {
        const double* xr = tx.data.data() + r * d;
        double* yr = out.data.data() + r * d;
        double mu = 0.0;
        for (size_t c = 0; c < d; ++c) mu += xr[c];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (size_t c = 0; c < d; ++c) {
            double dv = xr[c] - mu;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const double istd = 1.0 / std::sqrt(var + kLayerNormEps);
        for (size_t c = 0; c < d; ++c) yr[c] = tg.data[c] * ((xr[c] - mu) * istd) + tb.data[c];
    }
    bool rg = nodes_[x].requires_grad || nodes_[gamma].requires_grad || nodes_[beta].requires_grad;
    return push(std::move(out), rg, [x, gamma, beta, rows, d](Tape& t, const Node& self) {
        const auto& xv = t.nodes_[x].value.data;
        const auto& gv = t.nodes_[gamma].value.data;
        std::vector<double> xhat(d);
        const bool need_x = t.nodes_[x].requires_grad;
        const bool need_g = t.nodes_[gamma].requires_grad;
        const bool need_b = t.nodes_[beta].requires_grad;
        for (size_t r = 0; r < rows; ++r) {
            const double* xr = xv.data() + r * d;
            const double* gr = self.grad.data() + r * d;
            double mu = 0.0;
            for (size_t c = 0; c < d; ++c) mu += xr[c];
            mu /= static_cast<double>(d);
            double var = 0.0;
            for (size_t c = 0; c < d; ++c) {
                double dv = xr[c] - mu;
                var += dv * dv;
            }
            var /= static_cast<double>(d);
            const double istd = 1.0 / std::sqrt(var + kLayerNormEps);
            for (size_t c = 0; c < d; ++c) xhat[c] = (xr[c] - mu) * istd;
            if (need_b) {
                auto& pb = t.grad_buf(beta);
                for (size_t c = 0; c < d; ++c) pb[c] += gr[c];
            }
            if (need_g) {
                auto& pgma = t.grad_buf(gamma);
                for (size_t c = 0; c < d; ++c) pgma[c] += gr[c] * xhat[c];
            }
            if (need_x) {
                auto& px = t.grad_buf(x);
                double m1 = 0.0, m2 = 0.0;
                for (size_t c = 0; c < d; ++c) {
                    double dxh = gr[c] * gv[c];
                    m1 += dxh;
                    m2 += dxh * xhat[c];
                }
                m1 /= static_cast<double>(d);
                m2 /= static_cast<double>(d);
                for (size_t c = 0; c < d; ++c) {
                    double dxh = gr[c] * gv[c];
                    px[r * d + c] += (dxh - m1 - xhat[c] * m2) * istd;
                }
            }
        }
    });
}

NodeId Tape::softmax(NodeId x, int axis) {
    const Tensor& tx = nodes_[x].value;
    size_t rows, d;
    if (tx.ndim() == 1) {
        if (axis != 0 && axis != -1) throw ShapeError("softmax: axis " + std::to_string(axis) + " on rank-1");
        rows = 1;
        d = tx.shape[0];
    } else if (tx.ndim() == 2 && (axis == 1 || axis == -1)) {
        rows = tx.shape[0];
        d = tx.shape[1];
    } else {
        throw ShapeError("softmax: unsupported axis " + std::to_string(axis) + " for " + Tensor::shape_str(tx.shape));
    }
    Tensor out(tx.shape);
    for (size_t r = 0; r < rows; ++r) {
        const double* xr = tx.data.data() + r * d;
        double* yr = out.data.data() + r * d;
        double mx = xr[0];
        for (size_t c = 1; c < d; ++c) mx = std::max(mx, xr[c]);
        double sum = 0.0;
        for (size_t c = 0; c < d; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            sum += yr[c];
        }
        for (size_t c = 0; c < d; ++c) yr[c] /= sum;
    }
    return push(std::move(out), nodes_[x].requires_grad, [x, rows, d](Tape& t, const Node& self) {
        auto& pg = t.grad_buf(x);
        for (size_t r = 0; r < rows; ++r) {
            const double* yr = self.value.data.data() + r * d;
            const double* gr = self.grad.data() + r * d;
            double dot = 0.0;
            for (size_t c = 0; c < d; ++c) dot += gr[c] * yr[c];
            for (size_t c = 0; c < d; ++c) pg[r * d + c] += yr[c] * (gr[c] - dot);
        }
    });
}

NodeId Tape::mean(NodeId x, int axis) {
    const Tensor& tx = nodes_[x].value;
    if (tx.ndim() == 1) {
        if (axis != 0 && axis != -1) throw ShapeError("mean: axis " + std::to_string(axis) + " on rank-1");
        return mean_all(x);
    }
    check_2d(tx, "mean");
    const size_t rows = tx.shape[0], cols = tx.shape[1];
    if (axis == 0) {
        Tensor out({cols});
        for (size_t r = 0; r < rows; ++r)
            for (size_t c = 0; c < cols; ++c) out.data[c] += tx.data[r * cols + c];
        for (size_t c = 0; c < cols; ++c) out.data[c] /= static_cast<double>(rows);
        return push(std::move(out), nodes_[x].requires_grad, [x, rows, cols](Tape& t, const Node& self) {
            auto& pg = t.grad_buf(x);
            const double inv = 1.0 / static_cast<double>(rows);
            for (size_t r = 0; r < rows; ++r)
                for (size_t c = 0; c < cols; ++c) pg[r * cols + c] += self.grad[c] * inv;
        });
    }
    if (axis == 1 || axis == -1) {
        Tensor out({rows});
        for (size_t r = 0; r < rows; ++r) {
            double acc = 0.0;
            for (size_t c = 0; c < cols; ++c) acc += tx.data[r * cols + c];
            out.data[r] = acc / static_cast<double>(cols);
        }
        return push(std::move(out), nodes_[x].requires_grad, [x, rows, cols](Tape& t, const Node& self) {
            auto& pg = t.grad_buf(x);
            const double inv = 1.0 / static_cast<double>(cols);
            for (size_t r = 0; r < rows; ++r)
                for (size_t c = 0; c < cols; ++c) pg[r * cols + c] += self.grad[r] * inv;
        });
    }
    throw ShapeError("mean: unsupported axis " + std::to_string(axis));
}

NodeId Tape::mean_all(NodeId x) {
    const Tensor& tx = nodes_[x].value;
    const size_t n = tx.numel();
    if (n == 0) throw ShapeError("mean_all: empty tensor");
    double acc = 0.0;
    for (double v : tx.data) acc += v;
    Tensor out({1});
    out.data[0] = acc / static_cast<double>(n);
    return push(std::move(out), nodes_[x].requires_grad, [x, n](Tape& t, const Node& self) {
        auto& pg = t.grad_buf(x);
        const double g = self.grad[0] / static_cast<double>(n);
        for (size_t i = 0; i < n; ++i) pg[i] += g;
    });
}

NodeId Tape::l2_normalize(NodeId x, int axis) {
    const Tensor& tx = nodes_[x].value;
    size_t rows, d;
    if (tx.ndim() == 1) {
        if (axis != 0 && axis != -1) throw ShapeError("l2_normalize: axis " + std::to_string(axis) + " on rank-1");
        rows = 1;
        d = tx.shape[0];
    } else if (tx.ndim() == 2 && (axis == 1 || axis == -1)) {
        rows = tx.shape[0];
        d = tx.shape[1];
    } else {
        throw ShapeError("l2_normalize: unsupported axis for " + Tensor::shape_str(tx.shape));
    }
    Tensor out(tx.shape);
    for (size_t r = 0; r < rows; ++r) {
        const double* xr = tx.data.data() + r * d;
        double* yr = out.data.data() + r * d;
        double ss = 0.0;
        for (size_t c = 0; c < d; ++c) ss += xr[c] * xr[c];
        const double nrm = std::sqrt(ss);
        if (nrm == 0.0) {
            for (size_t c = 0; c < d; ++c) yr[c] = 0.0;
        } else {
            for (size_t c = 0; c < d; ++c) yr[c] = xr[c] / nrm;
        }
    }
    return push(std::move(out), nodes_[x].requires_grad, [x, rows, d](Tape& t, const Node& self) {
        const auto& xv = t.nodes_[x].value.data;
        auto& pg = t.grad_buf(x);
        for (size_t r = 0; r < rows; ++r) {
            const double* xr = xv.data() + r * d;
            const double* yr = self.value.data.data() + r * d;
            const double* gr = self.grad.data() + r * d;
            double ss = 0.0;
            for (size_t c = 0; c < d; ++c) ss += xr[c] * xr[c];
            const double nrm = std::sqrt(ss);
            if (nrm == 0.0) continue;
            double dot = 0.0;
            for (size_t c = 0; c < d; ++c) dot += gr[c] * yr[c];
            for (size_t c = 0; c < d; ++c) pg[r * d + c] += (gr[c] - yr[c] * dot) / nrm;
        }
    });
}

NodeId Tape::logsumexp_rows(NodeId x) {
    const Tensor& tx = nodes_[x].value;
    check_2d(tx, "logsumexp_rows");
    const size_t rows = tx.shape[0], cols = tx.shape[1];
    Tensor out({rows});
    for (size_t r = 0; r < rows; ++r) {
        const double* xr = tx.data.data() + r * cols;
        double mx = xr[0];
        for (size_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
        double sum = 0.0;
        for (size_t c = 0; c < cols; ++c) sum += std::exp(xr[c] - mx);
        out.data[r] = mx + std::log(sum);
    }
    return push(std::move(out), nodes_[x].requires_grad, [x, rows, cols](Tape& t, const Node& self) {
        const auto& xv = t.nodes_[x].value.data;
        auto& pg = t.grad_buf(x);
        for (size_t r = 0; r < rows; ++r) {
            const double* xr = xv.data() + r * cols;
            const double lse = self.value.data[r];
            const double g = self.grad[r];
            for (size_t c = 0; c < cols; ++c) pg[r * cols + c] += g * std::exp(xr[c] - lse);
        }
    });
}

NodeId Tape::diag(NodeId x) {
    const Tensor& tx = nodes_[x].value;
    check_2d(tx, "diag");
    const size_t n = tx.shape[0], m = tx.shape[1];
    if (m < n) throw ShapeError("diag: needs cols >= rows, got " + Tensor::shape_str(tx.shape));
    Tensor out({n});
    for (size_t i = 0; i < n; ++i) out.data[i] = tx.data[i * m + i];
    return push(std::move(out), nodes_[x].requires_grad, [x, n, m](Tape& t, const Node& self) {
        auto& pg = t.grad_buf(x);
        for (size_t i = 0; i < n; ++i) pg[i * m + i] += self.grad[i];
    });
}

NodeId Tape::rowwise_block_dots(NodeId q, NodeId hn, size_t H) {
    const Tensor& tq = nodes_[q].value;
    const Tensor& th = nodes_[hn].value;
    check_2d(tq, "rowwise_block_dots");
    check_2d(th, "rowwise_block_dots");
    const size_t n = tq.shape[0], d = tq.shape[1];
    if (th.shape[0] != n * H || th.shape[1] != d)
        throw ShapeError("rowwise_block_dots: " + Tensor::shape_str(tq.shape) + " vs " +
                         Tensor::shape_str(th.shape) + " with H=" + std::to_string(H));
    Tensor out({n, H});
    for (size_t i = 0; i < n; ++i)
        for (size_t h = 0; h < H; ++h) {
            double acc = 0.0;
            const double* qi = tq.data.data() + i * d;
            const double* nh = th.data.data() + (i * H + h) * d;
            for (size_t c = 0; c < d; ++c) acc += qi[c] * nh[c];
            out.data[i * H + h] = acc;
        }
    bool rg = nodes_[q].requires_grad || nodes_[hn].requires_grad;
    return push(std::move(out), rg, [q, hn, H, n, d](Tape& t, const Node& self) {
        const auto& qv = t.nodes_[q].value.data;
        const auto& hv = t.nodes_[hn].value.data;
        for (size_t i = 0; i < n; ++i)
            for (size_t h = 0; h < H; ++h) {
                const double g = self.grad[i * H + h];
                if (t.nodes_[q].requires_grad) {
                    auto& pq = t.grad_buf(q);
                    for (size_t c = 0; c < d; ++c) pq[i * d + c] += g * hv[(i * H + h) * d + c];
                }
                if (t.nodes_[hn].requires_grad) {
                    auto& ph = t.grad_buf(hn);
                    for (size_t c = 0; c < d; ++c) ph[(i * H + h) * d + c] += g * qv[i * d + c];
                }
            }
    });
}

// ---- ParamStore ----

Parameter& ParamStore::add(const std::string& name, Tensor t, bool frozen) {
    if (params_.count(name)) throw ValidationError("duplicate parameter name: " + name);
    Parameter p;
    p.name = name;
    p.tensor = std::move(t);
    p.tensor.requires_grad = !frozen;
    p.frozen = frozen;
    return params_.emplace(name, std::move(p)).first->second;
}

Parameter& ParamStore::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
    return it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
    return it->second;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [k, v] : params_) out.push_back(k);
    return out;
}

std::vector<std::string> ParamStore::trainable_names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : params_)
        if (!v.frozen) out.push_back(k);
    return out;
}

std::map<std::string, Tensor> ParamStore::export_tensors() const {
    std::map<std::string, Tensor> out;
    for (const auto& [k, v] : params_) {
        Tensor t = v.tensor;
        t.grad.clear();
        t.requires_grad = false;
        out.emplace(k, std::move(t));
    }
    return out;
}

std::vector<std::string> ParamStore::import_tensors(const std::map<std::string, Tensor>& tensors) {
    std::vector<std::string> unknown;
    for (const auto& [k, t] : tensors) {
        auto it = params_.find(k);
        if (it == params_.end()) {
            unknown.push_back(k);
            continue;
        }
        if (it->second.tensor.shape != t.shape)
            throw FormatError("parameter " + k + " shape " + Tensor::shape_str(t.shape) +
                              " does not match model shape " + Tensor::shape_str(it->second.tensor.shape));
        it->second.tensor.data = t.data;
    }
    for (const auto& [k, v] : params_)
        if (!tensors.count(k)) throw FormatError("checkpoint is missing parameter " + k);
    return unknown;
}

// ---- TapeSession ----

NodeId TapeSession::param(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Parameter& p = store_.get(name);
    NodeId id = tape_.leaf(p.tensor, !p.frozen);
    bound_.emplace(name, id);
    return id;
}

NodeId TapeSession::param_transposed(const std::string& name) {
    auto it = transposed_.find(name);
    if (it != transposed_.end()) return it->second;
    NodeId id = tape_.transpose(param(name));
    transposed_.emplace(name, id);
    return id;
}

void TapeSession::harvest_grads() {
    for (const auto& [name, node] : bound_) {
        Parameter& p = store_.get(name);
        if (p.frozen) continue;
        const auto& g = tape_.grad(node);
        p.tensor.ensure_grad();
        if (g.empty()) continue;
        for (size_t i = 0; i < g.size(); ++i) p.tensor.grad[i] += g[i];
    }
}

}  // namespace figclip
