#include "autograd.hpp"

#include <cmath>
#include <numbers>

#include "error.hpp"

namespace adasmtl::nn {

Parameter& ParameterStore::add(const std::string& name, Matrix initial) {
    require(!index_.count(name), "duplicate parameter name " + name);
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->grad = Matrix::Zero(initial.rows(), initial.cols());
    p->value = std::move(initial);
    index_.emplace(name, params_.size());
    params_.push_back(std::move(p));
    return *params_.back();
}

Parameter* ParameterStore::find(const std::string& name) noexcept {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParameterStore::find(const std::string& name) const noexcept {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
}

Parameter& ParameterStore::at(const std::string& name) {
    auto* p = find(name);
    if (!p) fail(ErrorKind::contract, "no parameter named " + name);
    return *p;
}

std::size_t ParameterStore::scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) p->grad.setZero();
}

std::vector<Matrix> ParameterStore::snapshot() const {
    std::vector<Matrix> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p->value);
    return out;
}

void ParameterStore::restore(const std::vector<Matrix>& values) {
    require(values.size() == params_.size(), "parameter snapshot size mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
        require(values[i].rows() == params_[i]->value.rows() && values[i].cols() == params_[i]->value.cols(),
                "parameter snapshot shape mismatch for " + params_[i]->name);
        params_[i]->value = values[i];
    }
}

std::string ParameterStore::first_non_finite() const {
    for (const auto& p : params_) {
        if (!p->value.allFinite()) return p->name;
    }
    return {};
}

// ---------------------------------------------------------------------------

Graph::Var Graph::push(Matrix value, bool requires_grad, std::function<void(Graph&, Node&)> backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

Matrix& Graph::grad_of(Var v) {
    Node& n = node(v);
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

Graph::Var Graph::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Graph::Var Graph::param(Parameter& p) {
    Parameter* target = &p;
    return push(p.value, true, [target](Graph&, Node& self) { target->grad += self.grad; });
}

Graph::Var Graph::matmul(Var a, Var b) {
    require(value(a).cols() == value(b).rows(), "matmul shape mismatch");
    return push(value(a) * value(b), needs(a) || needs(b), [a, b](Graph& g, Node& self) {
        if (g.needs(a)) g.grad_of(a).noalias() += self.grad * g.value(b).transpose();
        if (g.needs(b)) g.grad_of(b).noalias() += g.value(a).transpose() * self.grad;
    });
}

Graph::Var Graph::add(Var a, Var b) {
    require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "add shape mismatch");
    return push(value(a) + value(b), needs(a) || needs(b), [a, b](Graph& g, Node& self) {
        if (g.needs(a)) g.grad_of(a) += self.grad;
        if (g.needs(b)) g.grad_of(b) += self.grad;
    });
}

Graph::Var Graph::add_row(Var a, Var row) {
    require(value(row).rows() == 1 && value(row).cols() == value(a).cols(), "add_row shape mismatch");
    Matrix out = value(a);
    out.rowwise() += value(row).row(0);
    return push(std::move(out), needs(a) || needs(row), [a, row](Graph& g, Node& self) {
        if (g.needs(a)) g.grad_of(a) += self.grad;
        if (g.needs(row)) g.grad_of(row) += self.grad.colwise().sum();
    });
}

Graph::Var Graph::scale(Var a, double s) {
    return push(value(a) * s, needs(a), [a, s](Graph& g, Node& self) {
        if (g.needs(a)) g.grad_of(a) += self.grad * s;
    });
}

namespace {
constexpr double inv_sqrt2 = 0.5 * std::numbers::sqrt2;
}

Graph::Var Graph::gelu(Var a) {
    const Matrix& x = value(a);
    Matrix out = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); });
    return push(std::move(out), needs(a), [a](Graph& g, Node& self) {
        if (!g.needs(a)) return;
        const Matrix& x = g.value(a);
        const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
        Matrix d = x.unaryExpr([inv_sqrt_2pi](double v) {
            return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
        });
        g.grad_of(a) += self.grad.cwiseProduct(d);
    });
}

Graph::Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Matrix& xv = value(x);
    const auto cols = xv.cols();
    require(value(gamma).cols() == cols && value(beta).cols() == cols, "layer_norm parameter width mismatch");
    Matrix xhat(xv.rows(), cols);
    Eigen::VectorXd inv_std(xv.rows());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        const double mean = xv.row(r).mean();
        const double var = (xv.row(r).array() - mean).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
    }
    Matrix out = xhat;
    out.array().rowwise() *= value(gamma).row(0).array();
    out.rowwise() += value(beta).row(0);
    return push(std::move(out), needs(x) || needs(gamma) || needs(beta),
                [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, Node& self) {
                    const Matrix& dy = self.grad;
                    if (g.needs(gamma)) g.grad_of(gamma) += dy.cwiseProduct(xhat).colwise().sum();
                    if (g.needs(beta)) g.grad_of(beta) += dy.colwise().sum();
                    if (!g.needs(x)) return;
                    Matrix dxhat = dy;
                    dxhat.array().rowwise() *= g.value(gamma).row(0).array();
                    Matrix& dx = g.grad_of(x);
                    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
                        const double m1 = dxhat.row(r).mean();
                        const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
                        dx.row(r).array() += inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                    }
                });
}

Graph::Var Graph::linear(Var x, Parameter& weight, Parameter& bias) {
    return add_row(matmul(x, param(weight)), param(bias));
}

Graph::Var Graph::concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols needs at least one input");
    const auto rows = value(parts[0]).rows();
    Eigen::Index cols = 0;
    bool any = false;
    for (auto p : parts) {
        require(value(p).rows() == rows, "concat_cols row mismatch");
        cols += value(p).cols();
        any = any || needs(p);
    }
    Matrix out(rows, cols);
    Eigen::Index c = 0;
    for (auto p : parts) {
        out.middleCols(c, value(p).cols()) = value(p);
        c += value(p).cols();
    }
    return push(std::move(out), any, [parts](Graph& g, Node& self) {
        Eigen::Index c = 0;
        for (auto p : parts) {
            const auto w = g.value(p).cols();
            if (g.needs(p)) g.grad_of(p) += self.grad.middleCols(c, w);
            c += w;
        }
    });
}

Graph::Var Graph::concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_rows needs at least one input");
    const auto cols = value(parts[0]).cols();
    Eigen::Index rows = 0;
    bool any = false;
    for (auto p : parts) {
        require(value(p).cols() == cols, "concat_rows column mismatch");
        rows += value(p).rows();
        any = any || needs(p);
    }
    Matrix out(rows, cols);
    Eigen::Index r = 0;
    for (auto p : parts) {
        out.middleRows(r, value(p).rows()) = value(p);
        r += value(p).rows();
    }
    return push(std::move(out), any, [parts](Graph& g, Node& self) {
        Eigen::Index r = 0;
        for (auto p : parts) {
            const auto h = g.value(p).rows();
            if (g.needs(p)) g.grad_of(p) += self.grad.middleRows(r, h);
            r += h;
        }
    });
}

Graph::Var Graph::gather_rows(Var a, std::vector<int> rows) {
    const Matrix& av = value(a);
    Matrix out(static_cast<Eigen::Index>(rows.size()), av.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] >= 0 && rows[i] < av.rows(), "gather_rows index out of range");
        out.row(static_cast<Eigen::Index>(i)) = av.row(rows[i]);
    }
    return push(std::move(out), needs(a), [a, rows = std::move(rows)](Graph& g, Node& self) {
        if (!g.needs(a)) return;
        Matrix& ga = g.grad_of(a);
        for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    });
}

Graph::Var Graph::merge_rows(Var a, std::vector<std::vector<int>> groups) {
    const Matrix& av = value(a);
    require(!groups.empty(), "merge_rows needs at least one group");
    const auto gsize = static_cast<Eigen::Index>(groups[0].size());
    const auto c = av.cols();
    Matrix out(static_cast<Eigen::Index>(groups.size()), gsize * c);
    for (std::size_t i = 0; i < groups.size(); ++i) {
        require(static_cast<Eigen::Index>(groups[i].size()) == gsize, "merge_rows groups must have equal size");
        for (Eigen::Index k = 0; k < gsize; ++k) {
            out.block(static_cast<Eigen::Index>(i), k * c, 1, c) = av.row(groups[i][static_cast<std::size_t>(k)]);
        }
    }
    return push(std::move(out), needs(a), [a, groups = std::move(groups), gsize, c](Graph& g, Node& self) {
        if (!g.needs(a)) return;
        Matrix& ga = g.grad_of(a);
        for (std::size_t i = 0; i < groups.size(); ++i)
            for (Eigen::Index k = 0; k < gsize; ++k)
                ga.row(groups[i][static_cast<std::size_t>(k)]) += self.grad.block(static_cast<Eigen::Index>(i), k * c, 1, c);
    });
}

Graph::Var Graph::mean_rows(Var a, std::vector<std::vector<int>> groups) {
    const Matrix& av = value(a);
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(groups.size()), av.cols());
    for (std::size_t i = 0; i < groups.size(); ++i) {
        require(!groups[i].empty(), "mean_rows group is empty");
        for (int r : groups[i]) out.row(static_cast<Eigen::Index>(i)) += av.row(r);
        out.row(static_cast<Eigen::Index>(i)) /= static_cast<double>(groups[i].size());
    }
    return push(std::move(out), needs(a), [a, groups = std::move(groups)](Graph& g, Node& self) {
        if (!g.needs(a)) return;
        Matrix& ga = g.grad_of(a);
        for (std::size_t i = 0; i < groups.size(); ++i) {
            const double w = 1.0 / static_cast<double>(groups[i].size());
            for (int r : groups[i]) ga.row(r) += w * self.grad.row(static_cast<Eigen::Index>(i));
        }
    });
}

Graph::Var Graph::attention(Var qkv, int num_heads, std::vector<std::vector<int>> groups, std::vector<Mask> masks) {
    const Matrix& in = value(qkv);
    require(in.cols() % 3 == 0, "attention input must hold Q, K and V blocks");
    const Eigen::Index d = in.cols() / 3;
    require(num_heads > 0 && d % num_heads == 0, "attention width not divisible by head count");
    require(masks.empty() || masks.size() == groups.size(), "attention masks must match groups");
    const Eigen::Index dh = d / num_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix out = Matrix::Zero(in.rows(), d);
    // probabilities per (group, head), kept for the backward pass
    std::vector<Matrix> probs(groups.size() * static_cast<std::size_t>(num_heads));
    Matrix q, k, v;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& rows = groups[gi];
        const auto n = static_cast<Eigen::Index>(rows.size());
        for (int h = 0; h < num_heads; ++h) {
            q.resize(n, dh);
            k.resize(n, dh);
            v.resize(n, dh);
            for (Eigen::Index i = 0; i < n; ++i) {
                q.row(i) = in.row(rows[static_cast<std::size_t>(i)]).segment(h * dh, dh);
                k.row(i) = in.row(rows[static_cast<std::size_t>(i)]).segment(d + h * dh, dh);
                v.row(i) = in.row(rows[static_cast<std::size_t>(i)]).segment(2 * d + h * dh, dh);
            }
            Matrix s = (q * k.transpose()) * scale;
            if (!masks.empty() && masks[gi]) s += *masks[gi];
            for (Eigen::Index i = 0; i < n; ++i) {
                const double m = s.row(i).maxCoeff();
                s.row(i) = (s.row(i).array() - m).exp();
                s.row(i) /= s.row(i).sum();
            }
            const Matrix o = s * v;
            for (Eigen::Index i = 0; i < n; ++i) out.row(rows[static_cast<std::size_t>(i)]).segment(h * dh, dh) = o.row(i);
            probs[gi * static_cast<std::size_t>(num_heads) + static_cast<std::size_t>(h)] = std::move(s);
        }
    }
    return push(std::move(out), needs(qkv),
                [qkv, num_heads, d, dh, scale, groups = std::move(groups), probs = std::move(probs)](Graph& g, Node& self) {
                    if (!g.needs(qkv)) return;
                    const Matrix& in = g.value(qkv);
                    Matrix& gin = g.grad_of(qkv);
                    Matrix q, k, v, dout;
                    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
                        const auto& rows = groups[gi];
                        const auto n = static_cast<Eigen::Index>(rows.size());
                        for (int h = 0; h < num_heads; ++h) {
                            q.resize(n, dh);
                            k.resize(n, dh);
                            v.resize(n, dh);
                            dout.resize(n, dh);
                            for (Eigen::Index i = 0; i < n; ++i) {
                                const auto r = rows[static_cast<std::size_t>(i)];
                                q.row(i) = in.row(r).segment(h * dh, dh);
                                k.row(i) = in.row(r).segment(d + h * dh, dh);
                                v.row(i) = in.row(r).segment(2 * d + h * dh, dh);
                                dout.row(i) = self.grad.row(r).segment(h * dh, dh);
                            }
                            const Matrix& p = probs[gi * static_cast<std::size_t>(num_heads) + static_cast<std::size_t>(h)];
                            const Matrix dp = dout * v.transpose();
                            const Matrix dv = p.transpose() * dout;
                            Matrix ds = p.cwiseProduct(dp);
                            const Eigen::VectorXd rowdot = ds.rowwise().sum();
                            ds -= p.cwiseProduct(rowdot.replicate(1, n));
                            const Matrix dq = (ds * k) * scale;
                            const Matrix dk = (ds.transpose() * q) * scale;
                            for (Eigen::Index i = 0; i < n; ++i) {
                                const auto r = rows[static_cast<std::size_t>(i)];
                                gin.row(r).segment(h * dh, dh) += dq.row(i);
                                gin.row(r).segment(d + h * dh, dh) += dk.row(i);
                                gin.row(r).segment(2 * d + h * dh, dh) += dv.row(i);
                            }
                        }
                    }
                });
}

void Graph::backward(Var out, const Matrix& seed) {
    require(value(out).rows() == seed.rows() && value(out).cols() == seed.cols(), "backward seed shape mismatch");
    grad_of(out) += seed;
    for (auto i = static_cast<std::ptrdiff_t>(out.id); i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
        n.backward(*this, n);
    }
}

}  // namespace adasmtl::nn
