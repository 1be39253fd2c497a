#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace adasmtl::nn {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
};

/// Named, ordered parameter set with stable addresses.
class ParameterStore {
public:
    Parameter& add(const std::string& name, Matrix initial);
    Parameter* find(const std::string& name) noexcept;
    const Parameter* find(const std::string& name) const noexcept;
    Parameter& at(const std::string& name);

    std::size_t size() const noexcept { return params_.size(); }
    std::size_t scalar_count() const noexcept;
    Parameter& operator[](std::size_t i) noexcept { return *params_[i]; }
    const Parameter& operator[](std::size_t i) const noexcept { return *params_[i]; }

    void zero_grad();
    std::vector<Matrix> snapshot() const;
    void restore(const std::vector<Matrix>& values);

    /// Name of the first parameter holding a non-finite value, empty if none.
    std::string first_non_finite() const;

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Tape-based reverse-mode differentiation over dense matrices. Values are
/// row-major in meaning: each row is a token or sample.
class Graph {
public:
    struct Var {
        int id = -1;
        bool valid() const noexcept { return id >= 0; }
    };

    /// Additive attention bias for one group (n×n), e.g. a shifted-window mask.
    using Mask = std::shared_ptr<const Matrix>;

    Var constant(Matrix value);
    Var param(Parameter& p);

    const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
    std::size_t size() const noexcept { return nodes_.size(); }

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    /// a + row broadcast over rows
    Var add_row(Var a, Var row);
    Var scale(Var a, double s);
    Var gelu(Var a);
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
    Var linear(Var x, Parameter& weight, Parameter& bias);

    Var concat_cols(const std::vector<Var>& parts);
    Var concat_rows(const std::vector<Var>& parts);
    /// out.row(i) = a.row(rows[i])
    Var gather_rows(Var a, std::vector<int> rows);
    /// out.row(i) = [a.row(groups[i][0]) ... a.row(groups[i][g-1])]
    Var merge_rows(Var a, std::vector<std::vector<int>> groups);
    /// out.row(g) = mean of a.row(r) for r in groups[g]
    Var mean_rows(Var a, std::vector<std::vector<int>> groups);

    /// Multi-head self-attention within each row group. qkv holds [Q | K | V]
    /// column blocks of width d each; output is rows(qkv) × d. Rows not in any
    /// group produce zeros.
    Var attention(Var qkv, int num_heads, std::vector<std::vector<int>> groups, std::vector<Mask> masks = {});

    /// Accumulates d(out)/d(.) seeded with `seed` into every reachable node
    /// and parameter gradient.
    void backward(Var out, const Matrix& seed);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        std::function<void(Graph&, Node&)> backward;
    };

    Var push(Matrix value, bool requires_grad, std::function<void(Graph&, Node&)> backward);
    Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
    bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }
    Matrix& grad_of(Var v);

    std::vector<Node> nodes_;
};

}  // namespace adasmtl::nn
