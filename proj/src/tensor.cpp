#include "umg/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace umg {

int64_t shape_numel(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> s, std::vector<real> values) : shape(std::move(s)) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw DimError("tensor: " + std::to_string(values.size()) + " values for shape " +
                       shape_str(shape));
    }
    store = std::make_shared<std::vector<real>>(std::move(values));
}

Tensor::Tensor(std::vector<int> s, real fill) : shape(std::move(s)) {
    store = std::make_shared<std::vector<real>>(static_cast<size_t>(shape_numel(shape)), fill);
}

int64_t Tensor::numel() const { return shape_numel(shape); }

real Tensor::scalar() const {
    if (numel() != 1) throw DimError("scalar() on tensor of shape " + shape_str(shape));
    return (*store)[0];
}

Tensor scalar_tensor(real v) { return Tensor({1}, std::vector<real>{v}); }

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

void check_finite(const Tensor& t, const char* op) {
    for (real v : *t.store) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + ": non-finite value in output");
        }
    }
}

Tensor Tape::leaf(const Tensor& value) {
    Tensor out = value;
    out.tape = this;
    out.node = add_node(value.numel(), nullptr);
    leaves_.push_back(out.node);
    return out;
}

int Tape::add_node(int64_t out_numel, BackFn back) {
    nodes_.push_back(Node{out_numel, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
}

std::vector<real>& Tape::grad(int node) {
    if (grads_.size() != nodes_.size()) grads_.resize(nodes_.size());
    auto& g = grads_[static_cast<size_t>(node)];
    if (g.empty()) g.assign(static_cast<size_t>(nodes_[static_cast<size_t>(node)].numel), 0);
    return g;
}

const std::vector<real>& Tape::grad_of(int node) const {
    return grads_[static_cast<size_t>(node)];
}

std::unordered_map<int, std::vector<real>> Tape::backward(const Tensor& loss) {
    if (loss.tape != this || loss.node < 0) {
        throw ValueError("backward: loss is not on this tape");
    }
    if (loss.numel() != 1) {
        throw DimError("backward: loss must be scalar, got " + shape_str(loss.shape));
    }
    grads_.assign(nodes_.size(), {});
    grad(loss.node)[0] = 1;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
        auto& n = nodes_[static_cast<size_t>(i)];
        if (!n.back) continue;
        if (grads_[static_cast<size_t>(i)].empty()) continue;  // not reached by loss
        n.back(*this);
    }
    std::unordered_map<int, std::vector<real>> out;
    for (int l : leaves_) {
        auto& g = grads_[static_cast<size_t>(l)];
        if (g.empty()) g.assign(static_cast<size_t>(nodes_[static_cast<size_t>(l)].numel), 0);
        out.emplace(l, std::move(g));
    }
    clear();
    return out;
}

void Tape::clear() {
    nodes_.clear();
    grads_.clear();
    leaves_.clear();
}

std::vector<Tensor> bind_params(Tape& tape, const std::vector<Tensor*>& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (Tensor* p : params) out.push_back(tape.leaf(*p));
    return out;
}

std::vector<std::vector<real>> grads_for(const std::unordered_map<int, std::vector<real>>& gm,
                                         const std::vector<Tensor>& bound) {
    std::vector<std::vector<real>> out;
    out.reserve(bound.size());
    for (const Tensor& t : bound) {
        auto it = gm.find(t.node);
        if (it != gm.end()) {
            out.push_back(it->second);
        } else {
            out.emplace_back(static_cast<size_t>(t.numel()), 0);
        }
    }
    return out;
}

}  // namespace umg
