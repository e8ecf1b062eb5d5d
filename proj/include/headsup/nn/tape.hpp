#pragma once

#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "headsup/nn/tensor.hpp"

namespace headsup::nn {

// One trainable (or persistent) tensor. Adam moments live here so the
// optimizer state serializes together with the weights.
struct Param {
    std::string name;
    Tensor w;
    Tensor g;
    Tensor adam_m, adam_v;
    bool trainable = true;  // false: persistent buffer (e.g. norm running stats)

    void ensure_grad() {
        if (g.numel() != w.numel()) g = Tensor(w.shape);
    }
    void ensure_adam() {
        if (adam_m.numel() != w.numel()) {
            adam_m = Tensor(w.shape);
            adam_v = Tensor(w.shape);
        }
    }
    void zero_grad() { std::fill(g.v.begin(), g.v.end(), 0.0f); }
};

// Ordered, name-addressable parameter set. Iteration order is insertion
// order, which makes cross-thread gradient reduction deterministic. A deque
// keeps Param addresses stable while layers hold pointers into the store.
struct ParamStore {
    std::deque<Param> items;
    std::unordered_map<std::string, int> index;

    Param& add(const std::string& name, Tensor init, bool trainable = true) {
        require(!index.count(name), "DuplicateParam", "parameter already registered: " + name);
        index.emplace(name, static_cast<int>(items.size()));
        Param p;
        p.name = name;
        // gradient and Adam buffers are allocated lazily by the trainer
        p.w = std::move(init);
        p.trainable = trainable;
        items.push_back(std::move(p));
        return items.back();
    }

    Param& at(const std::string& name) {
        auto it = index.find(name);
        require(it != index.end(), "MissingParam", "unknown parameter: " + name);
        return items[it->second];
    }
    const Param& at(const std::string& name) const {
        auto it = index.find(name);
        require(it != index.end(), "MissingParam", "unknown parameter: " + name);
        return items[it->second];
    }

    bool has(const std::string& name) const { return index.count(name) > 0; }

    void zero_grads() {
        for (auto& p : items) p.zero_grad();
    }

    size_t count_trainable() const {
        size_t n = 0;
        for (const auto& p : items)
            if (p.trainable) n += p.w.numel();
        return n;
    }
};

// Reverse-mode tape. Creation order is topological order; backward walks the
// node list in reverse. Parameter values are aliased (not copied); parameter
// gradients are staged tape-locally and flushed into the ParamStore
// explicitly, so worker threads can each run a tape against shared read-only
// weights and flush serially.
class Tape {
public:
    using Id = int;
    static constexpr Id kNone = -1;

    Tape() = default;
    explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}

    struct BnStat {  // batch-norm statistics recorded during training forward
        Param* running_mean;
        Param* running_var;
        Tensor mean, var;
    };

    Id constant(Tensor t) { return push(std::move(t), false); }

    Id input(Tensor t, bool needs_grad = true) {
        return push(std::move(t), needs_grad && grad_enabled_);
    }

    Id param(Param& p) {
        auto it = param_ids_.find(&p);
        if (it != param_ids_.end()) return it->second;
        Node n;
        n.external = &p.w;
        n.needs_grad = p.trainable && grad_enabled_;
        n.source_param = &p;
        nodes_.push_back(std::move(n));
        Id id = static_cast<Id>(nodes_.size()) - 1;
        param_ids_.emplace(&p, id);
        return id;
    }

    Id apply(Tensor val, std::vector<Id> parents, std::function<void(Tape&, Id)> backward) {
        bool any = false;
        if (grad_enabled_)
            for (Id pid : parents) any = any || nodes_[pid].needs_grad;
        Id id = push(std::move(val), any);
        if (any) {
            nodes_[id].parents = std::move(parents);
            nodes_[id].backward = std::move(backward);
        }
        return id;
    }

    const Tensor& val(Id id) const {
        const Node& n = nodes_[id];
        return n.external ? *n.external : n.val;
    }

    bool needs_grad(Id id) const { return nodes_[id].needs_grad; }

    Tensor& grad(Id id) {
        Node& n = nodes_[id];
        if (n.grad.numel() == 0) n.grad = Tensor(val(id).shape);
        return n.grad;
    }

    void add_grad(Id id, const float* g, size_t n) {
        if (!nodes_[id].needs_grad) return;
        Tensor& gt = grad(id);
        require(gt.numel() == n, "ShapeMismatch", "gradient size mismatch");
        for (size_t i = 0; i < n; ++i) gt.v[i] += g[i];
    }

    void backward(Id loss) {
        require(val(loss).numel() == 1, "BadLoss", "backward target must be scalar");
        grad(loss).v[0] = 1.0f;
        for (Id id = loss; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.needs_grad || n.grad.numel() == 0 || !n.backward) continue;
            n.backward(*this, id);
        }
    }

    // Adds staged parameter gradients into the store, in node creation order.
    void flush_param_grads() {
        for (Id id = 0; id < static_cast<Id>(nodes_.size()); ++id) {
            Node& n = nodes_[id];
            if (!n.source_param || n.grad.numel() == 0) continue;
            n.source_param->ensure_grad();
            auto& g = n.source_param->g;
            for (size_t i = 0; i < g.numel(); ++i) g.v[i] += n.grad.v[i];
        }
    }

    std::vector<BnStat>& bn_stats() { return bn_stats_; }

    const std::vector<Id>& parents(Id id) const { return nodes_[id].parents; }

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor val;
        const Tensor* external = nullptr;
        Tensor grad;
        bool needs_grad = false;
        std::vector<Id> parents;
        std::function<void(Tape&, Id)> backward;
        Param* source_param = nullptr;
    };

    Id push(Tensor t, bool needs_grad) {
        Node n;
        n.val = std::move(t);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size()) - 1;
    }

    std::vector<Node> nodes_;
    std::unordered_map<Param*, Id> param_ids_;
    std::vector<BnStat> bn_stats_;
    bool grad_enabled_ = true;
};

using Id = Tape::Id;

}  // namespace headsup::nn
