#pragma once

// Reverse-mode autodiff over a linear tape of primitive operations.
// Each recorded node keeps ids of its inputs and a closure that adds the
// node's adjoint contribution into the input adjoints. Node outputs are
// always fresh slots allocated after their inputs, so the tape is acyclic
// by construction and a single reverse sweep visits every node once.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "packmt/tensor.hpp"

namespace packmt {

template <typename T>
class Tape {
public:
    struct Node {
        const char* op;
        std::vector<int> inputs;
        int output;
        // Adds this node's adjoint contribution into its inputs' adjoints.
        std::function<void(Tape&, const Node&)> backward;
    };

    // When false, ops compute values but record no backward closures.
    bool recording = true;
    // When true, every completed op asserts its output is NaN/Inf free.
    bool verify_finite = false;

    int leaf(Tensor<T> value, std::string param_name = {}) {
        const int id = add_slot(std::move(value), /*wants_grad=*/true, std::move(param_name));
        if (!slots_[static_cast<std::size_t>(id)].name.empty()) param_ids_.push_back(id);
        return id;
    }

    // Non-differentiable input (token masks, positional tables, ...).
    int constant(Tensor<T> value) { return add_slot(std::move(value), /*wants_grad=*/false, {}); }

    int push(const char* op, std::vector<int> inputs, Tensor<T> out_value,
             std::function<void(Tape&, const Node&)> backward) {
        bool wants = false;
        for (int in : inputs) {
            if (in < 0 || in >= static_cast<int>(slots_.size()))
                throw ContractViolation(std::string("tape: op '") + op + "' references slot outside the tape");
            wants = wants || slots_[static_cast<std::size_t>(in)].wants_grad;
        }
        if (verify_finite && !out_value.all_finite())
            throw ContractViolation(std::string("tape: op '") + op + "' produced a non-finite value");
        const int out = add_slot(std::move(out_value), wants, {});
        if (recording && wants)
            nodes_.push_back(Node{op, std::move(inputs), out, std::move(backward)});
        return out;
    }

    const Tensor<T>& value(int id) const { return slots_[static_cast<std::size_t>(id)].value; }
    Tensor<T>& mutable_value(int id) { return slots_[static_cast<std::size_t>(id)].value; }

    bool wants_grad(int id) const { return slots_[static_cast<std::size_t>(id)].wants_grad; }

    // Adjoint accumulation buffer for a slot; allocated on first touch.
    Tensor<T>& adjoint(int id) {
        auto& s = slots_[static_cast<std::size_t>(id)];
        if (s.adj.numel() == 0) s.adj = Tensor<T>::zeros(s.value.shape);
        return s.adj;
    }

    bool has_adjoint(int id) const { return slots_[static_cast<std::size_t>(id)].adj.numel() != 0; }

    // Gradients of a scalar loss w.r.t. every named leaf. Named leaves that
    // never fed the loss get all-zero gradients.
    std::map<std::string, Tensor<T>> grad(int loss_id) {
        if (loss_id < 0 || loss_id >= static_cast<int>(slots_.size()))
            throw ContractViolation("backprop: loss slot is not on this tape");
        if (value(loss_id).numel() != 1)
            throw ContractViolation("backprop: loss must be a scalar, got shape " + shape_str(value(loss_id).shape));
        adjoint(loss_id)[0] = T(1);
        last_replay_visits_ = 0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            ++last_replay_visits_;
            if (!has_adjoint(it->output)) continue;  // node did not feed the loss
            it->backward(*this, *it);
        }
        std::map<std::string, Tensor<T>> grads;
        for (int id : param_ids_) {
            auto& s = slots_[static_cast<std::size_t>(id)];
            grads[s.name] = has_adjoint(id) ? s.adj : Tensor<T>::zeros(s.value.shape);
        }
        return grads;
    }

    std::size_t num_nodes() const { return nodes_.size(); }
    std::size_t num_slots() const { return slots_.size(); }
    std::size_t last_replay_visits() const { return last_replay_visits_; }

    const std::vector<int>& param_ids() const { return param_ids_; }
    const std::string& param_name(int id) const { return slots_[static_cast<std::size_t>(id)].name; }

private:
    struct Slot {
        Tensor<T> value;
        Tensor<T> adj;
        bool wants_grad;
        std::string name;
    };

    int add_slot(Tensor<T> value, bool wants_grad, std::string name) {
        slots_.push_back(Slot{std::move(value), Tensor<T>{}, wants_grad, std::move(name)});
        return static_cast<int>(slots_.size()) - 1;
    }

    std::vector<Slot> slots_;
    std::vector<Node> nodes_;
    std::vector<int> param_ids_;
    std::size_t last_replay_visits_ = 0;
};

template <typename T>
std::map<std::string, Tensor<T>> backprop(Tape<T>& tape, int loss_id) {
    return tape.grad(loss_id);
}

// Central finite differences, the independent oracle for backprop.
// f must be evaluable at x +- eps in every coordinate.
template <typename T, typename F>
Tensor<T> finite_diff_grad(F&& f, const Tensor<T>& x, T eps) {
    Tensor<T> g = Tensor<T>::zeros(x.shape);
    Tensor<T> probe = x;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const T orig = probe[i];
        probe[i] = orig + eps;
        const T up = f(probe);
        probe[i] = orig - eps;
        const T down = f(probe);
        probe[i] = orig;
        g[i] = (up - down) / (T(2) * eps);
    }
    return g;
}

}  // namespace packmt
