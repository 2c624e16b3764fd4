#pragma once

// Ownership masks over prunable weights: one-shot magnitude pruning, claim
// bookkeeping, active-set forward views, gradient gating, and capacity
// accounting. Owner values: 0 = free, 1 = shared multilingual, k+1 = owned
// by bilingual pair k.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "packmt/model.hpp"
#include "packmt/tensor.hpp"

namespace packmt {

// Set of owner IDs enabled for a forward pass or trainable in a phase.
class ActiveSet {
  public:
    ActiveSet() = default;
    ActiveSet(std::initializer_list<int> owners) {
        for (int v : owners) add(v);
    }

    void add(int owner) {
        if (owner < 0 || owner > 255) throw ContractViolation("ActiveSet: owner id out of range");
        on_[static_cast<std::size_t>(owner)] = true;
        empty_ = false;
    }

    bool contains(std::uint8_t owner) const { return on_[owner]; }
    bool empty() const { return empty_; }

    // Training stage A for pair k: free weights plus everything already
    // trained, {0, 1, ..., k}.
    static ActiveSet training_stage_a(int pair_k) {
        ActiveSet s;
        for (int v = 0; v <= pair_k; ++v) s.add(v);
        return s;
    }

    // Inference for pair t uses {1, ..., t+1}; stage B for pair k is the
    // same set with t = k.
    static ActiveSet inference(int pair_t) {
        ActiveSet s;
        for (int v = 1; v <= pair_t + 1; ++v) s.add(v);
        return s;
    }

    static ActiveSet zero_shot() { return ActiveSet{1}; }

  private:
    std::array<bool, 256> on_{};
    bool empty_ = true;
};

// Per-element owner IDs for every prunable tensor, stored in the parameter
// store's entry order.
class OwnershipMask {
  public:
    struct Entry {
        std::string name;
        std::vector<std::uint8_t> owners;
    };

    OwnershipMask() = default;

    template <typename T>
    static OwnershipMask all_owned_by(const ParamStore<T>& params, std::uint8_t owner) {
        OwnershipMask m;
        for (const auto& e : params.entries())
            if (e.prunable) m.add(e.name, std::vector<std::uint8_t>(e.tensor.data.size(), owner));
        return m;
    }

    void add(std::string name, std::vector<std::uint8_t> owners) {
        if (index_.count(name)) throw ContractViolation("OwnershipMask: duplicate tensor '" + name + "'");
        index_[name] = entries_.size();
        entries_.push_back(Entry{std::move(name), std::move(owners)});
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<std::uint8_t>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractViolation("OwnershipMask: no tensor '" + name + "'");
        return entries_[it->second].owners;
    }

    const std::vector<std::uint8_t>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractViolation("OwnershipMask: no tensor '" + name + "'");
        return entries_[it->second].owners;
    }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

    bool has_owner(std::uint8_t owner) const {
        for (const auto& e : entries_)
            for (std::uint8_t v : e.owners)
                if (v == owner) return true;
        return false;
    }

    std::vector<std::int64_t> indices_with_owner(const std::string& name, std::uint8_t owner) const {
        const auto& owners = at(name);
        std::vector<std::int64_t> idx;
        for (std::size_t i = 0; i < owners.size(); ++i)
            if (owners[i] == owner) idx.push_back(static_cast<std::int64_t>(i));
        return idx;
    }

  private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

// Indices of the floor(ratio * |candidates|) smallest-magnitude elements
// among the candidates; ties broken by lower flat index. The caller zeroes
// the returned positions.
template <typename T>
std::vector<std::int64_t> magnitude_prune(const Tensor<T>& tensor, const std::vector<std::int64_t>& candidates,
                                          double ratio) {
    if (ratio < 0.0 || ratio > 1.0) throw ContractViolation("magnitude_prune: ratio must be in [0,1]");
    if (ratio > 0.0 && candidates.empty())
        throw ContractViolation("magnitude_prune: no candidates for '" + tensor.name + "'");
    for (std::int64_t i : candidates)
        if (i < 0 || i >= tensor.numel())
            throw ContractViolation("magnitude_prune: candidate index out of range");
    const auto count = static_cast<std::size_t>(ratio * static_cast<double>(candidates.size()));
    if (count == 0) return {};
    std::vector<std::int64_t> order = candidates;
    std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        const double ma = std::abs(static_cast<double>(tensor[a]));
        const double mb = std::abs(static_cast<double>(tensor[b]));
        return ma != mb ? ma < mb : a < b;
    });
    order.resize(count);
    std::sort(order.begin(), order.end());
    return order;
}

namespace detail {

inline bool is_subset_of_sorted(const std::vector<std::int64_t>& sub, const std::vector<std::int64_t>& super) {
    return std::includes(super.begin(), super.end(), sub.begin(), sub.end());
}

}  // namespace detail

// Per tensor name, a sorted set of flat element indices.
using IndexSets = std::map<std::string, std::vector<std::int64_t>>;

// Assigns new_owner to every trained-free element that survived pruning;
// pruned elements stay owner 0. Owner values 1..k are never rewritten.
inline void claim_survivors(OwnershipMask& mask, const IndexSets& trained_free, const IndexSets& pruned,
                            std::uint8_t new_owner) {
    if (new_owner < 2) throw ContractViolation("claim_survivors: pair owners start at 2");
    if (mask.has_owner(new_owner))
        throw ContractViolation("claim_survivors: owner " + std::to_string(new_owner) + " already present");
    for (const auto& [name, free_idx] : trained_free) {
        auto& owners = mask.at(name);
        for (std::int64_t i : free_idx)
            if (owners[static_cast<std::size_t>(i)] != 0)
                throw ContractViolation("claim_survivors: trained_free overlaps an owned element in '" + name + "'");
        const auto it = pruned.find(name);
        static const std::vector<std::int64_t> kNone;
        const auto& pruned_idx = it == pruned.end() ? kNone : it->second;
        if (!detail::is_subset_of_sorted(pruned_idx, free_idx))
            throw ContractViolation("claim_survivors: pruned set is not a subset of trained_free in '" + name + "'");
        std::size_t p = 0;
        for (std::int64_t i : free_idx) {
            if (p < pruned_idx.size() && pruned_idx[p] == i) {
                ++p;  // stays free
                continue;
            }
            owners[static_cast<std::size_t>(i)] = new_owner;
        }
    }
}

// Effective parameters for a forward pass: prunable weights keep their value
// where the owner is active and read 0 elsewhere; non-prunable parameters
// pass through unmodified.
template <typename T>
ParamStore<T> masked_view(const ParamStore<T>& params, const OwnershipMask& mask, const ActiveSet& active) {
    if (active.empty()) throw ContractViolation("masked_view: active set must be non-empty");
    ParamStore<T> out;
    for (const auto& e : params.entries()) {
        Tensor<T> t = e.tensor;
        if (e.prunable) {
            const auto& owners = mask.at(e.name);
            if (owners.size() != t.data.size())
                throw ContractViolation("masked_view: mask shape mismatch for '" + e.name + "'");
            for (std::size_t i = 0; i < owners.size(); ++i)
                if (!active.contains(owners[i])) t.data[i] = T(0);
        }
        out.add(e.name, std::move(t));
    }
    return out;
}

// Zeroes every gradient element whose owner is not trainable; non-prunable
// parameter gradients are zeroed wholesale unless include_nonprunable.
template <typename T>
void gradient_gate(std::map<std::string, Tensor<T>>& grads, const OwnershipMask& mask, const ActiveSet& trainable,
                   bool include_nonprunable) {
    for (auto& [name, g] : grads) {
        if (mask.has(name)) {
            const auto& owners = mask.at(name);
            if (owners.size() != g.data.size())
                throw ContractViolation("gradient_gate: mask shape mismatch for '" + name + "'");
            for (std::size_t i = 0; i < owners.size(); ++i)
                if (!trainable.contains(owners[i])) g.data[i] = T(0);
        } else if (!include_nonprunable) {
            for (auto& v : g.data) v = T(0);
        }
    }
}

// Per-element trainability bytes for the optimizer, mirroring gradient_gate
// for one prunable tensor.
inline std::vector<std::uint8_t> trainable_bytes(const OwnershipMask& mask, const std::string& name,
                                                 const ActiveSet& trainable) {
    const auto& owners = mask.at(name);
    std::vector<std::uint8_t> out(owners.size());
    for (std::size_t i = 0; i < owners.size(); ++i) out[i] = trainable.contains(owners[i]) ? 1 : 0;
    return out;
}

// Fraction of the prunable total that pair k ends up owning when every pair
// trains on the remaining free pool and keeps the unpruned share:
// F * (1 - r2) * r2^(k-1).
inline double capacity_schedule(double free_fraction, double second_ratio, int k) {
    if (free_fraction <= 0.0 || free_fraction > 1.0)
        throw ContractViolation("capacity_schedule: free fraction must be in (0,1]");
    if (second_ratio < 0.0 || second_ratio >= 1.0)
        throw ContractViolation("capacity_schedule: second ratio must be in [0,1)");
    if (k < 1) throw ContractViolation("capacity_schedule: pair index starts at 1");
    double pool = free_fraction;
    for (int i = 1; i < k; ++i) pool *= second_ratio;
    return pool * (1.0 - second_ratio);
}

// Per-pair prune ratios that give each of M pairs exactly F/M of the
// prunable total: pair k trains on F - (k-1) * F/M and keeps F/M, so
// r_k = 1 - 1/(M - k + 1); the last ratio is 0.
inline std::vector<double> equal_share_ratios(double free_fraction, int num_pairs) {
    if (free_fraction <= 0.0 || free_fraction > 1.0)
        throw ContractViolation("equal_share_ratios: free fraction must be in (0,1]");
    if (num_pairs < 1) throw ContractViolation("equal_share_ratios: need at least one pair");
    std::vector<double> ratios;
    for (int k = 1; k <= num_pairs; ++k) ratios.push_back(1.0 - 1.0 / static_cast<double>(num_pairs - k + 1));
    return ratios;
}

// Element counts and fractions of the prunable total per owner, plus the
// per-tensor breakdown used by the ledger checks.
struct CapacityReport {
    std::int64_t prunable_total = 0;
    std::map<int, std::int64_t> owner_counts;
    std::map<int, double> owner_fractions;
    std::map<std::string, std::map<int, std::int64_t>> per_tensor;
};

inline CapacityReport capacity_report(const OwnershipMask& mask) {
    CapacityReport r;
    for (const auto& e : mask.entries()) {
        auto& rows = r.per_tensor[e.name];
        for (std::uint8_t v : e.owners) {
            ++rows[v];
            ++r.owner_counts[v];
            ++r.prunable_total;
        }
    }
    for (const auto& [owner, n] : r.owner_counts)
        r.owner_fractions[owner] = static_cast<double>(n) / static_cast<double>(r.prunable_total);
    return r;
}

}  // namespace packmt
