// Packing tests: magnitude pruning against a full-sort oracle, claim
// bookkeeping, masked views, gradient gating, and the capacity formulas.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "packmt/packing.hpp"

using packmt::ActiveSet;
using packmt::IndexSets;
using packmt::OwnershipMask;
using packmt::ParamStore;
using packmt::Tensor;

namespace {

std::vector<std::int64_t> all_indices(std::int64_t n) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    return idx;
}

// Independent oracle: stable full sort of candidates by (|w|, flat index),
// then the first floor(ratio*n) entries.
std::vector<std::int64_t> sort_oracle(const Tensor<float>& t, const std::vector<std::int64_t>& candidates,
                                      double ratio) {
    std::vector<std::pair<double, std::int64_t>> keyed;
    for (std::int64_t i : candidates) keyed.emplace_back(std::abs(static_cast<double>(t[i])), i);
    std::sort(keyed.begin(), keyed.end());
    const auto count = static_cast<std::size_t>(ratio * static_cast<double>(candidates.size()));
    std::vector<std::int64_t> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(keyed[i].second);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST_CASE("magnitude_prune pinned examples") {
    const Tensor<float> t({4}, {0.3f, -0.1f, 0.5f, 0.05f});
    CHECK(packmt::magnitude_prune(t, all_indices(4), 0.5) == std::vector<std::int64_t>{1, 3});
    CHECK(packmt::magnitude_prune(t, all_indices(4), 0.0).empty());
    CHECK(packmt::magnitude_prune(t, all_indices(4), 1.0) == std::vector<std::int64_t>{0, 1, 2, 3});
    CHECK_THROWS_AS(packmt::magnitude_prune(t, all_indices(4), -0.1), packmt::ContractViolation);
    CHECK_THROWS_AS(packmt::magnitude_prune(t, all_indices(4), 1.1), packmt::ContractViolation);
    CHECK_THROWS_AS(packmt::magnitude_prune(t, {}, 0.5), packmt::ContractViolation);
    CHECK_THROWS_AS(packmt::magnitude_prune(t, {4}, 0.5), packmt::ContractViolation);
    CHECK(packmt::magnitude_prune(t, {}, 0.0).empty());  // ratio 0 tolerates empty candidates
}

TEST_CASE("magnitude_prune breaks magnitude ties by lower index") {
    const Tensor<float> t({6}, {0.2f, -0.2f, 0.2f, 0.1f, -0.1f, 0.3f});
    // |w|: 0.2 0.2 0.2 0.1 0.1 0.3 -> order 3,4,0,1,2,5
    CHECK(packmt::magnitude_prune(t, all_indices(6), 0.5) == std::vector<std::int64_t>{0, 3, 4});
    CHECK(packmt::magnitude_prune(t, all_indices(6), 5.0 / 6.0) == std::vector<std::int64_t>{0, 1, 2, 3, 4});
}

TEST_CASE("magnitude_prune equals the sort oracle on 1000 random tensors") {
    auto rs = packmt::rng::stream(101, "prune.oracle");
    const double ratios[] = {0.0, 0.25, 0.5, 0.75, 0.99};
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = 1 + static_cast<std::int64_t>(rs.below(200));
        Tensor<float> t = Tensor<float>::zeros({n});
        // Draw from a coarse grid so magnitude ties actually occur.
        for (auto& v : t.data) {
            v = static_cast<float>(static_cast<double>(rs.below(41)) / 20.0 - 1.0);
        }
        // Candidates: either everything or a random subset.
        std::vector<std::int64_t> cand;
        if (rs.below(2) == 0) {
            cand = all_indices(n);
        } else {
            for (std::int64_t i = 0; i < n; ++i)
                if (rs.below(3) != 0) cand.push_back(i);
            if (cand.empty()) cand.push_back(0);
        }
        for (double r : ratios)
            if (packmt::magnitude_prune(t, cand, r) != sort_oracle(t, cand, r)) ++mismatches;
    }
    CHECK(mismatches == 0);
}

TEST_CASE("claim_survivors assigns exactly the survivors") {
    OwnershipMask mask;
    mask.add("w", std::vector<std::uint8_t>(8, 0));
    IndexSets trained_free{{"w", {0, 1, 2, 3, 4, 5, 6, 7}}};
    IndexSets pruned{{"w", {0, 1, 2, 4, 5, 6}}};
    packmt::claim_survivors(mask, trained_free, pruned, 2);
    const auto& owners = mask.at("w");
    CHECK(std::count(owners.begin(), owners.end(), 2) == 2);
    CHECK(owners[3] == 2);
    CHECK(owners[7] == 2);
    CHECK(owners[0] == 0);
}

TEST_CASE("claim_survivors degenerate and error cases") {
    OwnershipMask mask;
    mask.add("w", std::vector<std::uint8_t>{0, 0, 1, 1});
    // Pruning everything trained claims nothing.
    packmt::claim_survivors(mask, {{"w", {0, 1}}}, {{"w", {0, 1}}}, 2);
    CHECK_FALSE(mask.has_owner(2));

    // trained_free overlapping an owned element is rejected.
    CHECK_THROWS_AS(packmt::claim_survivors(mask, {{"w", {1, 2}}}, {}, 2), packmt::ContractViolation);
    // pruned not a subset of trained_free is rejected.
    CHECK_THROWS_AS(packmt::claim_survivors(mask, {{"w", {0}}}, {{"w", {1}}}, 2), packmt::ContractViolation);

    packmt::claim_survivors(mask, {{"w", {0, 1}}}, {{"w", {0}}}, 2);
    CHECK(mask.at("w")[1] == 2);
    // Re-claiming an owner that already exists is rejected.
    CHECK_THROWS_AS(packmt::claim_survivors(mask, {{"w", {0}}}, {}, 2), packmt::ContractViolation);
    // Owners 0 and 1 are never valid new owners.
    CHECK_THROWS_AS(packmt::claim_survivors(mask, {{"w", {0}}}, {}, 1), packmt::ContractViolation);
}

TEST_CASE("masked_view zeroes inactive owners and passes non-prunables through") {
    ParamStore<float> params;
    params.add("enc.0.attn.wq", Tensor<float>({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f}));
    params.add("enc.0.attn.bq", Tensor<float>({2}, {5.0f, 6.0f}));
    OwnershipMask mask;
    mask.add("enc.0.attn.wq", {0, 1, 2, 3});

    const auto shared_only = packmt::masked_view(params, mask, ActiveSet::zero_shot());
    CHECK(shared_only.at("enc.0.attn.wq").data == std::vector<float>{0.0f, 2.0f, 0.0f, 0.0f});
    CHECK(shared_only.at("enc.0.attn.bq").data == std::vector<float>{5.0f, 6.0f});

    const auto pair1 = packmt::masked_view(params, mask, ActiveSet::inference(1));  // {1,2}
    CHECK(pair1.at("enc.0.attn.wq").data == std::vector<float>{0.0f, 2.0f, 3.0f, 0.0f});

    const auto stage_a = packmt::masked_view(params, mask, ActiveSet::training_stage_a(1));  // {0,1}
    CHECK(stage_a.at("enc.0.attn.wq").data == std::vector<float>{1.0f, 2.0f, 0.0f, 0.0f});

    const auto everything = packmt::masked_view(params, mask, ActiveSet{0, 1, 2, 3});
    CHECK(everything.at("enc.0.attn.wq").data == params.at("enc.0.attn.wq").data);

    CHECK_THROWS_AS(packmt::masked_view(params, mask, ActiveSet{}), packmt::ContractViolation);
}

TEST_CASE("gradient_gate zeroes non-trainable owners and non-prunables") {
    OwnershipMask mask;
    mask.add("out.proj", {0, 1, 2, 0});
    std::map<std::string, Tensor<float>> grads;
    grads["out.proj"] = Tensor<float>({4}, {1.0f, 1.0f, 1.0f, 1.0f});
    grads["embed"] = Tensor<float>({2}, {1.0f, 1.0f});

    auto g1 = grads;
    packmt::gradient_gate(g1, mask, ActiveSet{0}, /*include_nonprunable=*/false);
    CHECK(g1["out.proj"].data == std::vector<float>{1.0f, 0.0f, 0.0f, 1.0f});
    CHECK(g1["embed"].data == std::vector<float>{0.0f, 0.0f});

    auto g2 = grads;
    packmt::gradient_gate(g2, mask, ActiveSet{1}, /*include_nonprunable=*/true);
    CHECK(g2["out.proj"].data == std::vector<float>{0.0f, 1.0f, 0.0f, 0.0f});
    CHECK(g2["embed"].data == std::vector<float>{1.0f, 1.0f});

    auto g3 = grads;
    packmt::gradient_gate(g3, mask, ActiveSet{}, false);
    CHECK(g3["out.proj"].data == std::vector<float>(4, 0.0f));
    CHECK(g3["embed"].data == std::vector<float>(2, 0.0f));

    CHECK(packmt::trainable_bytes(mask, "out.proj", ActiveSet{0, 2}) ==
          std::vector<std::uint8_t>{1, 0, 1, 1});
}

TEST_CASE("capacity_schedule pinned values") {
    CHECK(packmt::capacity_schedule(0.5, 0.75, 1) == Catch::Approx(0.125).epsilon(1e-15));
    CHECK(packmt::capacity_schedule(0.5, 0.75, 2) == Catch::Approx(0.09375).epsilon(1e-15));
    CHECK(packmt::capacity_schedule(0.5, 0.75, 7) == Catch::Approx(0.0222).margin(5e-5));
    CHECK_THROWS_AS(packmt::capacity_schedule(0.0, 0.75, 1), packmt::ContractViolation);
    CHECK_THROWS_AS(packmt::capacity_schedule(0.5, 1.0, 1), packmt::ContractViolation);
    CHECK_THROWS_AS(packmt::capacity_schedule(0.5, 0.75, 0), packmt::ContractViolation);

    // The schedule telescopes: fractions plus the leftover pool equal F.
    double sum = 0.0;
    for (int k = 1; k <= 8; ++k) sum += packmt::capacity_schedule(0.5, 0.75, k);
    const double leftover = 0.5 * std::pow(0.75, 8);
    CHECK(sum + leftover == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("equal_share_ratios pinned values") {
    const auto r4 = packmt::equal_share_ratios(0.5, 4);
    REQUIRE(r4.size() == 4);
    CHECK(r4[0] == Catch::Approx(0.75).epsilon(1e-15));
    CHECK(r4[1] == Catch::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(r4[2] == Catch::Approx(0.5).epsilon(1e-15));
    CHECK(r4[3] == 0.0);

    CHECK(packmt::equal_share_ratios(0.5, 1) == std::vector<double>{0.0});
    const auto r2 = packmt::equal_share_ratios(0.5, 2);
    CHECK(r2[0] == Catch::Approx(0.5).epsilon(1e-15));
    CHECK(r2[1] == 0.0);

    // Simulating the claims: every pair ends up with exactly F/M of the pool.
    for (int m : {1, 2, 4, 8}) {
        const auto ratios = packmt::equal_share_ratios(0.5, m);
        double pool = 0.5;
        for (int k = 0; k < m; ++k) {
            const double kept = pool * (1.0 - ratios[static_cast<std::size_t>(k)]);
            CHECK(kept == Catch::Approx(0.5 / m).epsilon(1e-12));
            pool -= kept;
        }
        CHECK(pool == Catch::Approx(0.0).margin(1e-12));
    }
}

TEST_CASE("capacity_report counts and fractions are a partition") {
    OwnershipMask mask;
    mask.add("a", {0, 0, 1, 1, 1, 2});
    mask.add("b", {1, 2, 2, 0});
    const auto r = packmt::capacity_report(mask);
    CHECK(r.prunable_total == 10);
    CHECK(r.owner_counts.at(0) == 3);
    CHECK(r.owner_counts.at(1) == 4);
    CHECK(r.owner_counts.at(2) == 3);
    double total_fraction = 0.0;
    for (const auto& [owner, f] : r.owner_fractions) total_fraction += f;
    CHECK(total_fraction == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(r.per_tensor.at("a").at(1) == 3);
    CHECK(r.per_tensor.at("b").at(2) == 2);
}

TEST_CASE("active set helpers build the documented sets") {
    const auto a1 = ActiveSet::training_stage_a(1);
    CHECK(a1.contains(0));
    CHECK(a1.contains(1));
    CHECK_FALSE(a1.contains(2));

    const auto a3 = ActiveSet::training_stage_a(3);  // pair 3: {0,1,2,3}
    CHECK(a3.contains(3));
    CHECK_FALSE(a3.contains(4));

    const auto inf2 = ActiveSet::inference(2);  // {1,2,3}
    CHECK_FALSE(inf2.contains(0));
    CHECK(inf2.contains(1));
    CHECK(inf2.contains(3));
    CHECK_FALSE(inf2.contains(4));

    const auto zs = ActiveSet::zero_shot();
    CHECK(zs.contains(1));
    CHECK_FALSE(zs.contains(0));
    CHECK_FALSE(zs.contains(2));
}

TEST_CASE("ownership mask built from a param store covers exactly the prunables") {
    packmt::ModelConfig cfg;
    cfg.num_heads = 2;
    cfg.num_encoder_layers = 1;
    cfg.num_decoder_layers = 1;
    cfg.embed_dim = 8;
    cfg.ffn_dim = 16;
    cfg.vocab_size = 12;
    cfg.max_seq_len = 8;
    const auto params = packmt::init_params<float>(cfg, 3);
    const auto mask = OwnershipMask::all_owned_by(params, 1);
    const auto census = packmt::param_census(params);
    std::int64_t masked = 0;
    for (const auto& e : mask.entries()) {
        CHECK(packmt::prunable_by_name(e.name));
        masked += static_cast<std::int64_t>(e.owners.size());
    }
    CHECK(masked == census.prunable);
    CHECK(mask.has_owner(1));
    CHECK_FALSE(mask.has_owner(0));
}
