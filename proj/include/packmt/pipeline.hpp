#pragma once

// Phase orchestration: multilingual training, base prune + retrain, per-pair
// adapt/prune/retrain, and the full-finetune baseline. Every phase trains a
// masked working copy and writes back only the elements it owns, so weights
// outside a phase's trainable set are bitwise untouched. Every phase draws
// from RNG streams named after the phase, which makes an interrupted run
// resumable from its last checkpoint with identical results.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "packmt/checkpoint.hpp"
#include "packmt/corpus.hpp"
#include "packmt/model.hpp"
#include "packmt/optim.hpp"
#include "packmt/packing.hpp"

namespace packmt {

enum class PhaseKind {
    multilingual_train,
    base_prune_retrain,
    pair_adapt,
    pair_prune_retrain,
    full_finetune_baseline,
};

struct Phase {
    PhaseKind kind = PhaseKind::multilingual_train;
    std::int32_t pair = 0;     // pair ID for pair-scoped phases
    std::int64_t epochs = 0;
    double prune_ratio = 0.0;  // used by the prune phases
    bool reset_lr = true;      // every phase restarts the schedule

    bool operator==(const Phase&) const = default;
};

struct PhasePlan {
    std::vector<Phase> phases;

    // The structural rules of the method: one multilingual run, one base
    // prune after it, and per-pair adapt immediately answered by that pair's
    // prune+retrain, with no pair repeated.
    void validate(std::int32_t num_pairs) const {
        std::int64_t multilingual_at = -1, base_at = -1;
        std::vector<std::int32_t> adapted;
        std::map<std::int32_t, bool> retrained;
        for (std::size_t i = 0; i < phases.size(); ++i) {
            const Phase& p = phases[i];
            switch (p.kind) {
                case PhaseKind::multilingual_train:
                    if (multilingual_at >= 0) throw ConfigError("plan: multilingual_train listed twice");
                    multilingual_at = static_cast<std::int64_t>(i);
                    break;
                case PhaseKind::base_prune_retrain:
                    if (base_at >= 0) throw ConfigError("plan: base_prune_retrain listed twice");
                    if (multilingual_at < 0) throw ConfigError("plan: base_prune_retrain before multilingual_train");
                    base_at = static_cast<std::int64_t>(i);
                    break;
                case PhaseKind::pair_adapt:
                    if (base_at < 0) throw ConfigError("plan: pair_adapt before base_prune_retrain");
                    if (p.pair < 1 || p.pair > num_pairs)
                        throw ConfigError("plan: unknown pair " + std::to_string(p.pair));
                    for (std::int32_t a : adapted)
                        if (a == p.pair) throw ConfigError("plan: pair " + std::to_string(p.pair) + " adapted twice");
                    adapted.push_back(p.pair);
                    retrained[p.pair] = false;
                    break;
                case PhaseKind::pair_prune_retrain:
                    if (!retrained.count(p.pair) || retrained[p.pair])
                        throw ConfigError("plan: prune_retrain for pair " + std::to_string(p.pair) +
                                          " without a preceding adapt");
                    retrained[p.pair] = true;
                    break;
                case PhaseKind::full_finetune_baseline:
                    if (p.pair < 1 || p.pair > num_pairs)
                        throw ConfigError("plan: unknown pair " + std::to_string(p.pair));
                    break;
            }
        }
        if (multilingual_at < 0) throw ConfigError("plan: missing multilingual_train");
        if (base_at < 0) throw ConfigError("plan: missing base_prune_retrain");
        for (const auto& [pair, done] : retrained)
            if (!done) throw ConfigError("plan: pair " + std::to_string(pair) + " adapted but never prune-retrained");
    }

    // The method's standard schedule over an explicit adaptation order.
    static PhasePlan standard(const std::vector<std::int32_t>& order, std::int64_t multilingual_epochs,
                              double r1, std::int64_t base_retrain_epochs, std::int64_t adapt_epochs,
                              const std::vector<double>& pair_ratios, std::int64_t pair_retrain_epochs) {
        if (pair_ratios.size() != order.size())
            throw ConfigError("plan: need one prune ratio per adapted pair");
        PhasePlan plan;
        plan.phases.push_back({PhaseKind::multilingual_train, 0, multilingual_epochs, 0.0, true});
        plan.phases.push_back({PhaseKind::base_prune_retrain, 0, base_retrain_epochs, r1, true});
        for (std::size_t i = 0; i < order.size(); ++i) {
            plan.phases.push_back({PhaseKind::pair_adapt, order[i], adapt_epochs, 0.0, true});
            plan.phases.push_back(
                {PhaseKind::pair_prune_retrain, order[i], pair_retrain_epochs, pair_ratios[i], true});
        }
        return plan;
    }
};

struct TrainSettings {
    LrSchedule schedule;             // restarted at every phase boundary
    std::int64_t max_tokens = 1024;  // padded token budget per batch
    double temperature = 5.0;        // pair sampling temperature
    std::uint64_t seed = 0;          // global seed; phases derive named streams

    void validate() const {
        if (schedule.lr_max <= 0.0) throw ConfigError("train: lr_max must be positive");
        if (schedule.warmup_steps < 1) throw ConfigError("train: warmup_steps must be positive");
        if (max_tokens < 1) throw ConfigError("train: max_tokens must be positive");
        if (temperature <= 0.0) throw ConfigError("train: temperature must be positive");
    }
};

struct PhaseOutcome {
    std::int64_t steps = 0;
    double final_loss = 0.0;  // token-weighted mean training loss, last epoch
};

namespace detail {

// Trainability gates for one phase: per-prunable-tensor byte masks plus one
// flag covering every non-prunable tensor.
struct TrainGates {
    std::map<std::string, std::vector<std::uint8_t>> prunable;  // empty map = everything trainable
    bool nonprunable = true;
    bool gated = false;  // false before any mask exists

    static TrainGates open() { return TrainGates{}; }

    static TrainGates owners(const OwnershipMask& mask, const ActiveSet& trainable, bool train_nonprunable) {
        TrainGates g;
        g.gated = true;
        g.nonprunable = train_nonprunable;
        for (const auto& e : mask.entries()) g.prunable[e.name] = trainable_bytes(mask, e.name, trainable);
        return g;
    }
};

// One optimizer step over a working store. All tensors pass through the
// optimizer every step (the frozen ones behind all-zero gates) so per-tensor
// Adam state stays in lockstep.
template <typename T>
double train_step(ParamStore<T>& working, const ModelConfig& cfg, const TokenBatch& batch, Adam<T>& opt,
                  const TrainGates& gates, rng::Stream& drop, std::int64_t& scored_tokens) {
    Tape<T> tape;
    BoundModel<T> model(tape, working, cfg);
    const int loss_id = model.loss(batch, VocabLayout::pad, /*train=*/true, &drop);
    const double loss = static_cast<double>(tape.value(loss_id).data[0]);
    auto grads = tape.grad(loss_id);

    scored_tokens = 0;
    for (std::int32_t t : batch.tgt_out)
        if (t != VocabLayout::pad) ++scored_tokens;

    static const std::vector<std::uint8_t> kNoBytes;
    opt.begin_step();
    for (auto& e : working.entries()) {
        const std::uint8_t* gate = nullptr;
        std::vector<std::uint8_t> frozen;
        if (gates.gated) {
            if (e.prunable) {
                const auto it = gates.prunable.find(e.name);
                if (it == gates.prunable.end())
                    throw ContractViolation("train: no gate for prunable tensor '" + e.name + "'");
                gate = it->second.data();
            } else if (!gates.nonprunable) {
                frozen.assign(e.tensor.data.size(), 0);
                gate = frozen.data();
            }
        }
        opt.update(e.name, e.tensor, grads.at(e.name), gate);
    }
    return loss;
}

}  // namespace detail

// Trains `working` in place for `epochs` epochs over the given pairs. One
// epoch is one pass worth of directed sentences: 2 x the summed train-split
// sizes (both directions of every listed pair).
template <typename T>
PhaseOutcome run_training(ParamStore<T>& working, const ModelConfig& cfg, const Corpus& corpus,
                          const std::vector<std::int32_t>& pair_ids, std::int64_t epochs,
                          const TrainSettings& settings, const std::string& phase_tag,
                          const detail::TrainGates& gates) {
    settings.validate();
    if (pair_ids.empty()) throw ContractViolation("train: no pairs given");
    PhaseOutcome out;
    if (epochs <= 0) return out;

    std::int64_t epoch_sentences = 0;
    for (std::int32_t k : pair_ids)
        epoch_sentences += 2 * static_cast<std::int64_t>(corpus.pair(k).train.size());

    auto drop = rng::stream(settings.seed, phase_tag + ".drop");
    BatchStream batches(corpus, pair_ids, Split::train, settings.temperature, settings.max_tokens,
                        rng::stream(settings.seed, phase_tag + ".batch"));
    Adam<T> opt(settings.schedule);

    for (std::int64_t epoch = 1; epoch <= epochs; ++epoch) {
        std::int64_t sentences = 0;
        double loss_sum = 0.0;
        std::int64_t token_sum = 0;
        while (sentences < epoch_sentences) {
            const TokenBatch batch = batches.next();
            std::int64_t scored = 0;
            const double loss = detail::train_step(working, cfg, batch, opt, gates, drop, scored);
            sentences += batches.last_sentences();
            if (epoch == epochs) {
                loss_sum += loss * static_cast<double>(scored);
                token_sum += scored;
            }
        }
        if (epoch == epochs && token_sum > 0) out.final_loss = loss_sum / static_cast<double>(token_sum);
    }
    out.steps = opt.steps_taken();
    return out;
}

// Phase 1: train everything on all pairs. No ownership exists yet.
template <typename T>
PhaseOutcome train_multilingual(ParamStore<T>& params, const ModelConfig& cfg, const Corpus& corpus,
                                std::int64_t epochs, const TrainSettings& settings) {
    std::vector<std::int32_t> all_pairs;
    for (std::int32_t k = 1; k <= corpus.num_pairs(); ++k) all_pairs.push_back(k);
    return run_training(params, cfg, corpus, all_pairs, epochs, settings, "phase.multilingual",
                        detail::TrainGates::open());
}

// Copies trainable elements of `from` back into the master store: prunable
// elements whose owner is in `owners`, plus whole non-prunable tensors when
// `include_nonprunable` is set. Everything else in the master is untouched.
template <typename T>
void write_back(ParamStore<T>& master, const ParamStore<T>& from, const OwnershipMask& mask, const ActiveSet& owners,
                bool include_nonprunable) {
    for (auto& e : master.entries()) {
        const Tensor<T>& src = from.at(e.name);
        if (src.shape != e.tensor.shape) throw ContractViolation("write_back: shape mismatch for '" + e.name + "'");
        Tensor<T>& dst = e.tensor;
        if (e.prunable) {
            const auto& o = mask.at(e.name);
            for (std::size_t i = 0; i < o.size(); ++i)
                if (owners.contains(o[i])) dst.data[i] = src.data[i];
        } else if (include_nonprunable) {
            dst.data = src.data;
        }
    }
}

// Phase 2: magnitude-prune every prunable tensor at ratio r1 (pruned
// elements become owner 0 and are zeroed), then retrain the surviving
// owner-1 elements together with the non-prunables, which freeze afterwards.
template <typename T>
std::pair<PhaseOutcome, OwnershipMask> base_prune_retrain(ParamStore<T>& params, const ModelConfig& cfg,
                                                          const Corpus& corpus, double r1,
                                                          std::int64_t retrain_epochs,
                                                          const TrainSettings& settings) {
    if (r1 < 0.0 || r1 >= 1.0) throw ContractViolation("base prune: ratio must be in [0, 1)");
    OwnershipMask mask = OwnershipMask::all_owned_by(params, 1);
    for (auto& me : mask.entries()) {
        Tensor<T>& tensor = params.at(me.name);
        std::vector<std::int64_t> all(tensor.data.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::int64_t>(i);
        for (std::int64_t idx : magnitude_prune(tensor, all, r1)) {
            me.owners[static_cast<std::size_t>(idx)] = 0;
            tensor.data[static_cast<std::size_t>(idx)] = T(0);
        }
    }

    ParamStore<T> working = masked_view(params, mask, ActiveSet{1});
    const PhaseOutcome outcome =
        [&] {
            std::vector<std::int32_t> all_pairs;
            for (std::int32_t k = 1; k <= corpus.num_pairs(); ++k) all_pairs.push_back(k);
            return run_training(working, cfg, corpus, all_pairs, retrain_epochs, settings, "phase.base_retrain",
                                detail::TrainGates::owners(mask, ActiveSet{1}, /*train_nonprunable=*/true));
        }();
    write_back(params, working, mask, ActiveSet{1}, /*include_nonprunable=*/true);
    return {outcome, std::move(mask)};
}

struct AdaptOutcome {
    PhaseOutcome stage_a;  // free-parameter training
    PhaseOutcome stage_b;  // post-prune retraining of the claimed owner
    std::int64_t claimed_elements = 0;
};

// Phase 3 (per pair k): stage A trains the free parameters (owner 0) with
// every trained owner visible in the forward pass; the trained free weights
// are magnitude-pruned at r2 and the survivors claim owner k+1; stage B
// retrains only owner k+1 through the inference view. Weights owned by
// 1..k and all non-prunables are bitwise untouched.
template <typename T>
AdaptOutcome adapt_pair(ParamStore<T>& params, OwnershipMask& mask, const ModelConfig& cfg, const Corpus& corpus,
                        std::int32_t pair, std::int64_t adapt_epochs, double r2, std::int64_t retrain_epochs,
                        const TrainSettings& settings) {
    if (pair < 1 || pair > corpus.num_pairs())
        throw ContractViolation("adapt: unknown pair " + std::to_string(pair));
    const std::uint8_t new_owner = static_cast<std::uint8_t>(pair + 1);
    if (mask.has_owner(new_owner))
        throw ContractViolation("adapt: owner " + std::to_string(new_owner) + " already assigned");

    IndexSets free;
    std::int64_t free_total = 0;
    for (const auto& me : mask.entries()) {
        auto idx = mask.indices_with_owner(me.name, 0);
        free_total += static_cast<std::int64_t>(idx.size());
        free[me.name] = std::move(idx);
    }
    if (free_total == 0) throw CapacityError("adapt: no free parameters left for pair " + std::to_string(pair));

    const std::string tag = "phase.adapt" + std::to_string(pair);

    // Stage A. Free weights are re-initialized with small random values:
    // they were zeroed by pruning, and an all-zero slice cannot break
    // symmetry under gradient descent. The scale is kept well below the
    // model's init scale on purpose — the free slice cuts across every
    // prunable tensor, and louder noise there measurably damages the trained
    // function, a hole the shortest pair phases don't have the steps to
    // climb out of.
    ParamStore<T> working = masked_view(params, mask, ActiveSet::training_stage_a(pair));
    {
        auto reinit = rng::stream(settings.seed, tag + ".reinit");
        for (const auto& me : mask.entries()) {
            Tensor<T>& tensor = working.at(me.name);
            for (std::int64_t idx : free.at(me.name))
                tensor.data[static_cast<std::size_t>(idx)] = static_cast<T>(reinit.normal(0.0, 0.002));
        }
    }
    AdaptOutcome out;
    out.stage_a = run_training(working, cfg, corpus, {pair}, adapt_epochs, settings, tag + ".A",
                               detail::TrainGates::owners(mask, ActiveSet{0}, /*train_nonprunable=*/false));

    // Prune the trained free weights and hand the survivors to owner k+1.
    IndexSets pruned;
    for (const auto& me : mask.entries())
        pruned[me.name] = magnitude_prune(working.at(me.name), free.at(me.name), r2);
    claim_survivors(mask, free, pruned, new_owner);

    // Master picks up the surviving trained weights; the pruned leftovers
    // stay owner 0 and exactly zero.
    write_back(params, working, mask, ActiveSet{new_owner}, /*include_nonprunable=*/false);
    for (const auto& me : mask.entries()) {
        Tensor<T>& tensor = params.at(me.name);
        for (std::int64_t idx : pruned.at(me.name)) tensor.data[static_cast<std::size_t>(idx)] = T(0);
        out.claimed_elements += static_cast<std::int64_t>(mask.indices_with_owner(me.name, new_owner).size());
    }

    // Stage B: retrain the claimed owner through the inference view, with the
    // lr schedule reset again just as it was for stage A.
    ParamStore<T> working_b = masked_view(params, mask, ActiveSet::inference(pair));
    out.stage_b = run_training(working_b, cfg, corpus, {pair}, retrain_epochs, settings, tag + ".B",
                               detail::TrainGates::owners(mask, ActiveSet{new_owner}, /*train_nonprunable=*/false));
    write_back(params, working_b, mask, ActiveSet{new_owner}, /*include_nonprunable=*/false);
    return out;
}

// Runs adapt_pair over an explicit order. `on_pair_done(k)` fires after each
// pair completes, with the master state already final for that pair; callers
// hook checkpointing and probe snapshots there.
template <typename T, typename Callback>
std::vector<AdaptOutcome> adapt_sequence(ParamStore<T>& params, OwnershipMask& mask, const ModelConfig& cfg,
                                         const Corpus& corpus, const std::vector<std::int32_t>& order,
                                         std::int64_t adapt_epochs, const std::vector<double>& ratios,
                                         std::int64_t retrain_epochs, const TrainSettings& settings,
                                         Callback&& on_pair_done) {
    if (ratios.size() != order.size()) throw ContractViolation("adapt: need one prune ratio per pair");
    std::vector<AdaptOutcome> outcomes;
    for (std::size_t i = 0; i < order.size(); ++i) {
        outcomes.push_back(
            adapt_pair(params, mask, cfg, corpus, order[i], adapt_epochs, ratios[i], retrain_epochs, settings));
        on_pair_done(order[i]);
    }
    return outcomes;
}

// Baseline: fine-tune every parameter of a parent copy on one pair.
template <typename T>
std::pair<PhaseOutcome, ParamStore<T>> full_finetune_baseline(const ParamStore<T>& parent, const ModelConfig& cfg,
                                                              const Corpus& corpus, std::int32_t pair,
                                                              std::int64_t epochs, const TrainSettings& settings) {
    ParamStore<T> tuned = parent;
    const PhaseOutcome outcome = run_training(tuned, cfg, corpus, {pair}, epochs, settings,
                                              "phase.fullft" + std::to_string(pair), detail::TrainGates::open());
    return {outcome, std::move(tuned)};
}

}  // namespace packmt
