#pragma once

// Round orchestration: selection, local training, off-chain submission with
// on-chain digests, validator cross-verification and majority vote over the
// aggregated model, per-round Shapley valuation, and block commit.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bdsp/data.hpp"
#include "bdsp/dataset.hpp"
#include "bdsp/errors.hpp"
#include "bdsp/ledger.hpp"
#include "bdsp/model.hpp"
#include "bdsp/parallel.hpp"
#include "bdsp/random.hpp"
#include "bdsp/selection.hpp"
#include "bdsp/valuation.hpp"

namespace bdsp {

enum class ValuationMode { off, exact, tmc };

struct ValuationConfig {
    ValuationMode mode = ValuationMode::exact;
    TmcOptions tmc;
};

struct FederationConfig {
    std::size_t num_orgs = 30;
    std::size_t rounds = 100;
    SelectionPolicy policy;
    TrainConfig train;
    std::vector<std::size_t> hidden_layers{16};
    double train_fraction = 0.8;
    PartitionMode partition = PartitionMode::iid;
    double skew = 0.0;
    std::optional<SmoteConfig> smote = SmoteConfig{};
    ValuationConfig valuation;
    std::optional<double> accuracy_target;
    std::size_t validators = 3;
    double accuracy_floor = 0.5;
    std::uint64_t master_seed = 0;
    std::size_t workers = 1;  // local-training threads; never changes results

    void validate() const {
        if (num_orgs == 0) throw InputError("num_orgs must be positive");
        if (rounds == 0) throw InputError("rounds must be positive");
        policy.validate(num_orgs);
        train.validate();
        if (accuracy_target && !(*accuracy_target >= 0.0 && *accuracy_target < 1.0))
            throw InputError("accuracy_target must lie in [0, 1)");
        if (policy.kind == SelectionKind::contribution && valuation.mode == ValuationMode::off)
            throw InputError("contribution-based selection needs valuation enabled");
        if (validators == 0 || validators % 2 == 0) throw InputError("validator count must be odd");
        for (std::size_t h : hidden_layers)
            if (h == 0) throw InputError("hidden layer widths must be positive");
    }

    std::vector<std::size_t> layer_dims(std::size_t input_width) const {
        std::vector<std::size_t> dims{input_width};
        dims.insert(dims.end(), hidden_layers.begin(), hidden_layers.end());
        dims.push_back(1);
        return dims;
    }
};

struct RoundReport {
    std::uint64_t round = 0;
    std::vector<OrgId> selected;
    std::vector<OrgId> trained;   // organizations that submitted a local update
    std::vector<OrgId> rejected;  // submissions a validator majority refused
    Metrics global_metrics;
    std::map<OrgId, Metrics> per_org_metrics;
    std::optional<ShapleyResult> shapley;
    std::uint64_t bytes_on_chain = 0;
    std::uint64_t bytes_off_chain = 0;
    bool retried = false;
    std::chrono::nanoseconds wall_time{0};

    /// Mean over organizations of the global model's accuracy on their own data.
    double org_accuracy() const {
        if (per_org_metrics.empty()) return 0.0;
        double s = 0.0;
        for (const auto& [org, m] : per_org_metrics) s += m.accuracy;
        return s / static_cast<double>(per_org_metrics.size());
    }
};

struct RunResult {
    std::vector<RoundReport> reports;
    Digest final_model_digest{};
    std::optional<std::size_t> rounds_to_threshold;
    std::map<OrgId, double> contributions;
    Chain chain;
};

/// A round failed twice; reports of the completed rounds are kept.
class RunAborted : public Error {
public:
    RunAborted(const std::string& what, std::vector<RoundReport> partial)
        : Error(what), partial_(std::move(partial)) {}
    const std::vector<RoundReport>& partial_reports() const noexcept { return partial_; }

private:
    std::vector<RoundReport> partial_;
};

/// Seed-derivation tags; each stream of randomness gets its own.
enum class SeedTag : std::uint64_t { split = 1, partition, smote, init, select, train, tmc };

/// Number of rounds until global accuracy first reaches 90% of the final round's.
inline std::optional<std::size_t> rounds_to_threshold(const std::vector<RoundReport>& reports, double fraction = 0.9) {
    if (reports.empty()) return std::nullopt;
    const double target = fraction * reports.back().global_metrics.accuracy;
    for (std::size_t i = 0; i < reports.size(); ++i)
        if (reports[i].global_metrics.accuracy >= target) return i + 1;
    return std::nullopt;
}

class Federation {
public:
    /// Lets tests tamper with a local model after training, before submission.
    using SubmissionHook = std::function<void(std::uint64_t round, OrgId org, ModelParams& model)>;

    /// Splits 8:2, partitions the training part, rebalances each shard, draws
    /// w^0 and commits the genesis block.
    Federation(FederationConfig cfg, const Dataset& data) : cfg_(std::move(cfg)) {
        cfg_.validate();
        if (data.count_label(0) == 0 || data.count_label(1) == 0)
            throw InputError("federation data needs examples of both classes");

        auto [train, test] = split(data, cfg_.train_fraction, seed(SeedTag::split));
        PartitionPlan plan;
        plan.num_orgs = cfg_.num_orgs;
        plan.mode = cfg_.partition;
        plan.skew = cfg_.skew;
        plan.seed = seed(SeedTag::partition);
        setup(partition(train, plan), std::move(test));
    }

    /// Uses caller-provided organization shards and server test set as-is.
    Federation(FederationConfig cfg, std::vector<Dataset> shards, Dataset server_test) : cfg_(std::move(cfg)) {
        cfg_.validate();
        if (shards.size() != cfg_.num_orgs) throw InputError("expected one shard per organization");
        for (const auto& s : shards)
            if (s.empty() || s.width() != server_test.width()) throw InputError("shards must be non-empty and share the test width");
        setup(std::move(shards), std::move(server_test));
    }

    const FederationConfig& config() const noexcept { return cfg_; }
    const ModelParams& global_model() const noexcept { return global_; }
    const Chain& chain() const noexcept { return chain_; }
    const ContentStore& store() const noexcept { return store_; }
    ContentStore& store() noexcept { return store_; }
    const Dataset& server_test() const noexcept { return server_test_; }
    const std::vector<Dataset>& local_data() const noexcept { return local_data_; }
    const std::vector<Dataset>& train_data() const noexcept { return train_data_; }
    const ValidatorPanel& panel() const noexcept { return panel_; }
    const std::map<OrgId, double>& contributions() const noexcept { return scores_; }
    std::uint64_t next_round() const noexcept { return round_; }

    void set_submission_hook(SubmissionHook hook) { hook_ = std::move(hook); }

    /// Training config an organization uses in round t. The seed depends on
    /// the shard's content rather than the org id, so identical local datasets
    /// yield identical local models.
    TrainConfig training_config(std::uint64_t t, OrgId org) const {
        TrainConfig tc = cfg_.train;
        tc.seed = seed(SeedTag::train, t, fingerprints_.at(org));
        return tc;
    }

    RoundReport run_round(std::uint64_t t) {
        if (t != round_) throw InputError("expected round " + std::to_string(round_) + ", got " + std::to_string(t));
        const auto start = std::chrono::steady_clock::now();
        RoundReport report;
        try {
            report = attempt(t, false);
        } catch (const ConsensusError& first) {
            try {
                report = attempt(t, true);
                report.retried = true;
            } catch (const ConsensusError& second) {
                throw ConsensusError("round " + std::to_string(t) + " failed twice: " + first.what() + "; retry: " +
                                     second.what());
            }
        }
        ++round_;
        report.wall_time = std::chrono::steady_clock::now() - start;
        return report;
    }

private:
    template <class... Parts>
    std::uint64_t seed(SeedTag tag, Parts... parts) const {
        return derive_seed(cfg_.master_seed, {static_cast<std::uint64_t>(tag), static_cast<std::uint64_t>(parts)...});
    }

    static std::uint64_t fingerprint(const Dataset& d) {
        ByteWriter w;
        w.u64(d.width());
        for (const auto& ex : d) {
            for (double v : ex.features) w.f64(v);
            w.u32(static_cast<std::uint32_t>(ex.label));
        }
        const Digest h = sha256(w.bytes());
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t{h[i]} << (8 * i);
        return v;
    }

    void setup(std::vector<Dataset> shards, Dataset server_test) {
        server_test_ = std::move(server_test);
        local_data_ = std::move(shards);
        for (const Dataset& shard : local_data_) {
            Dataset rebalanced = shard;
            if (cfg_.smote) {
                // Shards too small for k neighbours use every other minority example.
                const std::size_t minority = shard.count_label(1);
                SmoteConfig sc = *cfg_.smote;
                sc.seed = seed(SeedTag::smote, fingerprint(shard));
                sc.k = std::min(sc.k, minority > 0 ? minority - 1 : 0);
                if (sc.k >= 1 && shard.count_label(0) > 0) rebalanced = smote(shard, sc);
            }
            train_data_.push_back(std::move(rebalanced));
            fingerprints_.push_back(fingerprint(train_data_.back()));
        }

        panel_ = make_validator_panel(server_test_, cfg_.validators, cfg_.accuracy_floor);
        global_ = init_model(cfg_.layer_dims(server_test_.width()), seed(SeedTag::init));

        for (std::size_t org = 0; org < cfg_.num_orgs; ++org) {
            orgs_.push_back(static_cast<OrgId>(org));
            scores_[static_cast<OrgId>(org)] = 0.0;
        }

        Block genesis;
        genesis.height = 0;
        genesis.global_model_digest = store_.put(serialize_model(global_));
        seal(genesis);
        append_block(chain_, std::move(genesis));
    }

    std::vector<OrgId> choose_trainees(std::uint64_t t, bool force_random) const {
        const std::size_t k = cfg_.policy.k;
        if (force_random) return select_random(orgs_, k, seed(SeedTag::select, t, 1));
        switch (cfg_.policy.kind) {
            case SelectionKind::random: return select_random(orgs_, k, seed(SeedTag::select, t));
            case SelectionKind::greedy: return orgs_;
            case SelectionKind::contribution: {
                SelectionPolicy p = cfg_.policy;
                p.seed = seed(SeedTag::select);
                return select_by_contribution(scores_, k, t, p);
            }
        }
        return {};
    }

    RoundReport attempt(std::uint64_t t, bool force_random) {
        RoundReport report;
        report.round = t;
        const std::vector<OrgId> trainees = choose_trainees(t, force_random);
        report.trained = trainees;

        std::vector<ModelParams> local(trainees.size());
        parallel_for(trainees.size(), cfg_.workers, [&](std::size_t i) {
            const OrgId org = trainees[i];
            local[i] = local_train(global_, train_data_[org], training_config(t, org));
            local[i].version = t + 1;
        });
        if (hook_)
            for (std::size_t i = 0; i < trainees.size(); ++i) hook_(t, trainees[i], local[i]);

        std::vector<LocalUpdateTx> txs;
        for (std::size_t i = 0; i < trainees.size(); ++i) {
            const Bytes payload = serialize_model(local[i]);
            txs.push_back({t, trainees[i], store_.put(payload), payload.size()});
            report.bytes_off_chain += payload.size();
        }

        // accepted[v][i]: validator v accepts submission i.
        const std::size_t nv = panel_.validators.size();
        std::vector<std::vector<char>> accepted(nv, std::vector<char>(txs.size(), 0));
        parallel_for(nv * txs.size(), cfg_.workers, [&](std::size_t job) {
            const std::size_t v = job / txs.size(), i = job % txs.size();
            accepted[v][i] = verify_local_update(panel_, panel_.validators[v], txs[i], store_).accepted ? 1 : 0;
        });
        std::vector<std::size_t> majority_ok;
        for (std::size_t i = 0; i < txs.size(); ++i) {
            std::size_t votes = 0;
            for (std::size_t v = 0; v < nv; ++v) votes += accepted[v][i];
            if (2 * votes > nv) majority_ok.push_back(i);
            else report.rejected.push_back(trainees[i]);
        }

        // Submissions eligible for aggregation, as indices into trainees.
        std::vector<std::size_t> members(trainees.size());
        std::iota(members.begin(), members.end(), std::size_t{0});
        if (!force_random && cfg_.policy.kind == SelectionKind::greedy) {
            std::map<OrgId, ModelParams> pool;
            for (std::size_t i : majority_ok) pool.emplace(trainees[i], local[i]);
            members.clear();
            if (!pool.empty()) {
                ModelUtilityGame game(t, global_, std::move(pool), server_test_);
                for (OrgId org : select_greedy(game, std::min(cfg_.policy.k, majority_ok.size())))
                    members.push_back(static_cast<std::size_t>(
                        std::find(trainees.begin(), trainees.end(), org) - trainees.begin()));
            }
            for (std::size_t i : members) report.selected.push_back(trainees[i]);
        } else {
            report.selected = trainees;
        }

        std::map<ValidatorId, ModelParams> candidates;
        for (std::size_t v = 0; v < nv; ++v) {
            std::vector<const ModelParams*> mine;
            for (std::size_t i : members)
                if (accepted[v][i]) mine.push_back(&local[i]);
            ModelParams candidate = mine.empty() ? global_ : average_models(mine);
            candidate.version = t + 1;
            candidates.emplace(panel_.validators[v], std::move(candidate));
        }
        MajorityOutcome outcome = majority_global(panel_, candidates, store_);

        std::map<OrgId, ModelParams> verified;
        for (std::size_t i : members)
            if (std::binary_search(majority_ok.begin(), majority_ok.end(), i)) verified.emplace(trainees[i], local[i]);
        if (cfg_.valuation.mode != ValuationMode::off && !verified.empty()) {
            ModelUtilityGame game(t, global_, std::move(verified), server_test_);
            if (cfg_.valuation.mode == ValuationMode::exact) {
                report.shapley = exact_shapley(game);
            } else {
                TmcOptions opt = cfg_.valuation.tmc;
                opt.seed = seed(SeedTag::tmc, t);
                report.shapley = tmc_shapley(game, opt);
            }
            for (const auto& [org, v] : report.shapley->values) scores_[org] += v;
        }

        global_ = std::move(outcome.model);
        global_.version = t + 1;

        Block block;
        block.height = chain_.size();
        block.prev_hash = chain_tip(chain_);
        block.txs = txs;
        block.global_model_digest = outcome.digest;
        block.votes = outcome.votes;
        if (report.shapley) block.contributions = report.shapley->values;
        seal(block);
        append_block(chain_, std::move(block));

        report.bytes_on_chain = (txs.size() + 1) * kOnChainRecordBytes;
        report.global_metrics = evaluate(global_, server_test_);
        for (OrgId org : orgs_) report.per_org_metrics[org] = evaluate(global_, local_data_[org]);
        return report;
    }

    FederationConfig cfg_;
    Dataset server_test_;
    std::vector<Dataset> local_data_;  // original shards
    std::vector<Dataset> train_data_;  // shards after rebalancing
    std::vector<std::uint64_t> fingerprints_;
    std::vector<OrgId> orgs_;
    ValidatorPanel panel_;
    ModelParams global_;
    ContentStore store_;
    Chain chain_;
    std::map<OrgId, double> scores_;
    std::uint64_t round_ = 0;
    SubmissionHook hook_;
};

/// Runs rounds until the accuracy target is met or the round budget is spent,
/// then validates the chain.
inline RunResult run(const FederationConfig& cfg, const Dataset& data, Federation::SubmissionHook hook = {}) {
    Federation fed(cfg, data);
    if (hook) fed.set_submission_hook(std::move(hook));
    RunResult result;
    for (std::uint64_t t = 0; t < cfg.rounds; ++t) {
        try {
            result.reports.push_back(fed.run_round(t));
        } catch (const ConsensusError& e) {
            throw RunAborted(e.what(), std::move(result.reports));
        }
        if (cfg.accuracy_target && result.reports.back().global_metrics.accuracy >= *cfg.accuracy_target) break;
    }
    const ChainVerdict verdict = validate_chain(fed.chain());
    if (!verdict)
        throw ChainIntegrityError("chain invalid at height " + std::to_string(verdict.failed_height.value_or(0)) + ": " +
                                  verdict.reason);
    result.final_model_digest = fed.chain().back().global_model_digest;
    result.rounds_to_threshold = rounds_to_threshold(result.reports);
    result.contributions = fed.contributions();
    result.chain = fed.chain();
    return result;
}

inline nlohmann::json metrics_to_json(const Metrics& m) {
    return {{"accuracy", m.accuracy}, {"loss", m.loss}, {"f1", m.f1}, {"precision", m.precision}, {"recall", m.recall}};
}

/// One line-delimited record per round. Wall time is optional because it is
/// the only non-reproducible field.
inline nlohmann::json report_to_json(const RoundReport& r, bool include_timing = false) {
    nlohmann::json j{{"type", "round"},
                     {"round", r.round},
                     {"selected", r.selected},
                     {"trained", r.trained},
                     {"rejected", r.rejected},
                     {"global", metrics_to_json(r.global_metrics)},
                     {"org_accuracy", r.org_accuracy()},
                     {"bytes_on_chain", r.bytes_on_chain},
                     {"bytes_off_chain", r.bytes_off_chain},
                     {"retried", r.retried}};
    if (r.shapley) {
        nlohmann::json values = nlohmann::json::object();
        for (const auto& [org, v] : r.shapley->values) values[std::to_string(org)] = v;
        j["shapley"] = {{"method", r.shapley->method == ShapleyMethod::exact ? "exact" : "tmc"},
                        {"values", std::move(values)},
                        {"evaluations", r.shapley->num_evaluations}};
    }
    if (include_timing) j["wall_time_ms"] = std::chrono::duration<double, std::milli>(r.wall_time).count();
    return j;
}

inline nlohmann::json summary_to_json(const RunResult& r) {
    nlohmann::json contributions = nlohmann::json::object();
    for (const auto& [org, v] : r.contributions) contributions[std::to_string(org)] = v;
    nlohmann::json j{{"type", "summary"},
                     {"rounds", r.reports.size()},
                     {"final_model_digest", to_hex(r.final_model_digest)},
                     {"contributions", std::move(contributions)}};
    j["rounds_to_threshold"] = r.rounds_to_threshold ? nlohmann::json(*r.rounds_to_threshold) : nlohmann::json(nullptr);
    return j;
}

}  // namespace bdsp
