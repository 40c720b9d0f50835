#pragma once

// Experiment harness behind the command-line tool: a key = value config file
// with BDSP_* environment and flag overrides, synthetic-data generation, sweep
// execution with CSV/JSONL outputs, and chain-export validation.

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "bdsp/data.hpp"
#include "bdsp/errors.hpp"
#include "bdsp/federation.hpp"
#include "bdsp/ledger.hpp"
#include "bdsp/parallel.hpp"

namespace bdsp {

inline constexpr std::string_view kEnvPrefix = "BDSP_";

struct ConfigKey {
    std::string_view name;
    std::string_view default_value;
    std::string_view help;
};

/// Every recognised configuration key with its default.
inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys{
        {"seed", "0", "master seed for every random stream"},
        {"num_orgs", "30", "number of organizations"},
        {"clients_per_round", "10", "organizations selected per round"},
        {"rounds", "100", "training round budget"},
        {"learning_rate", "0.01", "SGD step size"},
        {"epochs", "10", "local epochs; a comma list sweeps"},
        {"batch_size", "32", "local mini-batch size; a comma list sweeps"},
        {"weight_decay", "0.001", "L2 penalty coefficient"},
        {"hidden_layers", "16", "hidden widths, comma separated; 'none' for logistic regression"},
        {"train_fraction", "0.8", "stratified train share; the rest is the server test set"},
        {"partition", "iid", "iid | label-skew"},
        {"skew", "0", "label-skew: minority share sent to the first third of organizations"},
        {"smote", "on", "on | off"},
        {"smote_k", "5", "SMOTE neighbour count"},
        {"smote_target_ratio", "1.0", "minority/majority ratio after SMOTE"},
        {"valuation", "exact", "exact | tmc | off"},
        {"tmc_truncation_tol", "0.0001", "truncated Monte-Carlo: stop a walk once |U(I)-U(prefix)| is below this"},
        {"tmc_max_permutations", "1000", "truncated Monte-Carlo permutation budget"},
        {"tmc_convergence_tol", "0.001", "truncated Monte-Carlo running-mean stability threshold"},
        {"policies", "contribution,random,greedy", "selection policies to compare"},
        {"exploration_period", "5", "contribution policy: every n-th round selects at random"},
        {"accuracy_target", "none", "stop once server-test accuracy reaches this"},
        {"validators", "3", "validator count (odd)"},
        {"accuracy_floor", "0.5", "minimum validator accuracy for a local update"},
        {"data", "synthetic", "'synthetic' or a credit-card CSV path"},
        {"synthetic_n", "2000", "generated rows"},
        {"synthetic_minority_fraction", "0.02", "generated share of label-1 rows"},
        {"synthetic_separation", "3.0", "distance between generated class means"},
        {"synthetic_seed", "0", "generator seed"},
    };
    return keys;
}

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string strip(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline bool known_key(std::string_view key) {
    const auto& keys = config_keys();
    return std::any_of(keys.begin(), keys.end(), [&](const ConfigKey& k) { return k.name == key; });
}

inline std::string env_name(std::string_view key) {
    std::string s(kEnvPrefix);
    for (char c : key) s.push_back(c == '.' || c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    return s;
}

inline std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t comma = std::min(s.find(',', start), s.size());
        const std::string item = strip(s.substr(start, comma - start));
        if (!item.empty()) out.push_back(item);
        start = comma + 1;
    }
    return out;
}

}  // namespace detail

/// Parses `key = value` lines; '#' starts a comment. Unknown keys are errors.
inline KeyValues parse_config(std::istream& in) {
    KeyValues kv;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string text = detail::strip(line);
        if (text.empty()) continue;
        const auto eq = text.find('=');
        if (eq == std::string::npos) throw ParseError("expected 'key = value'", row, 1);
        const std::string key = detail::strip(std::string_view(text).substr(0, eq));
        if (!detail::known_key(key)) throw ParseError("unknown config key '" + key + "'", row, 1);
        kv[key] = detail::strip(std::string_view(text).substr(eq + 1));
    }
    return kv;
}

inline KeyValues parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file '" + path + "'");
    return parse_config(in);
}

/// Defaults, then the file, then BDSP_<KEY> environment variables, then flags.
inline KeyValues resolve_config(const KeyValues& file, const KeyValues& flags) {
    KeyValues kv;
    for (const auto& k : config_keys()) kv[std::string(k.name)] = std::string(k.default_value);
    for (const auto& [k, v] : file) kv[k] = v;
    for (const auto& k : config_keys())
        if (const char* env = std::getenv(detail::env_name(k.name).c_str())) kv[std::string(k.name)] = env;
    for (const auto& [k, v] : flags) {
        if (!detail::known_key(k)) throw ParseError("unknown config key '" + k + "'");
        kv[k] = v;
    }
    return kv;
}

struct ExperimentSpec {
    std::optional<std::string> csv_path;  // unset: synthetic data
    SyntheticSpec synthetic;
    FederationConfig base;
    std::vector<std::size_t> epochs_sweep{10};
    std::vector<std::size_t> batch_sweep{32};
    std::vector<SelectionKind> policies{SelectionKind::contribution, SelectionKind::random, SelectionKind::greedy};
    std::filesystem::path output_dir = "bdsp-out";
    bool parallel = false;
    KeyValues resolved;  // the settings the run used, for the config hash
};

inline std::string_view to_string(SelectionKind k) {
    switch (k) {
        case SelectionKind::random: return "random";
        case SelectionKind::greedy: return "greedy";
        case SelectionKind::contribution: return "contribution";
    }
    return "unknown";
}

namespace detail {

class FieldReader {
public:
    explicit FieldReader(const KeyValues& kv) : kv_(kv) {}

    const std::string& raw(const std::string& key) const { return kv_.at(key); }

    template <class T>
    T number(const std::string& key) const {
        const std::string& s = raw(key);
        T v{};
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || ptr != s.data() + s.size()) fail(key, "expected a number, got '" + s + "'");
        return v;
    }

    template <class T>
    std::vector<T> number_list(const std::string& key) const {
        std::vector<T> out;
        for (const auto& item : split_list(raw(key))) {
            T v{};
            const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
            if (ec != std::errc{} || ptr != item.data() + item.size()) fail(key, "invalid list item '" + item + "'");
            out.push_back(v);
        }
        return out;
    }

    bool flag(const std::string& key) const {
        const std::string& s = raw(key);
        if (s == "on" || s == "true" || s == "1" || s == "yes") return true;
        if (s == "off" || s == "false" || s == "0" || s == "no") return false;
        fail(key, "expected on/off, got '" + s + "'");
    }

    [[noreturn]] static void fail(const std::string& key, const std::string& why) {
        throw ParseError("config key '" + key + "': " + why);
    }

private:
    const KeyValues& kv_;
};

}  // namespace detail

/// Builds an experiment from fully resolved key/values, with field-level errors.
inline ExperimentSpec make_experiment(const KeyValues& kv, std::filesystem::path output_dir, bool parallel) {
    detail::FieldReader f(kv);
    ExperimentSpec spec;
    spec.resolved = kv;
    spec.output_dir = std::move(output_dir);
    spec.parallel = parallel;

    FederationConfig& c = spec.base;
    c.master_seed = f.number<std::uint64_t>("seed");
    c.num_orgs = f.number<std::size_t>("num_orgs");
    c.rounds = f.number<std::size_t>("rounds");
    c.train.learning_rate = f.number<double>("learning_rate");
    c.train.weight_decay = f.number<double>("weight_decay");
    c.train_fraction = f.number<double>("train_fraction");
    c.policy.k = f.number<std::size_t>("clients_per_round");
    c.policy.exploration_period = f.number<std::size_t>("exploration_period");
    c.validators = f.number<std::size_t>("validators");
    c.accuracy_floor = f.number<double>("accuracy_floor");
    c.skew = f.number<double>("skew");

    c.hidden_layers.clear();
    if (f.raw("hidden_layers") != "none") c.hidden_layers = f.number_list<std::size_t>("hidden_layers");

    const std::string& part = f.raw("partition");
    if (part == "iid") c.partition = PartitionMode::iid;
    else if (part == "label-skew") c.partition = PartitionMode::label_skew;
    else f.fail("partition", "expected iid or label-skew, got '" + part + "'");

    if (f.flag("smote")) {
        SmoteConfig sc;
        sc.k = f.number<std::size_t>("smote_k");
        sc.target_ratio = f.number<double>("smote_target_ratio");
        c.smote = sc;
    } else {
        c.smote.reset();
    }

    const std::string& val = f.raw("valuation");
    if (val == "exact") c.valuation.mode = ValuationMode::exact;
    else if (val == "tmc") c.valuation.mode = ValuationMode::tmc;
    else if (val == "off") c.valuation.mode = ValuationMode::off;
    else f.fail("valuation", "expected exact, tmc or off, got '" + val + "'");
    c.valuation.tmc.truncation_tol = f.number<double>("tmc_truncation_tol");
    c.valuation.tmc.max_permutations = f.number<std::size_t>("tmc_max_permutations");
    c.valuation.tmc.convergence_tol = f.number<double>("tmc_convergence_tol");

    if (f.raw("accuracy_target") != "none") c.accuracy_target = f.number<double>("accuracy_target");

    spec.epochs_sweep = f.number_list<std::size_t>("epochs");
    spec.batch_sweep = f.number_list<std::size_t>("batch_size");
    if (spec.epochs_sweep.empty()) f.fail("epochs", "needs at least one value");
    if (spec.batch_sweep.empty()) f.fail("batch_size", "needs at least one value");
    c.train.epochs = spec.epochs_sweep.front();
    c.train.batch_size = spec.batch_sweep.front();

    spec.policies.clear();
    for (const auto& name : detail::split_list(f.raw("policies"))) {
        if (name == "random") spec.policies.push_back(SelectionKind::random);
        else if (name == "greedy") spec.policies.push_back(SelectionKind::greedy);
        else if (name == "contribution") spec.policies.push_back(SelectionKind::contribution);
        else f.fail("policies", "unknown policy '" + name + "'");
    }
    if (spec.policies.empty()) f.fail("policies", "needs at least one policy");

    if (f.raw("data") != "synthetic") spec.csv_path = f.raw("data");
    spec.synthetic.n = f.number<std::size_t>("synthetic_n");
    spec.synthetic.minority_fraction = f.number<double>("synthetic_minority_fraction");
    spec.synthetic.separation = f.number<double>("synthetic_separation");
    spec.synthetic.seed = f.number<std::uint64_t>("synthetic_seed");

    for (SelectionKind kind : spec.policies) {
        FederationConfig probe = c;
        probe.policy.kind = kind;
        for (std::size_t e : spec.epochs_sweep)
            for (std::size_t b : spec.batch_sweep) {
                probe.train.epochs = e;
                probe.train.batch_size = b;
                try {
                    probe.validate();
                } catch (const InputError& err) {
                    throw ParseError(std::string("invalid configuration: ") + err.what());
                }
            }
    }
    return spec;
}

/// SHA-256 over the sorted resolved settings; output location and
/// parallelism are excluded because they cannot change results.
inline std::string config_hash(const ExperimentSpec& spec) {
    std::string canon;
    for (const auto& [k, v] : spec.resolved) canon += k + "=" + v + "\n";
    return to_hex(sha256(canon));
}

inline void cmd_generate(const SyntheticSpec& spec, const std::filesystem::path& out_path) {
    const Dataset data = generate_synthetic(spec);
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw Error("cannot write '" + out_path.string() + "'");
    write_csv(out, data);
    if (!out) throw Error("I/O error writing '" + out_path.string() + "'");
}

/// Data the experiment runs on, standardized exactly as load_csv would.
inline Dataset experiment_data(const ExperimentSpec& spec) {
    if (spec.csv_path) return load_csv(*spec.csv_path);
    return standardize(generate_synthetic(spec.synthetic));
}

struct SweepOutcome {
    SelectionKind policy = SelectionKind::random;
    std::size_t epochs = 0;
    std::size_t batch_size = 0;
    std::string stem;
    RunResult result;
};

namespace detail {

inline std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << content;
    if (!out) throw Error("I/O error writing '" + path.string() + "'");
}

}  // namespace detail

inline constexpr std::string_view kRoundCsvHeader =
    "round,accuracy,loss,f1,precision,org_accuracy,bytes_on_chain,bytes_off_chain,selected";
inline constexpr std::string_view kSummaryCsvHeader =
    "policy,epochs,batch_size,rounds_run,final_accuracy,final_loss,final_f1,final_precision,final_org_accuracy,"
    "rounds_to_threshold,final_model_digest";

inline std::string round_csv(const RunResult& r, const std::string& hash) {
    std::ostringstream out;
    out << "# config_hash=" << hash << '\n' << kRoundCsvHeader << '\n';
    for (const auto& rep : r.reports) {
        const Metrics& m = rep.global_metrics;
        out << rep.round << ',' << detail::fmt(m.accuracy) << ',' << detail::fmt(m.loss) << ',' << detail::fmt(m.f1)
            << ',' << detail::fmt(m.precision) << ',' << detail::fmt(rep.org_accuracy()) << ',' << rep.bytes_on_chain
            << ',' << rep.bytes_off_chain << ',';
        for (std::size_t i = 0; i < rep.selected.size(); ++i) out << (i ? ";" : "") << rep.selected[i];
        out << '\n';
    }
    return out.str();
}

/// Runs every (policy x epochs x batch) point and writes, per point,
/// <stem>.csv, <stem>.rounds.jsonl and <stem>.chain.jsonl, plus summary.csv.
/// Each file opens with the config hash.
inline std::vector<SweepOutcome> cmd_run(const ExperimentSpec& spec) {
    const Dataset data = experiment_data(spec);
    const std::string hash = config_hash(spec);
    std::filesystem::create_directories(spec.output_dir);

    std::vector<SweepOutcome> points;
    for (SelectionKind kind : spec.policies)
        for (std::size_t e : spec.epochs_sweep)
            for (std::size_t b : spec.batch_sweep) {
                SweepOutcome p;
                p.policy = kind;
                p.epochs = e;
                p.batch_size = b;
                p.stem = std::string(to_string(kind)) + "_e" + std::to_string(e) + "_b" + std::to_string(b);
                points.push_back(std::move(p));
            }

    const std::size_t workers = spec.parallel ? std::max(2u, std::thread::hardware_concurrency()) : 1;
    parallel_for(points.size(), workers, [&](std::size_t i) {
        SweepOutcome& p = points[i];
        FederationConfig cfg = spec.base;
        cfg.policy.kind = p.policy;
        cfg.train.epochs = p.epochs;
        cfg.train.batch_size = p.batch_size;
        cfg.workers = spec.parallel ? 2 : 1;
        p.result = run(cfg, data);

        detail::write_file(spec.output_dir / (p.stem + ".csv"), round_csv(p.result, hash));
        std::ostringstream rounds;
        rounds << nlohmann::json{{"type", "header"}, {"config_hash", hash}}.dump() << '\n';
        for (const auto& rep : p.result.reports) rounds << report_to_json(rep).dump() << '\n';
        nlohmann::json summary = summary_to_json(p.result);
        summary["config_hash"] = hash;
        rounds << summary.dump() << '\n';
        detail::write_file(spec.output_dir / (p.stem + ".rounds.jsonl"), rounds.str());
        std::ostringstream chain;
        chain << "# config_hash=" << hash << '\n';
        export_chain(chain, p.result.chain);
        detail::write_file(spec.output_dir / (p.stem + ".chain.jsonl"), chain.str());
    });

    std::ostringstream summary;
    summary << "# config_hash=" << hash << '\n' << kSummaryCsvHeader << '\n';
    for (const auto& p : points) {
        const RoundReport& last = p.result.reports.back();
        const Metrics& m = last.global_metrics;
        summary << to_string(p.policy) << ',' << p.epochs << ',' << p.batch_size << ',' << p.result.reports.size()
                << ',' << detail::fmt(m.accuracy) << ',' << detail::fmt(m.loss) << ',' << detail::fmt(m.f1) << ','
                << detail::fmt(m.precision) << ',' << detail::fmt(last.org_accuracy()) << ','
                << (p.result.rounds_to_threshold ? std::to_string(*p.result.rounds_to_threshold) : std::string("NA"))
                << ',' << to_hex(p.result.final_model_digest) << '\n';
    }
    detail::write_file(spec.output_dir / "summary.csv", summary.str());
    return points;
}

struct ValidateOutcome {
    int exit_code = 0;
    std::string message;
};

/// Exit code 0 for a valid export, 1 for an integrity failure, 2 when the
/// file cannot be read or parsed.
inline ValidateOutcome cmd_validate(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) return {2, "cannot open '" + path.string() + "'"};
    Chain chain;
    try {
        chain = import_chain(in);
    } catch (const ParseError& e) {
        return {2, std::string("parse error: ") + e.what()};
    }
    const ChainVerdict v = validate_chain(chain);
    if (!v) return {1, "invalid at height " + std::to_string(*v.failed_height) + ": " + v.reason};
    return {0, "valid (" + std::to_string(chain.size()) + " blocks)"};
}

}  // namespace bdsp
