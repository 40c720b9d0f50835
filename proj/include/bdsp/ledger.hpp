#pragma once

// In-process permissioned ledger. Model payloads live off-chain in a
// content-addressed store; blocks carry only fixed-size records holding their
// SHA-256 digests, plus validator votes and per-round contribution scores.

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bdsp/dataset.hpp"
#include "bdsp/errors.hpp"
#include "bdsp/model.hpp"
#include "bdsp/types.hpp"

namespace bdsp {

using Digest = std::array<std::uint8_t, 32>;
using Bytes = std::vector<std::uint8_t>;

inline Digest sha256(std::span<const std::uint8_t> bytes) {
    Digest out{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size())
        throw Error("SHA-256 computation failed");
    return out;
}

inline Digest sha256(std::string_view text) {
    return sha256(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string s;
    s.reserve(bytes.size() * 2);
    for (std::uint8_t b : bytes) {
        s.push_back(kDigits[b >> 4]);
        s.push_back(kDigits[b & 0xf]);
    }
    return s;
}

inline Digest digest_from_hex(std::string_view hex) {
    if (hex.size() != 64) throw ParseError("digest must be 64 hex characters, got " + std::to_string(hex.size()));
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw ParseError(std::string("invalid hex character '") + c + "'");
    };
    Digest d{};
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
    return d;
}

// Little-endian byte writer/reader for the canonical encodings.
class ByteWriter {
public:
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
    void digest(const Digest& d) { out_.insert(out_.end(), d.begin(), d.end()); }
    Bytes take() && { return std::move(out_); }
    const Bytes& bytes() const noexcept { return out_; }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    Bytes out_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    double f64() { return std::bit_cast<double>(get(8)); }
    std::size_t remaining() const noexcept { return in_.size() - pos_; }

private:
    std::uint64_t get(int n) {
        if (remaining() < static_cast<std::size_t>(n)) throw ParseError("truncated payload");
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= std::uint64_t{in_[pos_ + i]} << (8 * i);
        pos_ += n;
        return v;
    }
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

/// u32 layer count, u32 layer widths, then little-endian f64 weights. The
/// version field is metadata and is not part of the payload.
inline Bytes serialize_model(const ModelParams& p) {
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(p.layer_dims.size()));
    for (std::size_t d : p.layer_dims) w.u32(static_cast<std::uint32_t>(d));
    for (double v : p.weights) w.f64(v);
    return std::move(w).take();
}

inline ModelParams deserialize_model(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    const std::uint32_t layers = r.u32();
    if (layers < 2 || layers > 64) throw ParseError("implausible layer count " + std::to_string(layers));
    ModelParams p;
    for (std::uint32_t l = 0; l < layers; ++l) p.layer_dims.push_back(r.u32());
    try {
        validate_layer_dims(p.layer_dims);
    } catch (const InputError& e) {
        throw ParseError(e.what());
    }
    const std::size_t count = ModelParams::parameter_count(p.layer_dims);
    if (r.remaining() != count * 8) throw ParseError("payload size does not match layer widths");
    p.weights.resize(count);
    for (double& v : p.weights) v = r.f64();
    return p;
}

inline Digest model_digest(const ModelParams& p) { return sha256(serialize_model(p)); }

/// Off-chain blob store keyed by SHA-256 of the content. Reads and puts may
/// run concurrently.
class ContentStore {
public:
    Digest put(std::span<const std::uint8_t> payload) {
        const Digest d = sha256(payload);
        std::unique_lock lock(mutex_);
        blobs_.try_emplace(d, payload.begin(), payload.end());
        return d;
    }

    /// Returns the payload after re-checking its content address.
    Bytes get(const Digest& d) const {
        std::shared_lock lock(mutex_);
        const auto it = blobs_.find(d);
        if (it == blobs_.end()) throw NotFoundError("no blob with digest " + to_hex(d));
        if (sha256(it->second) != d) throw CorruptionError("blob " + to_hex(d) + " no longer matches its digest");
        return it->second;
    }

    bool contains(const Digest& d) const {
        std::shared_lock lock(mutex_);
        return blobs_.contains(d);
    }

    std::size_t size() const {
        std::shared_lock lock(mutex_);
        return blobs_.size();
    }

    /// Mutable access that bypasses content addressing, for fault injection.
    Bytes* raw(const Digest& d) {
        std::unique_lock lock(mutex_);
        const auto it = blobs_.find(d);
        return it == blobs_.end() ? nullptr : &it->second;
    }

private:
    mutable std::shared_mutex mutex_;
    std::map<Digest, Bytes> blobs_;
};

/// Every on-chain record (local update or global model) encodes to this size:
/// u64 round, u64 org id, 32-byte digest, u64 payload size.
inline constexpr std::size_t kOnChainRecordBytes = 56;
inline constexpr std::uint64_t kGlobalModelRecord = ~std::uint64_t{0};

struct LocalUpdateTx {
    std::uint64_t round = 0;
    OrgId org_id = 0;
    Digest model_digest{};
    std::uint64_t payload_bytes = 0;

    friend bool operator==(const LocalUpdateTx&, const LocalUpdateTx&) = default;
};

inline void encode_record(ByteWriter& w, std::uint64_t round, std::uint64_t org, const Digest& d, std::uint64_t payload) {
    w.u64(round);
    w.u64(org);
    w.digest(d);
    w.u64(payload);
}

inline Bytes encode_tx(const LocalUpdateTx& tx) {
    ByteWriter w;
    encode_record(w, tx.round, tx.org_id, tx.model_digest, tx.payload_bytes);
    return std::move(w).take();
}

struct Block {
    std::uint64_t height = 0;
    Digest prev_hash{};
    std::vector<LocalUpdateTx> txs;
    Digest global_model_digest{};
    std::map<ValidatorId, Digest> votes;
    std::map<OrgId, double> contributions;
    Digest block_hash{};

    friend bool operator==(const Block&, const Block&) = default;
};

using Chain = std::vector<Block>;

/// Canonical byte encoding of every block field except block_hash.
inline Bytes block_preimage(const Block& b) {
    ByteWriter w;
    w.u64(b.height);
    w.digest(b.prev_hash);
    w.u64(b.txs.size());
    for (const auto& tx : b.txs) encode_record(w, tx.round, tx.org_id, tx.model_digest, tx.payload_bytes);
    w.digest(b.global_model_digest);
    w.u64(b.votes.size());
    for (const auto& [id, d] : b.votes) {
        w.u32(id);
        w.digest(d);
    }
    w.u64(b.contributions.size());
    for (const auto& [org, v] : b.contributions) {
        w.u32(org);
        w.f64(v);
    }
    return std::move(w).take();
}

inline Digest compute_block_hash(const Block& b) { return sha256(block_preimage(b)); }

inline void seal(Block& b) { b.block_hash = compute_block_hash(b); }

inline Digest chain_tip(const Chain& chain) { return chain.empty() ? Digest{} : chain.back().block_hash; }

/// Appends after checking height, the link to the previous block and the
/// block's own hash.
inline void append_block(Chain& chain, Block block) {
    if (block.height != chain.size())
        throw ChainIntegrityError("block height " + std::to_string(block.height) + " does not follow chain length " +
                                  std::to_string(chain.size()));
    if (block.prev_hash != chain_tip(chain))
        throw ChainIntegrityError("block " + std::to_string(block.height) + " does not link to the chain tip");
    if (block.block_hash != compute_block_hash(block))
        throw ChainIntegrityError("block " + std::to_string(block.height) + " hash does not match its contents");
    chain.push_back(std::move(block));
}

struct ChainVerdict {
    bool valid = true;
    std::optional<std::uint64_t> failed_height;
    std::string reason;

    explicit operator bool() const noexcept { return valid; }
};

inline ChainVerdict validate_chain(const Chain& chain) {
    for (std::size_t i = 0; i < chain.size(); ++i) {
        const Block& b = chain[i];
        auto fail = [&](std::string why) { return ChainVerdict{false, i, std::move(why)}; };
        if (b.height != i) return fail("height " + std::to_string(b.height) + " out of sequence");
        if (b.prev_hash != (i == 0 ? Digest{} : chain[i - 1].block_hash)) return fail("broken prev_hash link");
        if (b.block_hash != compute_block_hash(b)) return fail("block hash does not match contents");
    }
    return {};
}

// Chain export: one JSON object per line, digests as lowercase hex.

inline nlohmann::json block_to_json(const Block& b) {
    nlohmann::json txs = nlohmann::json::array();
    for (const auto& tx : b.txs)
        txs.push_back({{"round", tx.round},
                       {"org_id", tx.org_id},
                       {"model_digest", to_hex(tx.model_digest)},
                       {"payload_bytes", tx.payload_bytes}});
    nlohmann::json votes = nlohmann::json::object();
    for (const auto& [id, d] : b.votes) votes[std::to_string(id)] = to_hex(d);
    nlohmann::json contributions = nlohmann::json::object();
    for (const auto& [org, v] : b.contributions) contributions[std::to_string(org)] = v;
    return {{"height", b.height},
            {"prev_hash", to_hex(b.prev_hash)},
            {"txs", std::move(txs)},
            {"global_model_digest", to_hex(b.global_model_digest)},
            {"votes", std::move(votes)},
            {"contributions", std::move(contributions)},
            {"block_hash", to_hex(b.block_hash)}};
}

inline std::uint32_t parse_id(const std::string& key) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
        v = std::stoul(key, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != key.size() || key.empty() || v > 0xffffffffUL) throw ParseError("invalid id '" + key + "'");
    return static_cast<std::uint32_t>(v);
}

inline Block block_from_json(const nlohmann::json& j) {
    Block b;
    b.height = j.at("height").get<std::uint64_t>();
    b.prev_hash = digest_from_hex(j.at("prev_hash").get<std::string>());
    for (const auto& t : j.at("txs")) {
        LocalUpdateTx tx;
        tx.round = t.at("round").get<std::uint64_t>();
        tx.org_id = t.at("org_id").get<OrgId>();
        tx.model_digest = digest_from_hex(t.at("model_digest").get<std::string>());
        tx.payload_bytes = t.at("payload_bytes").get<std::uint64_t>();
        b.txs.push_back(tx);
    }
    b.global_model_digest = digest_from_hex(j.at("global_model_digest").get<std::string>());
    for (const auto& [k, v] : j.at("votes").items()) b.votes[parse_id(k)] = digest_from_hex(v.get<std::string>());
    for (const auto& [k, v] : j.at("contributions").items()) b.contributions[parse_id(k)] = v.get<double>();
    b.block_hash = digest_from_hex(j.at("block_hash").get<std::string>());
    return b;
}

inline void export_chain(std::ostream& out, const Chain& chain) {
    for (const auto& b : chain) out << block_to_json(b).dump() << '\n';
}

/// Parses an export; blank lines and '#' comment lines are skipped, an empty
/// stream is an empty chain.
inline Chain import_chain(std::istream& in) {
    Chain chain;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        try {
            chain.push_back(block_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("malformed block record: ") + e.what(), row, 0);
        } catch (const ParseError& e) {
            throw ParseError(e.what(), row, 0);
        }
    }
    return chain;
}

/// Validators that cross-check local updates on private slices of the server
/// test set and vote on the aggregated global model.
struct ValidatorPanel {
    std::vector<ValidatorId> validators;
    std::map<ValidatorId, Dataset> test_shards;
    double accuracy_floor = 0.5;

    void validate() const {
        if (validators.empty() || validators.size() % 2 == 0)
            throw InputError("validator count must be odd, got " + std::to_string(validators.size()));
        if (!(accuracy_floor >= 0.0 && accuracy_floor <= 1.0)) throw InputError("accuracy_floor must lie in [0, 1]");
        for (ValidatorId v : validators)
            if (!test_shards.contains(v) || test_shards.at(v).empty())
                throw InputError("validator " + std::to_string(v) + " has no test shard");
    }
};

/// Deals the server test set into `count` stratified shards (class by class,
/// round-robin), one per validator id 0..count-1.
inline ValidatorPanel make_validator_panel(const Dataset& server_test, std::size_t count, double accuracy_floor) {
    if (count == 0 || count % 2 == 0) throw InputError("validator count must be odd, got " + std::to_string(count));
    if (server_test.size() < count) throw InputError("server test set is smaller than the validator count");
    std::vector<std::vector<std::size_t>> idx(count);
    std::size_t next = 0;
    for (int label : {1, 0})
        for (std::size_t i = 0; i < server_test.size(); ++i)
            if (server_test[i].label == label) idx[next++ % count].push_back(i);
    ValidatorPanel panel;
    panel.accuracy_floor = accuracy_floor;
    for (std::size_t v = 0; v < count; ++v) {
        std::sort(idx[v].begin(), idx[v].end());
        panel.validators.push_back(static_cast<ValidatorId>(v));
        panel.test_shards.emplace(static_cast<ValidatorId>(v), server_test.select(idx[v]));
    }
    panel.validate();
    return panel;
}

enum class VerifyReason { accepted, not_found, corrupt, malformed, non_finite, shape_mismatch, below_floor };

inline std::string_view to_string(VerifyReason r) {
    switch (r) {
        case VerifyReason::accepted: return "accepted";
        case VerifyReason::not_found: return "not_found";
        case VerifyReason::corrupt: return "corrupt";
        case VerifyReason::malformed: return "malformed";
        case VerifyReason::non_finite: return "non_finite";
        case VerifyReason::shape_mismatch: return "shape_mismatch";
        case VerifyReason::below_floor: return "below_floor";
    }
    return "unknown";
}

struct Verification {
    bool accepted = false;
    VerifyReason reason = VerifyReason::not_found;
    double accuracy = 0.0;

    explicit operator bool() const noexcept { return accepted; }
};

/// Resolves the update's payload and accepts it when all weights are finite
/// and accuracy on this validator's shard reaches the panel floor.
inline Verification verify_local_update(const ValidatorPanel& panel, ValidatorId validator, const LocalUpdateTx& tx,
                                        const ContentStore& store) {
    const auto shard = panel.test_shards.find(validator);
    if (shard == panel.test_shards.end()) throw InputError("unknown validator " + std::to_string(validator));
    Bytes payload;
    try {
        payload = store.get(tx.model_digest);
    } catch (const NotFoundError&) {
        return {false, VerifyReason::not_found, 0.0};
    } catch (const CorruptionError&) {
        return {false, VerifyReason::corrupt, 0.0};
    }
    ModelParams model;
    try {
        model = deserialize_model(payload);
    } catch (const ParseError&) {
        return {false, VerifyReason::malformed, 0.0};
    }
    if (!model.all_finite()) return {false, VerifyReason::non_finite, 0.0};
    if (model.input_width() != shard->second.width()) return {false, VerifyReason::shape_mismatch, 0.0};
    const double acc = evaluate(model, shard->second).accuracy;
    if (acc < panel.accuracy_floor) return {false, VerifyReason::below_floor, acc};
    return {true, VerifyReason::accepted, acc};
}

struct MajorityOutcome {
    Digest digest{};
    ModelParams model;
    std::map<ValidatorId, Digest> votes;
    std::vector<Digest> faulty;  // candidate digests that lost the vote
};

/// Each validator proposes the global model it aggregated; the digest held by
/// a strict majority wins and its payload is stored.
inline MajorityOutcome majority_global(const ValidatorPanel& panel, const std::map<ValidatorId, ModelParams>& candidates,
                                       ContentStore& store) {
    if (candidates.size() != panel.validators.size())
        throw InputError("expected one candidate per validator");
    MajorityOutcome out;
    std::map<Digest, std::size_t> tally;
    std::map<Digest, const ModelParams*> by_digest;
    for (ValidatorId v : panel.validators) {
        const auto it = candidates.find(v);
        if (it == candidates.end()) throw InputError("validator " + std::to_string(v) + " submitted no candidate");
        const Digest d = model_digest(it->second);
        out.votes[v] = d;
        ++tally[d];
        by_digest.try_emplace(d, &it->second);
    }
    for (const auto& [d, n] : tally) {
        if (2 * n > panel.validators.size()) {
            out.digest = d;
            out.model = *by_digest.at(d);
        } else {
            out.faulty.push_back(d);
        }
    }
    if (out.faulty.size() == tally.size())
        throw ConsensusError("no candidate holds a strict majority of " + std::to_string(panel.validators.size()) +
                             " validators (" + std::to_string(tally.size()) + " distinct candidates)");
    store.put(serialize_model(out.model));
    return out;
}

}  // namespace bdsp
