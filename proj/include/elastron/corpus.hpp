#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elastron/model.hpp"
#include "elastron/rng.hpp"

namespace elastron {

struct CorpusShard {
    std::string name;  // domain label or source file
    std::vector<std::vector<std::uint8_t>> sequences;
};

// Byte-token sequences grouped by shard. The train/validation split is by
// sequence index within each shard, so the two sides never overlap.
struct Corpus {
    std::vector<CorpusShard> shards;
    int seq_len = 0;
    double train_fraction = 0.9;

    struct SeqRef {
        int shard = 0;
        int index = 0;
    };
    std::vector<SeqRef> train_refs() const;
    std::vector<SeqRef> validation_refs() const;
    const std::vector<std::uint8_t>& sequence(const SeqRef& ref) const;
    std::int64_t total_sequences() const;
    std::uint64_t hash() const;
};

Corpus ingest_corpus(const std::vector<std::string>& paths, int seq_len, double train_fraction);

struct SynthSpec {
    int sequences_per_domain = 1024;
    int seq_len = 32;
    double train_fraction = 0.9;
    bool easy_domain = true;
    bool hard_domain = true;
};

// "easy" = low-entropy repeated motifs; "hard" = high-entropy halves joined
// by a long-range copy dependency.
Corpus synth_corpus(Rng rng, const SynthSpec& spec);

// Mean per-byte Shannon entropy (bits) of a shard's unigram distribution.
double shard_byte_entropy(const CorpusShard& shard);

TokenBatch batch_from_refs(const Corpus& corpus, const std::vector<Corpus::SeqRef>& refs);

// Shuffled-epoch batch stream over the training split.
class BatchSampler {
public:
    BatchSampler(const Corpus& corpus, int batch_size, Rng rng);
    TokenBatch next();

private:
    const Corpus* corpus_;
    int batch_size_;
    Rng rng_;
    std::vector<Corpus::SeqRef> refs_;
    std::size_t cursor_ = 0;
    std::uint64_t epoch_ = 0;

    void reshuffle();
};

std::vector<TokenBatch> validation_batches(const Corpus& corpus, int batch_size, int max_batches);

}  // namespace elastron
