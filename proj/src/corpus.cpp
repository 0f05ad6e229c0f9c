#include "elastron/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

namespace elastron {

std::vector<Corpus::SeqRef> Corpus::train_refs() const {
    std::vector<SeqRef> refs;
    for (std::size_t s = 0; s < shards.size(); ++s) {
        const int n = static_cast<int>(shards[s].sequences.size());
        const int train_n = static_cast<int>(train_fraction * n);
        for (int i = 0; i < train_n; ++i) refs.push_back({static_cast<int>(s), i});
    }
    return refs;
}

std::vector<Corpus::SeqRef> Corpus::validation_refs() const {
    std::vector<SeqRef> refs;
    for (std::size_t s = 0; s < shards.size(); ++s) {
        const int n = static_cast<int>(shards[s].sequences.size());
        const int train_n = static_cast<int>(train_fraction * n);
        for (int i = train_n; i < n; ++i) refs.push_back({static_cast<int>(s), i});
    }
    return refs;
}

const std::vector<std::uint8_t>& Corpus::sequence(const SeqRef& ref) const {
    return shards[static_cast<std::size_t>(ref.shard)].sequences[static_cast<std::size_t>(ref.index)];
}

std::int64_t Corpus::total_sequences() const {
    std::int64_t n = 0;
    for (const auto& s : shards) n += static_cast<std::int64_t>(s.sequences.size());
    return n;
}

std::uint64_t Corpus::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_byte = [&h](std::uint8_t b) {
        h ^= b;
        h *= 0x100000001b3ULL;
    };
    mix_byte(static_cast<std::uint8_t>(seq_len));
    for (const auto& shard : shards) {
        for (char c : shard.name) mix_byte(static_cast<std::uint8_t>(c));
        for (const auto& seq : shard.sequences) {
            for (std::uint8_t b : seq) mix_byte(b);
        }
    }
    return h;
}

Corpus ingest_corpus(const std::vector<std::string>& paths, int seq_len, double train_fraction) {
    if (paths.empty()) throw TensorError("ingest: no input files");
    if (seq_len < 2) throw TensorError("ingest: sequence length must be at least 2");
    Corpus corpus;
    corpus.seq_len = seq_len;
    corpus.train_fraction = train_fraction;
    for (const std::string& path : paths) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw TensorError("ingest: cannot read '" + path + "'");
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (text.empty()) throw TensorError("ingest: file '" + path + "' is empty");
        CorpusShard shard;
        shard.name = path;
        for (std::size_t off = 0; off + static_cast<std::size_t>(seq_len) <= text.size();
             off += static_cast<std::size_t>(seq_len)) {
            std::vector<std::uint8_t> seq(static_cast<std::size_t>(seq_len));
            for (int i = 0; i < seq_len; ++i) {
                seq[static_cast<std::size_t>(i)] =
                    static_cast<std::uint8_t>(text[off + static_cast<std::size_t>(i)]);
            }
            shard.sequences.push_back(std::move(seq));
        }
        if (shard.sequences.empty()) {
            throw TensorError("ingest: file '" + path + "' shorter than one sequence");
        }
        corpus.shards.push_back(std::move(shard));
    }
    return corpus;
}

Corpus synth_corpus(Rng rng, const SynthSpec& spec) {
    if (!spec.easy_domain && !spec.hard_domain) throw TensorError("synth: needs at least one domain");
    if (spec.seq_len < 4) throw TensorError("synth: sequence length must be at least 4");
    Corpus corpus;
    corpus.seq_len = spec.seq_len;
    corpus.train_fraction = spec.train_fraction;

    if (spec.easy_domain) {
        Rng easy = rng.stream("easy");
        CorpusShard shard;
        shard.name = "easy";
        for (int n = 0; n < spec.sequences_per_domain; ++n) {
            const int motif_len = 4 + easy.uniform_int(5);
            std::array<std::uint8_t, 8> motif{};
            for (int i = 0; i < motif_len; ++i) {
                motif[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(97 + easy.uniform_int(16));
            }
            std::vector<std::uint8_t> seq(static_cast<std::size_t>(spec.seq_len));
            for (int i = 0; i < spec.seq_len; ++i) {
                seq[static_cast<std::size_t>(i)] = motif[static_cast<std::size_t>(i % motif_len)];
            }
            shard.sequences.push_back(std::move(seq));
        }
        corpus.shards.push_back(std::move(shard));
    }
    if (spec.hard_domain) {
        Rng hard = rng.stream("hard");
        CorpusShard shard;
        shard.name = "hard";
        const int half = spec.seq_len / 2;
        for (int n = 0; n < spec.sequences_per_domain; ++n) {
            std::vector<std::uint8_t> seq(static_cast<std::size_t>(spec.seq_len));
            for (int i = 0; i < half; ++i) {
                seq[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(128 + hard.uniform_int(64));
            }
            // Second half copies the first: high byte entropy, predictable
            // only through the long-range dependency.
            for (int i = half; i < spec.seq_len; ++i) {
                seq[static_cast<std::size_t>(i)] = seq[static_cast<std::size_t>(i - half)];
            }
            shard.sequences.push_back(std::move(seq));
        }
        corpus.shards.push_back(std::move(shard));
    }
    return corpus;
}

double shard_byte_entropy(const CorpusShard& shard) {
    std::array<std::int64_t, 256> counts{};
    std::int64_t total = 0;
    for (const auto& seq : shard.sequences) {
        for (std::uint8_t b : seq) {
            ++counts[b];
            ++total;
        }
    }
    double bits = 0.0;
    for (std::int64_t c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / static_cast<double>(total);
        bits -= p * std::log2(p);
    }
    return bits;
}

TokenBatch batch_from_refs(const Corpus& corpus, const std::vector<Corpus::SeqRef>& refs) {
    TokenBatch tb;
    tb.batch = static_cast<int>(refs.size());
    tb.seq = corpus.seq_len;
    tb.tokens.reserve(static_cast<std::size_t>(tb.batch) * tb.seq);
    for (const auto& ref : refs) {
        for (std::uint8_t b : corpus.sequence(ref)) tb.tokens.push_back(static_cast<int>(b));
    }
    return tb;
}

BatchSampler::BatchSampler(const Corpus& corpus, int batch_size, Rng rng)
    : corpus_(&corpus), batch_size_(batch_size), rng_(rng) {
    refs_ = corpus.train_refs();
    if (refs_.empty()) throw TensorError("batch sampler: corpus has no training sequences");
    reshuffle();
}

void BatchSampler::reshuffle() {
    Rng epoch_rng = rng_.stream("epoch", epoch_++);
    std::sort(refs_.begin(), refs_.end(), [](const Corpus::SeqRef& a, const Corpus::SeqRef& b) {
        return a.shard != b.shard ? a.shard < b.shard : a.index < b.index;
    });
    epoch_rng.shuffle(refs_);
    cursor_ = 0;
}

TokenBatch BatchSampler::next() {
    std::vector<Corpus::SeqRef> picked;
    picked.reserve(static_cast<std::size_t>(batch_size_));
    for (int i = 0; i < batch_size_; ++i) {
        if (cursor_ >= refs_.size()) reshuffle();
        picked.push_back(refs_[cursor_++]);
    }
    return batch_from_refs(*corpus_, picked);
}

std::vector<TokenBatch> validation_batches(const Corpus& corpus, int batch_size, int max_batches) {
    std::vector<TokenBatch> out;
    std::vector<Corpus::SeqRef> refs = corpus.validation_refs();
    // Interleave shards so every validation batch sees each domain.
    std::stable_sort(refs.begin(), refs.end(),
                     [](const Corpus::SeqRef& a, const Corpus::SeqRef& b) { return a.index < b.index; });
    for (std::size_t off = 0; off + static_cast<std::size_t>(batch_size) <= refs.size() &&
                              static_cast<int>(out.size()) < max_batches;
         off += static_cast<std::size_t>(batch_size)) {
        std::vector<Corpus::SeqRef> picked(refs.begin() + static_cast<std::ptrdiff_t>(off),
                                           refs.begin() + static_cast<std::ptrdiff_t>(off) + batch_size);
        out.push_back(batch_from_refs(corpus, picked));
    }
    if (out.empty()) throw TensorError("validation: corpus has too few validation sequences");
    return out;
}

}  // namespace elastron
