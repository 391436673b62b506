#include "langlab/bpe.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <vector>

#include "langlab/error.hpp"

namespace langlab {

namespace {

uint64_t pack_pair(int32_t a, int32_t b) {
    return (static_cast<uint64_t>(static_cast<uint32_t>(a)) << 32) | static_cast<uint32_t>(b);
}

bool is_ws(unsigned char c) { return std::isspace(c) != 0; }

std::vector<int32_t> to_byte_ids(std::string_view s) {
    std::vector<int32_t> ids;
    ids.reserve(s.size());
    for (unsigned char c : s) ids.push_back(static_cast<int32_t>(c));
    return ids;
}

// Replace every non-overlapping (a, b) with z, leftmost-first.
void apply_merge(std::vector<int32_t>& seq, int32_t a, int32_t b, int32_t z) {
    size_t w = 0;
    for (size_t i = 0; i < seq.size();) {
        if (i + 1 < seq.size() && seq[i] == a && seq[i + 1] == b) {
            seq[w++] = z;
            i += 2;
        } else {
            seq[w++] = seq[i++];
        }
    }
    seq.resize(w);
}

}  // namespace

int32_t BpeVocab::special_id(std::string_view name) const {
    for (size_t i = 0; i < specials.size(); ++i) {
        if (specials[i] == name) return static_cast<int32_t>(256 + merges.size() + i);
    }
    return -1;
}

BpeVocab train_bpe(const std::vector<std::string>& corpus, size_t target_vocab,
                   const std::vector<std::string>& specials, const BpeTrainOptions& options) {
    if (target_vocab < 256 + specials.size()) {
        throw ConfigError("train_bpe: target vocab smaller than 256 bytes + specials");
    }
    if (corpus.empty()) throw DataError("train_bpe: empty corpus");

    // Split into count units (documents, or whitespace pieces within them)
    // and deduplicate: identical units share one sequence with a multiplicity.
    std::unordered_map<std::string_view, size_t> unit_index;
    std::vector<std::vector<int32_t>> seqs;
    std::vector<int64_t> mult;
    auto add_unit = [&](std::string_view u) {
        if (u.empty()) return;
        auto [it, inserted] = unit_index.try_emplace(u, seqs.size());
        if (inserted) {
            seqs.push_back(to_byte_ids(u));
            mult.push_back(1);
        } else {
            ++mult[it->second];
        }
    };
    for (const std::string& doc : corpus) {
        if (!options.whitespace_presplit) {
            add_unit(doc);
            continue;
        }
        size_t start = 0;
        for (size_t i = 1; i < doc.size(); ++i) {
            if (is_ws(doc[i]) && !is_ws(doc[i - 1])) {
                add_unit(std::string_view(doc).substr(start, i - start));
                start = i;
            }
        }
        add_unit(std::string_view(doc).substr(start));
    }

    BpeVocab vocab;
    vocab.specials = specials;
    const size_t budget = target_vocab - 256 - specials.size();
    std::unordered_map<uint64_t, int64_t> counts;
    for (size_t m = 0; m < budget; ++m) {
        counts.clear();
        for (size_t s = 0; s < seqs.size(); ++s) {
            const auto& seq = seqs[s];
            for (size_t i = 0; i + 1 < seq.size(); ++i) {
                counts[pack_pair(seq[i], seq[i + 1])] += mult[s];
            }
        }
        int64_t best_count = 0;
        uint64_t best_pair = 0;
        for (const auto& [pair, count] : counts) {
            if (count > best_count || (count == best_count && pair < best_pair)) {
                best_count = count;
                best_pair = pair;
            }
        }
        if (best_count < 2) break;
        const auto a = static_cast<int32_t>(best_pair >> 32);
        const auto b = static_cast<int32_t>(best_pair & 0xffffffffu);
        const auto z = static_cast<int32_t>(256 + vocab.merges.size());
        vocab.merges.emplace_back(a, b);
        for (auto& seq : seqs) apply_merge(seq, a, b, z);
    }
    return vocab;
}

std::vector<int32_t> encode(const BpeVocab& vocab, std::string_view text) {
    std::vector<int32_t> seq = to_byte_ids(text);
    if (seq.size() < 2) return seq;
    // Ascending rank order is exact: a merge's output id can only appear in
    // later-rank pairs, so earlier pairs never re-arise. Presence flags prune
    // ranks whose parts cannot occur (flags may go stale, costing only a scan).
    std::vector<bool> present(vocab.vocab_size(), false);
    for (int32_t id : seq) present[static_cast<size_t>(id)] = true;
    for (size_t r = 0; r < vocab.merges.size(); ++r) {
        const auto [a, b] = vocab.merges[r];
        if (!present[static_cast<size_t>(a)] || !present[static_cast<size_t>(b)]) continue;
        const auto z = static_cast<int32_t>(256 + r);
        const size_t before = seq.size();
        apply_merge(seq, a, b, z);
        if (seq.size() != before) present[static_cast<size_t>(z)] = true;
    }
    return seq;
}

std::string decode(const BpeVocab& vocab, const std::vector<int32_t>& ids, bool allow_specials) {
    // Byte expansion per id, built once per call; cheap at our vocab sizes.
    const auto n_merges = vocab.merges.size();
    std::vector<std::string> expansion(256 + n_merges);
    for (int i = 0; i < 256; ++i) expansion[i] = std::string(1, static_cast<char>(i));
    for (size_t r = 0; r < n_merges; ++r) {
        const auto [a, b] = vocab.merges[r];
        expansion[256 + r] = expansion[static_cast<size_t>(a)] + expansion[static_cast<size_t>(b)];
    }
    std::string out;
    for (int32_t id : ids) {
        if (id < 0 || static_cast<size_t>(id) >= vocab.vocab_size()) {
            throw ContractError("decode: id " + std::to_string(id) + " out of range");
        }
        if (vocab.is_special(id)) {
            if (!allow_specials) {
                throw ContractError("decode: special id " + std::to_string(id) +
                                    " without allow_specials");
            }
            out += vocab.specials[static_cast<size_t>(id) - 256 - n_merges];
        } else {
            out += expansion[static_cast<size_t>(id)];
        }
    }
    return out;
}

void save_vocab(const BpeVocab& vocab, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("save_vocab: cannot open '" + path + "' for writing");
    f << "bpe-v1 " << vocab.vocab_size() << ' ' << vocab.specials.size() << '\n';
    for (const auto& [a, b] : vocab.merges) f << a << ' ' << b << '\n';
    f << "#specials\n";
    for (const auto& s : vocab.specials) f << s << '\n';
    if (!f.good()) throw DataError("save_vocab: write to '" + path + "' failed");
}

BpeVocab load_vocab(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("load_vocab: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(f, line)) throw FormatError("load_vocab: empty file");
    std::istringstream header(line);
    std::string magic;
    size_t vocab_size = 0;
    size_t n_specials = 0;
    if (!(header >> magic >> vocab_size >> n_specials) || magic != "bpe-v1") {
        throw FormatError("load_vocab: bad header '" + line + "'");
    }
    if (vocab_size < 256 + n_specials) {
        throw FormatError("load_vocab: vocab size smaller than bytes + specials");
    }
    BpeVocab vocab;
    const size_t n_merges = vocab_size - 256 - n_specials;
    for (size_t r = 0; r < n_merges; ++r) {
        if (!std::getline(f, line)) throw FormatError("load_vocab: truncated merge list");
        std::istringstream row(line);
        int32_t a = 0;
        int32_t b = 0;
        if (!(row >> a >> b)) throw FormatError("load_vocab: bad merge line '" + line + "'");
        const auto limit = static_cast<int32_t>(256 + r);
        if (a < 0 || a >= limit || b < 0 || b >= limit) {
            throw FormatError("load_vocab: merge " + std::to_string(r) +
                              " references an undefined id");
        }
        vocab.merges.emplace_back(a, b);
    }
    if (!std::getline(f, line) || line != "#specials") {
        throw FormatError("load_vocab: missing #specials section");
    }
    for (size_t i = 0; i < n_specials; ++i) {
        if (!std::getline(f, line) || line.empty()) {
            throw FormatError("load_vocab: truncated specials list");
        }
        vocab.specials.push_back(line);
    }
    return vocab;
}

}  // namespace langlab
