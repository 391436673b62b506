#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace langlab {

// Byte-level BPE vocabulary. Ids 0-255 are raw bytes, merge rank r defines
// id 256 + r, and special ids follow the merges. Immutable once trained, so
// concurrent encode/decode is safe.
struct BpeVocab {
    std::vector<std::pair<int32_t, int32_t>> merges;
    std::vector<std::string> specials;

    size_t vocab_size() const { return 256 + merges.size() + specials.size(); }
    int32_t first_special_id() const { return static_cast<int32_t>(256 + merges.size()); }
    bool is_special(int32_t id) const {
        return id >= first_special_id() && static_cast<size_t>(id) < vocab_size();
    }
    // -1 when no special with this name exists.
    int32_t special_id(std::string_view name) const;

    bool operator==(const BpeVocab&) const = default;
};

struct BpeTrainOptions {
    // GPT-2-style pre-splitting: a new piece starts at each whitespace byte
    // that follows a non-whitespace byte, so spaces lead the next piece and
    // merge counts never span piece boundaries. Affects training counts only;
    // encode always runs on the raw byte stream.
    bool whitespace_presplit = false;
};

// Learns target_vocab - 256 - |specials| merges (fewer if no adjacent pair
// occurs at least twice). Each merge takes the highest-count pair, breaking
// ties by smallest (left_id, right_id). Pairs never span document boundaries.
BpeVocab train_bpe(const std::vector<std::string>& corpus, size_t target_vocab,
                   const std::vector<std::string>& specials = {},
                   const BpeTrainOptions& options = {});

// Applies merges in rank order, leftmost-first within a rank. Never fails:
// unmergeable bytes stay as base ids. Never emits special ids.
std::vector<int32_t> encode(const BpeVocab& vocab, std::string_view text);

// Inverse of encode. Special ids are rejected unless allow_specials is set,
// in which case they expand to their registered names.
std::string decode(const BpeVocab& vocab, const std::vector<int32_t>& ids,
                   bool allow_specials = false);

// Text format: line 1 `bpe-v1 <vocab_size> <n_specials>`, one `<left> <right>`
// merge per line in rank order, then a `#specials` line followed by one
// special name per line. Exact and diffable.
void save_vocab(const BpeVocab& vocab, const std::string& path);
BpeVocab load_vocab(const std::string& path);

}  // namespace langlab
