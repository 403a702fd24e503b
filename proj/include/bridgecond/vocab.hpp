#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace bridgecond {

// Word-level vocabulary over the synthetic world's closed grammar, with r
// [MM] ids appended after the base words. [MM] ids are contiguous and last.
struct VocabSpec {
  int base_size = 0;
  int r = 0;
  std::vector<std::string> words;  // base words, index = id
  std::unordered_map<std::string, int> index;

  int total() const { return base_size + r; }
  int unk_id() const { return 0; }
  int mm_id(int i) const { return base_size + i; }  // i in [0, r)
  bool is_mm(int id) const { return id >= base_size && id < total(); }

  std::vector<int> mm_token_ids() const {
    std::vector<int> ids(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) ids[static_cast<std::size_t>(i)] = mm_id(i);
    return ids;
  }
};

// Canonical vocabulary assembled from the grammar tables.
VocabSpec build_vocab(int r_mm_tokens);

// Loads a newline-delimited word list; ids follow line order.
VocabSpec load_vocab(const std::string& path, int r_mm_tokens);
void write_vocab(const VocabSpec& vocab, const std::string& path);

// Lowercases, splits on whitespace, strips edge punctuation (.,!?).
std::vector<std::string> split_words(const std::string& text);

// Word ids for an instruction; unknown words map to <unk>.
std::vector<int> tokenize(const VocabSpec& vocab, const std::string& text);

// Appends MM_1..MM_r in order; rejects sequences that already contain [MM] ids.
std::vector<int> append_mm_tokens(const VocabSpec& vocab, std::vector<int> instr_ids);

}  // namespace bridgecond
