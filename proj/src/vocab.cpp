#include "bridgecond/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <stdexcept>

#include "bridgecond/scene.hpp"

namespace bridgecond {

namespace {

VocabSpec from_words(std::vector<std::string> words, int r) {
  VocabSpec v;
  v.words = std::move(words);
  v.base_size = static_cast<int>(v.words.size());
  if (r < 1) throw std::invalid_argument("vocab: r must be >= 1");
  v.r = r;
  for (int i = 0; i < v.base_size; ++i) {
    if (!v.index.emplace(v.words[static_cast<std::size_t>(i)], i).second)
      throw std::invalid_argument("vocab: duplicate word '" + v.words[static_cast<std::size_t>(i)] + "'");
  }
  return v;
}

}  // namespace

VocabSpec build_vocab(int r_mm_tokens) {
  std::vector<std::string> words = {"<unk>"};
  auto push = [&words](const char* w) {
    if (std::find(words.begin(), words.end(), w) == words.end()) words.emplace_back(w);
  };
  for (const auto& c : palette()) push(c.name);
  for (const char* k : {"circle", "square", "triangle"}) push(k);
  // instruction templates and their simple-mode synonyms
  for (const char* w : {"remove", "add", "replace", "the", "with", "a", "an",
                        "delete", "erase", "take", "away", "get", "rid", "of",
                        "insert", "place", "put", "in", "draw",
                        "swap", "for", "substitute", "change", "into", "turn"})
    push(w);
  // detailed captions and reasoning forms
  for (const char* w : {"near", "image", "colored", "small", "medium", "large",
                        "top", "bottom", "left", "right", "center",
                        "what", "is", "largest", "smallest", "object", "it", "please"})
    push(w);
  // global captions
  for (const char* w : {"scene", "shape", "shapes", "on", "background",
                        "one", "two", "three", "four", "zero"})
    push(w);
  return from_words(std::move(words), r_mm_tokens);
}

VocabSpec load_vocab(const std::string& path, int r_mm_tokens) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_vocab: cannot open " + path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) words.push_back(line);
  }
  return from_words(std::move(words), r_mm_tokens);
}

void write_vocab(const VocabSpec& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_vocab: cannot open " + path);
  for (const auto& w : vocab.words) out << w << "\n";
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    while (!cur.empty() && (cur.back() == '.' || cur.back() == ',' || cur.back() == '!' || cur.back() == '?'))
      cur.pop_back();
    std::size_t start = 0;
    while (start < cur.size() &&
           (cur[start] == '.' || cur[start] == ',' || cur[start] == '!' || cur[start] == '?'))
      ++start;
    if (start) cur.erase(0, start);
    if (!cur.empty()) out.push_back(cur);
    cur.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  return out;
}

std::vector<int> tokenize(const VocabSpec& vocab, const std::string& text) {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) {
    auto it = vocab.index.find(w);
    ids.push_back(it == vocab.index.end() ? vocab.unk_id() : it->second);
  }
  return ids;
}

std::vector<int> append_mm_tokens(const VocabSpec& vocab, std::vector<int> instr_ids) {
  for (int id : instr_ids)
    if (vocab.is_mm(id))
      throw std::invalid_argument("append_mm_tokens: instruction already contains [MM] id " +
                                  std::to_string(id));
  for (int i = 0; i < vocab.r; ++i) instr_ids.push_back(vocab.mm_id(i));
  return instr_ids;
}

}  // namespace bridgecond
