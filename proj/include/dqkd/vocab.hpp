#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dqkd/common.hpp"
#include "dqkd/logit_record.hpp"

namespace dqkd::vocab {

// Convention: id 0 is the reserved unknown token in every vocabulary built
// by this project; tokenize() absorbs out-of-vocabulary units into it.
inline constexpr std::uint32_t kUnknownId = 0;

enum class TokenScheme { Char, Bigram };

TokenScheme scheme_from_string(const std::string& s);
std::string to_string(TokenScheme s);

class Vocabulary {
 public:
  static Vocabulary from_tokens(std::vector<std::string> tokens);
  static Vocabulary load(const std::string& path);  // one token per line, line number = id
  void save(const std::string& path) const;

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::uint32_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::optional<std::uint32_t> id_of(const std::string& token) const;
  // FNV-1a 64 over the tokens in id order, each followed by a 0x00 separator.
  std::uint64_t hash() const { return hash_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::uint32_t> id_of_;
  std::uint64_t hash_ = 0;
};

// Char vocabulary: <unk> plus every distinct character of `text` in first-seen order.
Vocabulary build_char_vocab(const std::string& text);

// Bigram vocabulary: <unk> plus observed bigrams by descending frequency
// (ties by first occurrence). Padded with filler tokens, or truncated, to hit
// target_size exactly when given; fillers never occur in text so they only
// soak up a little softmax mass.
Vocabulary build_bigram_vocab(const std::string& text, std::size_t target_size = 0);

std::vector<std::uint32_t> tokenize(const Vocabulary& v, const std::string& text,
                                    TokenScheme scheme);
std::string detokenize(const Vocabulary& v, const std::vector<std::uint32_t>& ids);

enum class AlignPolicy { Exact, ExactThenPrefix };

AlignPolicy policy_from_string(const std::string& s);
std::string to_string(AlignPolicy p);

struct AlignmentMap {
  std::uint64_t teacher_vocab_hash = 0;
  std::uint64_t student_vocab_hash = 0;
  // index = teacher id; nullopt = dropped.
  std::vector<std::optional<std::uint32_t>> mapping;
  std::size_t matched_count = 0;
  std::size_t dropped_count = 0;

  void save(const std::string& path) const;
  static AlignmentMap load(const std::string& path);
};

// Exact string match on token text; ExactThenPrefix falls back to the student
// token that is the longest strict prefix (length >= 1) of the teacher token.
AlignmentMap align_tokens(const Vocabulary& teacher, const Vocabulary& student,
                          AlignPolicy policy);

AlignmentMap identity_alignment(const Vocabulary& v);

// Maps a teacher-space record into student id space. Dropped entries are
// removed; entries colliding on one student id are merged in probability
// space (the merged logit is the log-sum-exp of the colliding logits, so the
// merged token's share of the record's softmax mass is exactly the sum of its
// parts). Surviving singleton logits are preserved. Result sorted by
// descending value, ties by ascending token id; may be empty if everything
// was dropped.
logitstore::TopKLogitRecord project_topk(const logitstore::TopKLogitRecord& record,
                                         std::uint64_t record_vocab_hash,
                                         const AlignmentMap& map);

}  // namespace dqkd::vocab
