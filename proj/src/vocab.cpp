#include "dqkd/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace dqkd::vocab {

using nlohmann::json;

TokenScheme scheme_from_string(const std::string& s) {
  if (s == "char") return TokenScheme::Char;
  if (s == "bigram") return TokenScheme::Bigram;
  throw ParseError("unknown token scheme: '" + s + "'");
}

std::string to_string(TokenScheme s) {
  return s == TokenScheme::Char ? "char" : "bigram";
}

AlignPolicy policy_from_string(const std::string& s) {
  if (s == "exact") return AlignPolicy::Exact;
  if (s == "exact_then_prefix") return AlignPolicy::ExactThenPrefix;
  throw ParseError("unknown alignment policy: '" + s + "'");
}

std::string to_string(AlignPolicy p) {
  return p == AlignPolicy::Exact ? "exact" : "exact_then_prefix";
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.empty()) throw ValidationError("vocabulary must not be empty");
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.id_of_.reserve(v.tokens_.size());
  std::uint64_t h = kFnvOffset;
  for (std::uint32_t id = 0; id < v.tokens_.size(); ++id) {
    const auto& t = v.tokens_[id];
    if (t.empty()) throw ValidationError("empty token at id " + std::to_string(id));
    if (t.find('\n') != std::string::npos) {
      throw ValidationError("token at id " + std::to_string(id) + " contains a newline");
    }
    if (!v.id_of_.emplace(t, id).second) {
      throw ValidationError("duplicate token '" + t + "'");
    }
    h = fnv1a64(t, h);
    h = fnv1a64_byte(0x00, h);
  }
  v.hash_ = h;
  return v;
}

std::optional<std::uint32_t> Vocabulary::id_of(const std::string& token) const {
  auto it = id_of_.find(token);
  if (it == id_of_.end()) return std::nullopt;
  return it->second;
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocabulary file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return from_tokens(std::move(tokens));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write vocabulary file: " + path);
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw IoError("short write to vocabulary file: " + path);
}

Vocabulary build_char_vocab(const std::string& text) {
  std::vector<std::string> tokens = {"<unk>"};
  std::unordered_map<char, bool> seen;
  for (char c : text) {
    if (!seen[c]) {
      seen[c] = true;
      tokens.emplace_back(1, c);
    }
  }
  return Vocabulary::from_tokens(std::move(tokens));
}

Vocabulary build_bigram_vocab(const std::string& text, std::size_t target_size) {
  struct Stat {
    std::size_t count = 0;
    std::size_t first_pos = 0;
  };
  std::map<std::string, Stat> stats;
  for (std::size_t i = 0; i + 1 < text.size(); i += 2) {
    std::string bg = text.substr(i, 2);
    auto [it, fresh] = stats.try_emplace(bg);
    if (fresh) it->second.first_pos = i;
    it->second.count += 1;
  }
  std::vector<std::pair<std::string, Stat>> by_freq(stats.begin(), stats.end());
  std::sort(by_freq.begin(), by_freq.end(), [](const auto& a, const auto& b) {
    if (a.second.count != b.second.count) return a.second.count > b.second.count;
    return a.second.first_pos < b.second.first_pos;
  });
  std::vector<std::string> tokens = {"<unk>"};
  for (const auto& [bg, st] : by_freq) {
    if (target_size > 0 && tokens.size() >= target_size) break;
    tokens.push_back(bg);
  }
  // Deterministic fillers to pad up to an exact size.
  for (std::size_t i = 0; target_size > 0 && tokens.size() < target_size; ++i) {
    std::ostringstream os;
    os << "~" << i;
    tokens.push_back(os.str());
  }
  return Vocabulary::from_tokens(std::move(tokens));
}

std::vector<std::uint32_t> tokenize(const Vocabulary& v, const std::string& text,
                                    TokenScheme scheme) {
  std::vector<std::uint32_t> ids;
  std::size_t width = scheme == TokenScheme::Char ? 1 : 2;
  for (std::size_t i = 0; i < text.size(); i += width) {
    std::string unit = text.substr(i, width);
    ids.push_back(v.id_of(unit).value_or(kUnknownId));
  }
  return ids;
}

std::string detokenize(const Vocabulary& v, const std::vector<std::uint32_t>& ids) {
  std::string out;
  for (auto id : ids) out += v.token(id);
  return out;
}

AlignmentMap align_tokens(const Vocabulary& teacher, const Vocabulary& student,
                          AlignPolicy policy) {
  AlignmentMap m;
  m.teacher_vocab_hash = teacher.hash();
  m.student_vocab_hash = student.hash();
  m.mapping.resize(teacher.size());
  for (std::uint32_t tid = 0; tid < teacher.size(); ++tid) {
    const std::string& tok = teacher.token(tid);
    std::optional<std::uint32_t> sid = student.id_of(tok);
    if (!sid && policy == AlignPolicy::ExactThenPrefix) {
      // Longest strict prefix of length >= 1; lengths are distinct so there
      // is never a tie.
      for (std::size_t len = tok.size() - 1; len >= 1; --len) {
        sid = student.id_of(tok.substr(0, len));
        if (sid) break;
        if (len == 1) break;
      }
    }
    m.mapping[tid] = sid;
    if (sid) {
      m.matched_count += 1;
    } else {
      m.dropped_count += 1;
    }
  }
  return m;
}

AlignmentMap identity_alignment(const Vocabulary& v) {
  return align_tokens(v, v, AlignPolicy::Exact);
}

void AlignmentMap::save(const std::string& path) const {
  json j;
  j["teacher_vocab_hash"] = teacher_vocab_hash;
  j["student_vocab_hash"] = student_vocab_hash;
  j["matched_count"] = matched_count;
  j["dropped_count"] = dropped_count;
  json arr = json::array();
  for (const auto& sid : mapping) {
    if (sid) {
      arr.push_back(*sid);
    } else {
      arr.push_back(nullptr);
    }
  }
  j["mapping"] = arr;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write alignment map: " + path);
  out << j.dump(2) << '\n';
}

AlignmentMap AlignmentMap::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open alignment map: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("alignment map: ") + e.what());
  }
  AlignmentMap m;
  try {
    m.teacher_vocab_hash = j.at("teacher_vocab_hash").get<std::uint64_t>();
    m.student_vocab_hash = j.at("student_vocab_hash").get<std::uint64_t>();
    m.matched_count = j.at("matched_count").get<std::size_t>();
    m.dropped_count = j.at("dropped_count").get<std::size_t>();
    for (const auto& e : j.at("mapping")) {
      if (e.is_null()) {
        m.mapping.emplace_back(std::nullopt);
      } else {
        m.mapping.emplace_back(e.get<std::uint32_t>());
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("alignment map: ") + e.what());
  }
  if (m.matched_count + m.dropped_count != m.mapping.size()) {
    throw ValidationError("alignment map counts do not cover the teacher vocabulary");
  }
  return m;
}

logitstore::TopKLogitRecord project_topk(const logitstore::TopKLogitRecord& record,
                                         std::uint64_t record_vocab_hash,
                                         const AlignmentMap& map) {
  if (record_vocab_hash != map.teacher_vocab_hash) {
    throw ValidationError("record vocabulary hash does not match the alignment map");
  }
  record.validate();
  // Collect surviving entries per student id. Colliding logits merge via
  // log-sum-exp: downstream softmax then sees exactly the sum of their
  // probability masses, and singleton values pass through untouched.
  std::map<std::uint32_t, std::vector<double>> by_student;
  for (const auto& e : record.entries) {
    if (e.token_id >= map.mapping.size()) {
      throw ValidationError("record token id " + std::to_string(e.token_id) +
                            " outside the teacher vocabulary");
    }
    const auto& sid = map.mapping[e.token_id];
    if (sid) by_student[*sid].push_back(static_cast<double>(e.logit));
  }
  logitstore::TopKLogitRecord out;
  out.entries.reserve(by_student.size());
  for (const auto& [sid, logits] : by_student) {
    double value;
    if (logits.size() == 1) {
      value = logits[0];
    } else {
      double mx = *std::max_element(logits.begin(), logits.end());
      double s = 0.0;
      for (double v : logits) s += std::exp(v - mx);
      value = mx + std::log(s);
    }
    out.entries.push_back({sid, static_cast<float>(value)});
  }
  std::sort(out.entries.begin(), out.entries.end(), [](const auto& a, const auto& b) {
    if (a.logit != b.logit) return a.logit > b.logit;
    return a.token_id < b.token_id;
  });
  return out;
}

}  // namespace dqkd::vocab
