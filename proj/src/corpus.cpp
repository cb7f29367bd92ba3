#include "dqkd/corpus.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace dqkd::corpus {

using nlohmann::json;

std::string to_string(TaskCategory c) {
  switch (c) {
    case TaskCategory::Writing: return "Writing";
    case TaskCategory::Roleplay: return "Roleplay";
    case TaskCategory::Reasoning: return "Reasoning";
    case TaskCategory::Mathematics: return "Mathematics";
    case TaskCategory::Coding: return "Coding";
    case TaskCategory::Extraction: return "Extraction";
    case TaskCategory::Stem: return "STEM";
    case TaskCategory::Humanity: return "Humanity";
    case TaskCategory::Other: return "Other";
  }
  throw ValidationError("unknown task category value");
}

TaskCategory category_from_string(const std::string& s) {
  for (auto c : kAllCategories) {
    if (to_string(c) == s) return c;
  }
  throw ParseError("unknown task_category: '" + s + "'");
}

std::string to_string(RecordSource s) {
  switch (s) {
    case RecordSource::Seed: return "seed";
    case RecordSource::Expanded: return "expanded";
    case RecordSource::Rewritten: return "rewritten";
  }
  throw ValidationError("unknown record source value");
}

RecordSource source_from_string(const std::string& s) {
  if (s == "seed") return RecordSource::Seed;
  if (s == "expanded") return RecordSource::Expanded;
  if (s == "rewritten") return RecordSource::Rewritten;
  throw ParseError("unknown source: '" + s + "'");
}

double JudgeScores::aggregate_rounded() const {
  return std::round(aggregate() * 10.0) / 10.0;
}

void JudgeScores::validate() const {
  auto in_range = [](int v) { return v >= 1 && v <= 10; };
  if (!in_range(informativeness) || !in_range(helpfulness) || !in_range(generalization)) {
    throw ValidationError("judge scores must be integers in [1,10]");
  }
}

const InstructionRecord* Corpus::find(std::uint64_t id) const {
  for (const auto& r : records) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

void validate_corpus(const Corpus& c) {
  std::unordered_map<std::uint64_t, const InstructionRecord*> by_id;
  by_id.reserve(c.records.size());
  const InstructionRecord* prev = nullptr;
  for (const auto& r : c.records) {
    if (prev && r.id <= prev->id) {
      throw ValidationError("record ids must be strictly increasing; id " +
                            std::to_string(r.id) + " follows " + std::to_string(prev->id));
    }
    if (!by_id.emplace(r.id, &r).second) {
      throw ValidationError("duplicate record id " + std::to_string(r.id));
    }
    prev = &r;
  }
  for (const auto& r : c.records) {
    bool derived = r.source != RecordSource::Seed;
    if (derived && !r.parent_id) {
      throw ValidationError("record " + std::to_string(r.id) +
                            " is derived but has no parent_id");
    }
    if (r.parent_id) {
      auto it = by_id.find(*r.parent_id);
      if (it == by_id.end()) {
        throw ValidationError("dangling parent_id " + std::to_string(*r.parent_id) +
                              " on record " + std::to_string(r.id));
      }
      if (derived && it->second->task_category != r.task_category) {
        throw ValidationError("record " + std::to_string(r.id) +
                              " does not preserve its parent's task_category");
      }
    }
    if (r.scores) r.scores->validate();
  }
  // Lineage acyclicity: walk parent chains, a repeat id means a cycle.
  for (const auto& r : c.records) {
    std::unordered_set<std::uint64_t> seen;
    const InstructionRecord* cur = &r;
    while (cur->parent_id) {
      if (!seen.insert(cur->id).second) {
        throw ValidationError("lineage cycle through record " + std::to_string(cur->id));
      }
      cur = by_id.at(*cur->parent_id);
    }
  }
}

namespace {

// Renders the rounded aggregate with exactly one decimal digit so the
// canonical byte form never drifts with double formatting.
std::string format_aggregate(const JudgeScores& s) {
  long tenths = std::lround(s.aggregate() * 10.0);
  std::ostringstream os;
  os << tenths / 10 << '.' << tenths % 10;
  return os.str();
}

}  // namespace

std::string record_to_json_line(const InstructionRecord& r) {
  // json objects keep keys sorted, which is the canonical field order.
  json j;
  j["id"] = r.id;
  j["instruction"] = r.instruction;
  j["response"] = r.response;
  j["task_category"] = to_string(r.task_category);
  j["source"] = to_string(r.source);
  if (r.parent_id) j["parent_id"] = *r.parent_id;
  if (r.scores) {
    r.scores->validate();
    json s;
    s["informativeness"] = r.scores->informativeness;
    s["helpfulness"] = r.scores->helpfulness;
    s["generalization"] = r.scores->generalization;
    j["scores"] = s;
  }
  if (r.verified) j["verified"] = *r.verified;
  std::string out;
  try {
    out = j.dump();
  } catch (const json::type_error& e) {
    throw ValidationError(std::string("record ") + std::to_string(r.id) +
                          " is not serializable (invalid UTF-8?): " + e.what());
  }
  if (r.scores) {
    // Splice the aggregate into the scores object with fixed formatting.
    std::string needle = "\"scores\":{";
    auto pos = out.find(needle);
    out.insert(pos + needle.size(), "\"aggregate\":" + format_aggregate(*r.scores) + ",");
  }
  return out;
}

InstructionRecord record_from_json_line(const std::string& line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
  }
  auto fail = [&](const std::string& msg) -> ParseError {
    return ParseError("line " + std::to_string(line_no) + ": " + msg);
  };
  if (!j.is_object()) throw fail("expected a JSON object");
  for (auto& [k, v] : j.items()) {
    static const std::unordered_set<std::string> known = {
        "id", "instruction", "response", "task_category",
        "source", "parent_id", "scores", "verified"};
    if (!known.count(k)) throw fail("unknown field '" + k + "'");
    (void)v;
  }
  InstructionRecord r;
  try {
    r.id = j.at("id").get<std::uint64_t>();
    r.instruction = j.at("instruction").get<std::string>();
    r.response = j.at("response").get<std::string>();
    r.task_category = category_from_string(j.at("task_category").get<std::string>());
    r.source = source_from_string(j.at("source").get<std::string>());
    if (j.contains("parent_id")) r.parent_id = j["parent_id"].get<std::uint64_t>();
    if (j.contains("verified")) r.verified = j["verified"].get<bool>();
    if (j.contains("scores")) {
      const auto& s = j["scores"];
      JudgeScores js;
      js.informativeness = s.at("informativeness").get<int>();
      js.helpfulness = s.at("helpfulness").get<int>();
      js.generalization = s.at("generalization").get<int>();
      js.validate();
      if (s.contains("aggregate")) {
        double stored = s["aggregate"].get<double>();
        if (std::abs(stored - js.aggregate_rounded()) > 1e-9) {
          throw fail("scores.aggregate inconsistent with component scores");
        }
      }
      r.scores = js;
    }
  } catch (const json::exception& e) {
    throw fail(e.what());
  }
  return r;
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus file: " + path);
  Corpus c;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    c.records.push_back(record_from_json_line(line, line_no));
  }
  validate_corpus(c);
  auto slash = path.find_last_of('/');
  c.meta.name = slash == std::string::npos ? path : path.substr(slash + 1);
  return c;
}

void save_corpus(const Corpus& c, const std::string& path) {
  validate_corpus(c);
  std::string payload;
  for (const auto& r : c.records) {
    payload += record_to_json_line(r);
    payload += '\n';
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write corpus file: " + path);
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("short write to corpus file: " + path);
}

std::map<TaskCategory, std::size_t> category_histogram(const Corpus& c) {
  std::map<TaskCategory, std::size_t> h;
  for (auto cat : kAllCategories) h[cat] = 0;
  for (const auto& r : c.records) h[r.task_category] += 1;
  return h;
}

}  // namespace dqkd::corpus
