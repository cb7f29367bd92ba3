#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dqkd/common.hpp"

namespace dqkd::corpus {

enum class TaskCategory {
  Writing,
  Roleplay,
  Reasoning,
  Mathematics,
  Coding,
  Extraction,
  Stem,
  Humanity,
  Other,
};

inline constexpr std::size_t kNumCategories = 9;

inline constexpr std::array<TaskCategory, kNumCategories> kAllCategories = {
    TaskCategory::Writing,    TaskCategory::Roleplay,  TaskCategory::Reasoning,
    TaskCategory::Mathematics, TaskCategory::Coding,   TaskCategory::Extraction,
    TaskCategory::Stem,       TaskCategory::Humanity,  TaskCategory::Other,
};

std::string to_string(TaskCategory c);
TaskCategory category_from_string(const std::string& s);

enum class RecordSource { Seed, Expanded, Rewritten };

std::string to_string(RecordSource s);
RecordSource source_from_string(const std::string& s);

struct JudgeScores {
  int informativeness = 1;  // 1..10
  int helpfulness = 1;      // 1..10
  int generalization = 1;   // 1..10

  double aggregate() const {
    return (informativeness + helpfulness + generalization) / 3.0;
  }
  // On-disk form: one decimal place.
  double aggregate_rounded() const;
  void validate() const;

  bool operator==(const JudgeScores&) const = default;
};

struct InstructionRecord {
  std::uint64_t id = 0;
  std::string instruction;
  std::string response;
  TaskCategory task_category = TaskCategory::Other;
  RecordSource source = RecordSource::Seed;
  std::optional<std::uint64_t> parent_id;
  std::optional<JudgeScores> scores;
  std::optional<bool> verified;

  bool operator==(const InstructionRecord&) const = default;
};

struct CorpusMeta {
  std::string name;
  std::string created_at;  // process-local provenance, not serialized
  std::string stage;
};

// Immutable after load; mutation means building a new corpus.
struct Corpus {
  std::vector<InstructionRecord> records;
  CorpusMeta meta;

  std::size_t size() const { return records.size(); }
  const InstructionRecord* find(std::uint64_t id) const;
};

// Checks id uniqueness, strictly increasing on-disk order, parent resolvability,
// lineage acyclicity and category preservation along parent edges.
void validate_corpus(const Corpus& c);

// JSONL, one record per line, canonical key order, UTF-8.
Corpus load_corpus(const std::string& path);
void save_corpus(const Corpus& c, const std::string& path);

// Serialization of a single record (exposed so tests can pin the canonical form).
std::string record_to_json_line(const InstructionRecord& r);
InstructionRecord record_from_json_line(const std::string& line, std::size_t line_no);

std::map<TaskCategory, std::size_t> category_histogram(const Corpus& c);

}  // namespace dqkd::corpus
