#pragma once

#include <cstdint>
#include <vector>

#include "dqkd/common.hpp"

namespace dqkd::logitstore {

struct TopKEntry {
  std::uint32_t token_id = 0;
  float logit = 0.0f;

  bool operator==(const TopKEntry&) const = default;
};

// Per-position sparse next-token distribution: the K' highest-valued logits,
// sorted by descending value, ties by ascending token id.
struct TopKLogitRecord {
  std::vector<TopKEntry> entries;

  std::size_t size() const { return entries.size(); }
  void validate() const;

  bool operator==(const TopKLogitRecord&) const = default;
};

}  // namespace dqkd::logitstore
