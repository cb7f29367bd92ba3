#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dqkd/common.hpp"
#include "dqkd/logit_record.hpp"

namespace dqkd::kdcore {

enum class DivergenceKind { ForwardKl, ReverseKl, Mixed };

DivergenceKind divergence_from_string(const std::string& s);
std::string to_string(DivergenceKind k);

struct DivergenceConfig {
  DivergenceKind kind = DivergenceKind::ForwardKl;
  double mix_weight = 0.5;   // lambda, forward share when kind == Mixed
  double temperature = 1.0;  // T > 0
  int top_k = 10;

  void validate() const;
};

// Probability floor applied before every log().
inline constexpr double kProbFloor = 1e-12;

// Softmax over just the K' retained entries: exp(z/T) / sum_k exp(z_k/T),
// computed with max subtraction.
std::vector<double> topk_renormalized_softmax(std::span<const double> logits,
                                              double temperature);

struct ProbPair {
  std::vector<double> p_teacher;
  std::vector<double> p_student;

  void validate() const;
};

double divergence(const ProbPair& pair, const DivergenceConfig& config);

// One aligned position: the teacher's stored top-K' logits and the student's
// logits gathered at the same token ids.
struct PositionPair {
  std::vector<double> teacher_logits;
  std::vector<double> student_logits;
};

// Builds a PositionPair from a teacher record plus the student's full logit
// vector (gather at the record's token ids).
PositionPair gather_position(const logitstore::TopKLogitRecord& teacher,
                             std::span<const double> student_full_logits);

// Mean over positions of the per-position divergence. Positions with empty
// support (everything dropped by alignment) are excluded from the mean.
double token_level_loss(const std::vector<PositionPair>& positions,
                        const DivergenceConfig& config);

double dataset_loss(const std::vector<std::vector<PositionPair>>& batch,
                    const DivergenceConfig& config);

// d(token_level_loss)/d(student logits), one vector per position, same shapes
// as the inputs. Forward KL yields (p_S - p_T) / (T * L) per position.
std::vector<std::vector<double>> loss_gradient_wrt_student_logits(
    const std::vector<PositionPair>& positions, const DivergenceConfig& config);

}  // namespace dqkd::kdcore
