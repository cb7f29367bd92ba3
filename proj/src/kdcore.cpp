#include "dqkd/kdcore.hpp"

#include <algorithm>
#include <cmath>

namespace dqkd::kdcore {

DivergenceKind divergence_from_string(const std::string& s) {
  if (s == "forward_kl") return DivergenceKind::ForwardKl;
  if (s == "reverse_kl") return DivergenceKind::ReverseKl;
  if (s == "mixed") return DivergenceKind::Mixed;
  throw ParseError("unknown divergence kind: '" + s + "'");
}

std::string to_string(DivergenceKind k) {
  switch (k) {
    case DivergenceKind::ForwardKl: return "forward_kl";
    case DivergenceKind::ReverseKl: return "reverse_kl";
    case DivergenceKind::Mixed: return "mixed";
  }
  throw ValidationError("unknown divergence kind value");
}

void DivergenceConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ValidationError("temperature must be finite and > 0");
  }
  if (!(mix_weight >= 0.0 && mix_weight <= 1.0)) {
    throw ValidationError("mix_weight must lie in [0,1]");
  }
  if (top_k < 1) throw ValidationError("top_k must be >= 1");
}

std::vector<double> topk_renormalized_softmax(std::span<const double> logits,
                                              double temperature) {
  if (logits.empty()) throw ValidationError("softmax over empty logit vector");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ValidationError("temperature must be finite and > 0");
  }
  double mx = logits[0];
  for (double z : logits) {
    if (!std::isfinite(z)) throw ValidationError("non-finite logit in softmax input");
    mx = std::max(mx, z);
  }
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((logits[i] - mx) / temperature);
    total += p[i];
  }
  for (auto& v : p) v /= total;
  return p;
}

void ProbPair::validate() const {
  if (p_teacher.size() != p_student.size()) {
    throw ValidationError("probability vectors differ in length");
  }
  if (p_teacher.empty()) throw ValidationError("empty probability pair");
  auto check = [](const std::vector<double>& p, const char* which) {
    double total = 0.0;
    for (double v : p) {
      if (!(v > 0.0)) throw ValidationError(std::string(which) + " has a non-positive entry");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw ValidationError(std::string(which) + " does not sum to 1");
    }
  };
  check(p_teacher, "p_teacher");
  check(p_student, "p_student");
}

namespace {

inline double floored_log(double p) { return std::log(std::max(p, kProbFloor)); }

double forward_kl(const ProbPair& pair) {
  double d = 0.0;
  for (std::size_t i = 0; i < pair.p_teacher.size(); ++i) {
    d += pair.p_teacher[i] * (floored_log(pair.p_teacher[i]) - floored_log(pair.p_student[i]));
  }
  return d;
}

double reverse_kl(const ProbPair& pair) {
  double d = 0.0;
  for (std::size_t i = 0; i < pair.p_teacher.size(); ++i) {
    d += pair.p_student[i] * (floored_log(pair.p_student[i]) - floored_log(pair.p_teacher[i]));
  }
  return d;
}

}  // namespace

double divergence(const ProbPair& pair, const DivergenceConfig& config) {
  config.validate();
  pair.validate();
  switch (config.kind) {
    case DivergenceKind::ForwardKl: return forward_kl(pair);
    case DivergenceKind::ReverseKl: return reverse_kl(pair);
    case DivergenceKind::Mixed:
      return config.mix_weight * forward_kl(pair) +
             (1.0 - config.mix_weight) * reverse_kl(pair);
  }
  throw ValidationError("unknown divergence kind value");
}

PositionPair gather_position(const logitstore::TopKLogitRecord& teacher,
                             std::span<const double> student_full_logits) {
  teacher.validate();
  PositionPair pos;
  pos.teacher_logits.reserve(teacher.entries.size());
  pos.student_logits.reserve(teacher.entries.size());
  for (const auto& e : teacher.entries) {
    if (e.token_id >= student_full_logits.size()) {
      throw ValidationError("teacher token id " + std::to_string(e.token_id) +
                            " outside the student logit vector");
    }
    pos.teacher_logits.push_back(static_cast<double>(e.logit));
    pos.student_logits.push_back(student_full_logits[e.token_id]);
  }
  return pos;
}

namespace {

ProbPair make_pair(const PositionPair& pos, double temperature) {
  if (pos.teacher_logits.size() != pos.student_logits.size()) {
    throw ValidationError("teacher/student logit lengths differ at a position");
  }
  ProbPair pair;
  pair.p_teacher = topk_renormalized_softmax(pos.teacher_logits, temperature);
  pair.p_student = topk_renormalized_softmax(pos.student_logits, temperature);
  return pair;
}

}  // namespace

double token_level_loss(const std::vector<PositionPair>& positions,
                        const DivergenceConfig& config) {
  config.validate();
  if (positions.empty()) throw ValidationError("token_level_loss over zero positions");
  double total = 0.0;
  std::size_t used = 0;
  for (const auto& pos : positions) {
    if (pos.teacher_logits.empty()) continue;  // support fully dropped by alignment
    total += divergence(make_pair(pos, config.temperature), config);
    used += 1;
  }
  if (used == 0) throw ValidationError("all positions have empty support");
  return total / static_cast<double>(used);
}

double dataset_loss(const std::vector<std::vector<PositionPair>>& batch,
                    const DivergenceConfig& config) {
  if (batch.empty()) throw ValidationError("dataset_loss over an empty batch");
  double total = 0.0;
  for (const auto& positions : batch) total += token_level_loss(positions, config);
  return total / static_cast<double>(batch.size());
}

std::vector<std::vector<double>> loss_gradient_wrt_student_logits(
    const std::vector<PositionPair>& positions, const DivergenceConfig& config) {
  config.validate();
  if (positions.empty()) throw ValidationError("gradient over zero positions");
  std::size_t used = 0;
  for (const auto& pos : positions) {
    if (!pos.teacher_logits.empty()) used += 1;
  }
  if (used == 0) throw ValidationError("all positions have empty support");

  double lambda = config.kind == DivergenceKind::ForwardKl   ? 1.0
                  : config.kind == DivergenceKind::ReverseKl ? 0.0
                                                             : config.mix_weight;
  std::vector<std::vector<double>> grads(positions.size());
  for (std::size_t n = 0; n < positions.size(); ++n) {
    const auto& pos = positions[n];
    if (pos.teacher_logits.empty()) continue;
    ProbPair pair = make_pair(pos, config.temperature);
    std::size_t k = pair.p_student.size();
    double scale = 1.0 / (config.temperature * static_cast<double>(used));

    // Reverse term needs the full divergence value for its closed form.
    double rev = reverse_kl(pair);
    std::vector<double> g(k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      double ps = pair.p_student[i];
      double pt = pair.p_teacher[i];
      double g_fwd = ps - pt;
      double g_rev = ps * ((floored_log(ps) - floored_log(pt)) - rev);
      g[i] = scale * (lambda * g_fwd + (1.0 - lambda) * g_rev);
    }
    grads[n] = std::move(g);
  }
  return grads;
}

}  // namespace dqkd::kdcore
