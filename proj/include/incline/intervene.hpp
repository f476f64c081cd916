#pragma once

// Inference-time intervention hooks.
//
// Two flavours share one plumbing path:
//   - incline: h <- h + alpha * (W_site h)   with W_site a fitted linear map
//   - caa:     h <- h + alpha * v_site       with v_site a fixed vector
// Both touch only the sites/layers the config selects, exactly once per
// forward pass at the hook position. alpha = 0 must leave the model
// bit-identical to an un-hooked run, so it short-circuits before any
// floating-point work.

#include <atomic>
#include <map>
#include <memory>
#include <set>
#include <string>

#include "incline/align.hpp"
#include "incline/linalg.hpp"
#include "incline/model.hpp"

namespace incline {

enum class InterventionMode { None, Incline, Caa };

const char* intervention_mode_name(InterventionMode mode);
InterventionMode parse_intervention_mode(const std::string& name);

struct InterventionConfig {
  InterventionMode mode = InterventionMode::Incline;
  double alpha = 1.0;  // blend strength, must lie in [-1, 1]
  // must stay nonempty unless mode is None
  std::set<SiteKind> site_kinds{SiteKind::Hidden};
  std::set<int> layers;  // empty selects every layer
};

// Mean-difference steering vectors (one per site):
// v = column_mean(rep_tgt) - column_mean(rep_src).
struct SteeringSet {
  std::map<SiteId, DenseVector> vectors;
};

SteeringSet fit_caa(const RepTable& rep_src, const RepTable& rep_tgt);

std::string serialize_steering(const SteeringSet& set);
SteeringSet parse_steering(const std::string& text);
void save_steering(const std::string& path, const SteeringSet& set);
SteeringSet load_steering(const std::string& path);

class Interventor : public InterventionHook {
 public:
  bool wants(const SiteId& site) const override;
  void apply(const SiteId& site, DenseVector& h, bool count) const override;

  // Number of logical intervention applications so far (decode passes that
  // merely recompute an already-intervened prefix are not re-counted).
  long long applications() const { return hits_.load(std::memory_order_relaxed); }
  void reset_counter() { hits_.store(0, std::memory_order_relaxed); }

  const InterventionConfig& config() const { return config_; }

 private:
  friend std::unique_ptr<Interventor> make_interventor(const AlignmentSet*, const SteeringSet*,
                                                       const InterventionConfig&,
                                                       const ModelConfig&);
  Interventor() = default;

  InterventionConfig config_;
  std::map<SiteId, DenseMatrix> maps_;
  std::map<SiteId, DenseVector> steers_;
  mutable std::atomic<long long> hits_{0};
};

// Builds a hook from whichever payload the mode needs; validates that every
// selected site has a matrix/vector of the right shape. For mode None both
// payloads may be null.
std::unique_ptr<Interventor> make_interventor(const AlignmentSet* alignment,
                                              const SteeringSet* steering,
                                              const InterventionConfig& config,
                                              const ModelConfig& model_config);

// The sites a config selects on a given model, in model order.
std::vector<SiteId> selected_sites(const InterventionConfig& config,
                                   const ModelConfig& model_config);

}  // namespace incline
