#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "alphaforge/rng.hpp"

namespace alphaforge {

struct PolicyConfig {
  int vocab_size = 0;   // action alphabet size (<= 64, mask is a bitmask)
  int embed_dim = 32;
  int hidden_dim = 64;
};

// Token-embedding + single-layer GRU encoder + linear policy/value heads,
// with hand-written backprop and Adam. Heads start at zero so an untrained
// policy is uniform over the legal actions.
class PolicyNet {
 public:
  PolicyNet(const PolicyConfig& config, std::uint64_t init_seed);

  const PolicyConfig& config() const { return config_; }
  int vocab_size() const { return config_.vocab_size; }
  // Embedding row fed at the first step, before any action exists.
  int begin_input_id() const { return config_.vocab_size; }

  // Per-episode forward pass with caches for the backward pass. Step t
  // consumes input_t (= action_{t-1}, or the begin id), produces the masked
  // action distribution and the value estimate for state t.
  struct Forward {
    std::vector<int> actions;
    std::vector<std::uint64_t> masks;
    std::vector<std::vector<double>> h;      // hidden after step t
    std::vector<std::vector<double>> gate_z;
    std::vector<std::vector<double>> gate_r;
    std::vector<std::vector<double>> cand;
    std::vector<std::vector<double>> probs;  // zero at masked actions
    std::vector<double> logp_action;
    std::vector<double> value;
    std::vector<double> entropy;
    int steps() const { return static_cast<int>(actions.size()); }
  };
  Forward Run(const std::vector<int>& actions,
              const std::vector<std::uint64_t>& masks) const;

  // Accumulates parameter gradients for the given per-step gradients of the
  // loss with respect to logits and value.
  void Backward(const Forward& fwd,
                const std::vector<std::vector<double>>& dlogits,
                const std::vector<double>& dvalue,
                std::vector<double>& grad) const;

  // Single-step evaluation for sampling; h is empty for the first step.
  void Step(int input_id, std::vector<double>& h,
            std::vector<double>& logits_out, double& value_out) const;

  // Masked categorical distribution from raw logits; probabilities are
  // exactly zero at masked-out actions.
  static std::vector<double> MaskedSoftmax(const std::vector<double>& logits,
                                           std::uint64_t mask);

  std::size_t param_count() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  void AdamStep(const std::vector<double>& grad, double lr);

  std::string ToJson() const;
  static PolicyNet FromJson(const std::string& json_text);

 private:
  struct Views;  // offsets into the flat parameter vector

  PolicyConfig config_;
  std::vector<double> params_;
  std::vector<double> adam_m_;
  std::vector<double> adam_v_;
  long adam_t_ = 0;
};

}  // namespace alphaforge
