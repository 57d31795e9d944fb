#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "alphaforge/dsl.hpp"
#include "alphaforge/panel.hpp"
#include "alphaforge/policy.hpp"
#include "alphaforge/pool.hpp"
#include "alphaforge/rng.hpp"

namespace alphaforge {

// One generation episode: action ids into the Vocab alphabet ending with
// SEP, behavior log-probs/values, and the legal mask that was in force at
// each step. The reward lands on the terminal step only.
struct Episode {
  std::vector<int> actions;
  std::vector<std::uint64_t> masks;
  std::vector<double> logps;
  std::vector<double> values;
  double reward = 0.0;
  bool seeded = false;

  std::vector<Token> Tokens() const;  // BEG ... SEP
};

// Source of per-step legal-action masks. The DSL grammar provides the real
// one; tests substitute toy alphabets.
class MaskSource {
 public:
  virtual ~MaskSource() = default;
  virtual int vocab_size() const = 0;
  virtual int sep_id() const = 0;
  // Mask given the actions taken so far.
  virtual std::uint64_t MaskAt(const std::vector<int>& actions_so_far) const = 0;
};

// Masks from dsl::LegalActionMask under a total payload budget of l_max.
class GrammarMaskSource : public MaskSource {
 public:
  explicit GrammarMaskSource(int l_max) : l_max_(l_max) {}
  int vocab_size() const override { return Vocab::Get().size(); }
  int sep_id() const override { return Vocab::Get().sep_id(); }
  std::uint64_t MaskAt(const std::vector<int>& actions_so_far) const override;

 private:
  int l_max_;
};

// Autoregressively samples from the masked policy until SEP (the mask
// guarantees SEP arrives within the budget).
Episode Rollout(const PolicyNet& policy, const MaskSource& masks, Rng& rng);
std::vector<int> GreedyDecode(const PolicyNet& policy, const MaskSource& masks);

// Bounded FIFO of episodes.
class ExperienceBuffer {
 public:
  explicit ExperienceBuffer(int capacity) : capacity_(capacity) {}

  int capacity() const { return capacity_; }
  int size() const { return static_cast<int>(episodes_.size()); }
  const std::deque<Episode>& episodes() const { return episodes_; }

  void Insert(Episode episode);
  void Clear() { episodes_.clear(); }
  std::vector<const Episode*> SeededEpisodes() const;

  std::string ToJson() const;
  static ExperienceBuffer FromJson(const std::string& json_text);

 private:
  int capacity_;
  std::deque<Episode> episodes_;
};

struct PpoParams {
  int batch = 256;
  int epochs = 4;
  int minibatch = 64;
  double clip = 0.2;
  double gamma = 1.0;
  double lambda = 0.95;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double lr = 3e-3;
  double max_grad_norm = 0.5;
  double bc_beta = 0.1;     // behavior-cloning weight on seeded episodes
  int bc_decay_updates = 50;
};

struct PpoDiagnostics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  bool aborted = false;  // non-finite loss; parameters were kept unchanged
};

// Clipped-surrogate PPO with GAE advantages, value loss, entropy bonus, and
// an optional behavior-cloning term over `bc_episodes` weighted by bc_beta.
PpoDiagnostics PpoUpdate(PolicyNet& policy, const std::vector<Episode>& batch,
                         const PpoParams& params, Rng& rng,
                         const std::vector<const Episode*>& bc_episodes = {},
                         double bc_beta = 0.0);

// Episode reward: the train-IC improvement from adding the expression to the
// pool (probed transactionally). The add is committed when the improvement
// exceeds commit_threshold; degenerate factors earn degenerate_penalty.
struct RewardResult {
  double reward = 0.0;
  bool committed = false;
  AddOutcome outcome;
};
RewardResult EvalReward(AlphaPool& pool, const ExprPtr& expr,
                        const WeightOptParams& opt, double commit_threshold,
                        double degenerate_penalty);

struct CommitEvent {
  int update = -1;  // -1 for the seeding phase
  std::string formula;
  double delta_ic = 0.0;
  std::string evicted;
};

// Converts seed expressions to episodes (rewards from EvalReward-style adds;
// the adds are committed unconditionally, mirroring pool seeding) and
// inserts them flagged for behavior cloning. Seeds outside the generation
// alphabet are skipped; the returned strings are warnings.
std::vector<std::string> SeedBuffer(ExperienceBuffer& buffer,
                                    const std::vector<ExprPtr>& exprs,
                                    AlphaPool& pool,
                                    const WeightOptParams& opt,
                                    std::vector<CommitEvent>* events = nullptr);

struct MiningConfig {
  PanelPtr panel;
  std::shared_ptr<const TargetPanel> targets;
  DayRange train_range;
  DayRange valid_range;

  int pool_capacity = 20;
  int l_max = 20;
  double commit_threshold = 0.0;
  double degenerate_penalty = -0.1;
  double min_coverage = 0.5;

  PpoParams ppo;
  WeightOptParams weight_opt{0.01, 100, 1e-6};

  int updates = 200;
  std::uint64_t rng_seed = 0;
  int buffer_capacity = 4096;
  int policy_embed_dim = 32;
  int policy_hidden_dim = 64;

  std::vector<ExprPtr> seed_exprs;
  // Early stop once train IC reaches this level (disabled by default).
  double stop_at_train_ic = std::numeric_limits<double>::infinity();
};

struct UpdateRecord {
  int step = 0;
  double train_ic = 0.0;
  double valid_ic = 0.0;
  int pool_size = 0;
  double entropy = 0.0;
  double kl = 0.0;
};

struct MiningResult {
  std::shared_ptr<AlphaPool> pool;
  std::shared_ptr<PolicyNet> policy;
  std::shared_ptr<ExperienceBuffer> buffer;
  std::vector<UpdateRecord> log;
  std::vector<CommitEvent> commits;
  double initial_train_ic = 0.0;
  std::vector<std::string> warnings;
};

// Full mining loop: rollout batches, reward + commit, PPO updates, and a
// per-update train/valid IC log. `initial_policy`/`initial_buffer` support
// stage-2 restarts; seeding always starts from the configured seed_exprs.
MiningResult Mine(const MiningConfig& config,
                  std::shared_ptr<PolicyNet> initial_policy = nullptr,
                  std::shared_ptr<ExperienceBuffer> initial_buffer = nullptr,
                  const std::function<void(const UpdateRecord&)>& on_update = {});

std::string UpdateRecordJson(const UpdateRecord& record);

}  // namespace alphaforge
