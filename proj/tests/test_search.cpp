#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "alphaforge/common.hpp"
#include "alphaforge/search.hpp"
#include "test_support.hpp"

namespace alphaforge {
namespace {

using testing::MakePlantedPanel;
using testing::PlantedData;

const ExprPtr kPlanted = MakeOp(OpId::kDelta, {MakeFeature(Feature::kClose)}, 5);

MiningConfig TinyConfig(const PlantedData& data) {
  MiningConfig mc;
  mc.panel = data.panel;
  mc.targets = data.targets;
  const int T = data.panel->n_days();
  mc.train_range = DayRange{0, T * 3 / 4};
  mc.valid_range = DayRange{T * 3 / 4, T};
  mc.pool_capacity = 3;
  mc.l_max = 8;
  mc.updates = 3;
  mc.ppo.batch = 16;
  mc.ppo.minibatch = 8;
  mc.ppo.epochs = 2;
  mc.policy_embed_dim = 8;
  mc.policy_hidden_dim = 12;
  mc.weight_opt = WeightOptParams{0.05, 50, 1e-7};
  return mc;
}

TEST_CASE("rollouts always produce valid sequences") {
  PolicyConfig pc;
  pc.vocab_size = Vocab::Get().size();
  pc.embed_dim = 8;
  pc.hidden_dim = 12;
  const PolicyNet policy(pc, 1);
  const GrammarMaskSource masks(12);
  Rng rng(77);
  for (int i = 0; i < 1000; ++i) {
    const Episode episode = Rollout(policy, masks, rng);
    CHECK_NOTHROW(FromTokens(episode.Tokens()));
    CHECK(episode.actions.back() == Vocab::Get().sep_id());
    CHECK(static_cast<int>(episode.actions.size()) <= 13);
  }
}

TEST_CASE("rollout is deterministic under a fixed rng seed") {
  PolicyConfig pc;
  pc.vocab_size = Vocab::Get().size();
  pc.embed_dim = 8;
  pc.hidden_dim = 12;
  const PolicyNet policy(pc, 5);
  const GrammarMaskSource masks(10);
  Rng rng_a(123);
  Rng rng_b(123);
  for (int i = 0; i < 20; ++i) {
    const Episode a = Rollout(policy, masks, rng_a);
    const Episode b = Rollout(policy, masks, rng_b);
    CHECK(a.actions == b.actions);
    CHECK(a.logps == b.logps);
  }
}

TEST_CASE("reward cases: first add, duplicate, degenerate") {
  const PlantedData data = MakePlantedPanel(10, 100, 4001);
  AlphaPool pool(5, data.panel, data.targets,
                 DayRange{0, data.panel->n_days()});
  const WeightOptParams opt{0.05, 100, 1e-7};

  const RewardResult first = EvalReward(pool, kPlanted, opt, 0.0, -0.1);
  CHECK(first.committed);
  CHECK(first.reward > 0.4);
  CHECK(first.reward == doctest::Approx(pool.train_ic()).epsilon(1e-12));

  const RewardResult duplicate = EvalReward(pool, kPlanted, opt, 0.0, -0.1);
  CHECK_FALSE(duplicate.committed);
  CHECK(duplicate.reward == 0.0);
  CHECK(pool.size() == 1);

  const RewardResult degenerate = EvalReward(
      pool, Parse("(close / (close - close))"), opt, 0.0, -0.1);
  CHECK_FALSE(degenerate.committed);
  CHECK(degenerate.reward == doctest::Approx(-0.1));
}

// Two-action toy: action 0 then SEP earns reward 1; SEP immediately earns 0.
class BanditMaskSource : public MaskSource {
 public:
  int vocab_size() const override { return 2; }
  int sep_id() const override { return 1; }
  std::uint64_t MaskAt(const std::vector<int>& actions) const override {
    return actions.empty() ? 0b11 : 0b10;
  }
};

double FirstActionProbability(const PolicyNet& policy) {
  std::vector<double> h;
  std::vector<double> logits;
  double value = 0.0;
  policy.Step(policy.begin_input_id(), h, logits, value);
  return PolicyNet::MaskedSoftmax(logits, 0b11)[0];
}

TEST_CASE("ppo bandit: rewarded action probability rises monotonically") {
  const BanditMaskSource masks;
  PpoParams params;
  params.batch = 64;
  params.minibatch = 32;
  params.epochs = 2;
  params.lr = 5e-3;
  params.entropy_coef = 0.001;

  std::vector<std::vector<double>> curves;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    PolicyConfig pc;
    pc.vocab_size = 2;
    pc.embed_dim = 4;
    pc.hidden_dim = 6;
    PolicyNet policy(pc, seed);
    Rng rng(seed * 1000 + 17);
    std::vector<double> curve;
    curve.push_back(FirstActionProbability(policy));
    for (int update = 0; update < 50; ++update) {
      std::vector<Episode> batch;
      for (int e = 0; e < params.batch; ++e) {
        Episode episode = Rollout(policy, masks, rng);
        episode.reward = episode.actions[0] == 0 ? 1.0 : 0.0;
        batch.push_back(std::move(episode));
      }
      PpoUpdate(policy, batch, params, rng);
      curve.push_back(FirstActionProbability(policy));
    }
    curves.push_back(std::move(curve));
  }
  // Median across seeds, strictly increasing over updates.
  std::vector<double> median(curves[0].size());
  for (std::size_t t = 0; t < median.size(); ++t) {
    std::vector<double> vals;
    for (const auto& c : curves) {
      vals.push_back(c[t]);
    }
    std::sort(vals.begin(), vals.end());
    median[t] = vals[2];
  }
  CHECK(median.front() == doctest::Approx(0.5).epsilon(1e-9));
  // Strictly increasing until saturation, then pinned near 1.
  std::size_t saturated = median.size();
  for (std::size_t t = 0; t < median.size(); ++t) {
    if (median[t] > 0.99) {
      saturated = t;
      break;
    }
  }
  for (std::size_t t = 1; t <= std::min(saturated, median.size() - 1); ++t) {
    CAPTURE(t);
    CHECK(median[t] > median[t - 1]);
  }
  for (std::size_t t = saturated; t < median.size(); ++t) {
    CHECK(median[t] > 0.985);
  }
  CHECK(median.back() > 0.9);
}

TEST_CASE("zero-reward batch with zero coefficients changes nothing") {
  const BanditMaskSource masks;
  PolicyConfig pc;
  pc.vocab_size = 2;
  pc.embed_dim = 4;
  pc.hidden_dim = 6;
  PolicyNet policy(pc, 3);  // fresh: zero heads, zero values
  const std::vector<double> before = policy.params();

  PpoParams params;
  params.batch = 8;
  params.minibatch = 8;
  params.epochs = 2;
  params.entropy_coef = 0.0;
  params.value_coef = 0.0;
  Rng rng(5);
  std::vector<Episode> batch;
  for (int e = 0; e < params.batch; ++e) {
    Episode episode = Rollout(policy, masks, rng);
    episode.reward = 0.0;
    batch.push_back(std::move(episode));
  }
  const PpoDiagnostics diag = PpoUpdate(policy, batch, params, rng);
  CHECK(policy.params() == before);
  CHECK(diag.policy_loss == doctest::Approx(0.0));

  // A uniform policy is the entropy stationary point, so nudge the policy
  // head off uniform. The value head stays zero, keeping every advantage
  // zero; the entropy bonus alone then drives a parameter change.
  Rng jitter(11);
  const std::size_t value_head = pc.hidden_dim + 1;
  const std::size_t policy_head =
      static_cast<std::size_t>(pc.vocab_size) * (pc.hidden_dim + 1);
  for (std::size_t i = policy.param_count() - value_head - policy_head;
       i < policy.param_count() - value_head; ++i) {
    policy.params()[i] += 0.1 * jitter.NextNormal();
  }
  const std::vector<double> jittered = policy.params();
  std::vector<Episode> batch2;
  Rng rng2(6);
  for (int e = 0; e < params.batch; ++e) {
    Episode episode = Rollout(policy, masks, rng2);
    episode.reward = 0.0;
    batch2.push_back(std::move(episode));
  }
  params.entropy_coef = 0.0;
  PpoUpdate(policy, batch2, params, rng2);
  CHECK(policy.params() == jittered);  // values still exactly zero
  params.entropy_coef = 0.01;
  PpoUpdate(policy, batch2, params, rng2);
  CHECK(policy.params() != jittered);
}

TEST_CASE("zero clip keeps the policy near the behavior policy") {
  const BanditMaskSource masks;
  const auto kl_after = [&masks](double clip) {
    PolicyConfig pc;
    pc.vocab_size = 2;
    pc.embed_dim = 4;
    pc.hidden_dim = 6;
    PolicyNet policy(pc, 9);
    PpoParams params;
    params.batch = 64;
    params.minibatch = 64;
    params.epochs = 4;
    params.clip = clip;
    params.entropy_coef = 0.0;
    Rng rng(31);
    std::vector<Episode> batch;
    for (int e = 0; e < params.batch; ++e) {
      Episode episode = Rollout(policy, masks, rng);
      episode.reward = episode.actions[0] == 0 ? 1.0 : 0.0;
      batch.push_back(std::move(episode));
    }
    PpoUpdate(policy, batch, params, rng);
    // KL of the updated policy against uniform behavior at the first step.
    const double p = FirstActionProbability(policy);
    return std::fabs(std::log(p / 0.5));
  };
  const double moved_eps0 = kl_after(0.0);
  const double moved_eps02 = kl_after(0.2);
  // With a degenerate clip the only surviving surrogate gradient is the
  // ratio==1 tie on the first pass; the distribution barely moves.
  CHECK(moved_eps0 < moved_eps02);
  CHECK(moved_eps0 < 0.01);
}

TEST_CASE("non-finite rewards abort the update and keep parameters") {
  const BanditMaskSource masks;
  PolicyConfig pc;
  pc.vocab_size = 2;
  pc.embed_dim = 4;
  pc.hidden_dim = 6;
  PolicyNet policy(pc, 13);
  const std::vector<double> before = policy.params();
  Rng rng(7);
  std::vector<Episode> batch;
  for (int e = 0; e < 8; ++e) {
    Episode episode = Rollout(policy, masks, rng);
    episode.reward = std::numeric_limits<double>::infinity();
    batch.push_back(std::move(episode));
  }
  PpoParams params;
  params.batch = 8;
  params.minibatch = 8;
  const PpoDiagnostics diag = PpoUpdate(policy, batch, params, rng);
  CHECK(diag.aborted);
  CHECK(policy.params() == before);
}

TEST_CASE("seed_buffer inserts encodable seeds and skips others") {
  const PlantedData data = MakePlantedPanel(10, 100, 4002);
  AlphaPool pool(5, data.panel, data.targets,
                 DayRange{0, data.panel->n_days()});
  ExperienceBuffer buffer(4);
  const std::vector<ExprPtr> seeds = {
      kPlanted,
      Parse("Corr(low, volume, 6)"),  // window 6 is off-grid: not encodable
  };
  const std::vector<std::string> warnings =
      SeedBuffer(buffer, seeds, pool, WeightOptParams{0.05, 50, 1e-7});
  CHECK(buffer.size() == 1);
  CHECK(buffer.episodes()[0].seeded);
  CHECK(buffer.episodes()[0].reward > 0.4);
  CHECK(pool.size() == 2);  // both seeds join the pool regardless
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("alphabet") != std::string::npos);

  // Bounded FIFO: overflow evicts the oldest.
  for (int i = 0; i < 6; ++i) {
    Episode filler;
    filler.actions = {Vocab::Get().sep_id()};
    buffer.Insert(filler);
  }
  CHECK(buffer.size() == 4);
  CHECK(buffer.SeededEpisodes().empty());

  ExperienceBuffer untouched(4);
  SeedBuffer(untouched, {}, pool, WeightOptParams{});
  CHECK(untouched.size() == 0);
}

TEST_CASE("buffer json round-trips") {
  const PlantedData data = MakePlantedPanel(8, 80, 4003);
  AlphaPool pool(5, data.panel, data.targets,
                 DayRange{0, data.panel->n_days()});
  ExperienceBuffer buffer(8);
  SeedBuffer(buffer, {kPlanted}, pool, WeightOptParams{0.05, 50, 1e-7});
  const std::string json_text = buffer.ToJson();
  const ExperienceBuffer loaded = ExperienceBuffer::FromJson(json_text);
  REQUIRE(loaded.size() == buffer.size());
  CHECK(loaded.episodes()[0].actions == buffer.episodes()[0].actions);
  CHECK(loaded.episodes()[0].seeded);
}

ExprPtr VolumeNoise() {
  return MakeOp(OpId::kCSRank, {MakeFeature(Feature::kVolume)});
}

TEST_CASE("mine validates its configuration up front") {
  const PlantedData data = MakePlantedPanel(8, 60, 4004);
  MiningConfig mc = TinyConfig(data);
  mc.pool_capacity = 0;
  CHECK_THROWS_AS(Mine(mc), Error);
  mc = TinyConfig(data);
  mc.valid_range = DayRange{10, 10};
  CHECK_THROWS_AS(Mine(mc), Error);
  mc = TinyConfig(data);
  mc.seed_exprs = {kPlanted, VolumeNoise()};
  mc.pool_capacity = 1;
  CHECK_THROWS_AS(Mine(mc), Error);
}

TEST_CASE("mine runs, logs, and balances its reward ledger") {
  const PlantedData data = MakePlantedPanel(8, 60, 4005);
  MiningConfig mc = TinyConfig(data);
  mc.updates = 4;
  const MiningResult result = Mine(mc);
  CHECK(result.log.size() == 4);
  for (std::size_t i = 0; i < result.log.size(); ++i) {
    CHECK(result.log[i].step == static_cast<int>(i));
    CHECK(result.log[i].pool_size <= mc.pool_capacity);
  }
  double delta_sum = 0.0;
  for (const CommitEvent& event : result.commits) {
    delta_sum += event.delta_ic;
  }
  CHECK(delta_sum ==
        doctest::Approx(result.pool->train_ic() - 0.0).epsilon(1e-9));
}

TEST_CASE("mine is deterministic given config and seed") {
  const PlantedData data = MakePlantedPanel(8, 60, 4006);
  MiningConfig mc = TinyConfig(data);
  mc.updates = 3;
  mc.rng_seed = 12345;
  const MiningResult a = Mine(mc);
  const MiningResult b = Mine(mc);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(UpdateRecordJson(a.log[i]) == UpdateRecordJson(b.log[i]));
  }
  CHECK(a.pool->ToJson() == b.pool->ToJson());
  CHECK(a.policy->params() == b.policy->params());
}

TEST_CASE("seeded mine biases the policy toward the seed") {
  const PlantedData data = MakePlantedPanel(10, 100, 4007);
  MiningConfig mc = TinyConfig(data);
  mc.pool_capacity = 5;
  mc.ppo.batch = 32;
  mc.ppo.minibatch = 16;
  mc.ppo.bc_beta = 1.0;
  mc.ppo.bc_decay_updates = 400;
  mc.ppo.entropy_coef = 0.002;
  mc.seed_exprs = {kPlanted};
  mc.rng_seed = 3;
  // Behavior cloning should stamp the planted episode into greedy decoding
  // within 200 updates; run in short legs so the decode is checked as the
  // policy trains.
  const GrammarMaskSource masks(mc.l_max);
  std::shared_ptr<PolicyNet> policy;
  std::shared_ptr<ExperienceBuffer> buffer;
  bool recovered = false;
  for (int leg = 0; leg < 10 && !recovered; ++leg) {
    mc.updates = 20;
    mc.rng_seed = 3 + leg;
    const MiningResult result = Mine(mc, policy, buffer);
    policy = result.policy;
    buffer = result.buffer;
    CHECK_FALSE(result.buffer->SeededEpisodes().empty());
    const std::vector<int> decoded = GreedyDecode(*policy, masks);
    std::vector<Token> tokens;
    tokens.push_back(Token::Beg());
    for (int id : decoded) {
      tokens.push_back(Vocab::Get().token(id));
    }
    recovered = Print(FromTokens(tokens)) == Print(kPlanted);
  }
  CHECK(recovered);
}

}  // namespace
}  // namespace alphaforge
