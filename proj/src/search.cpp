#include "alphaforge/search.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "alphaforge/common.hpp"
#include "alphaforge/metrics.hpp"

namespace alphaforge {

namespace {

using nlohmann::json;

std::string FormatDouble(double value) {
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
  return std::string(buffer, ptr);
}

}  // namespace

std::vector<Token> Episode::Tokens() const {
  const Vocab& vocab = Vocab::Get();
  std::vector<Token> tokens;
  tokens.reserve(actions.size() + 1);
  tokens.push_back(Token::Beg());
  for (int action : actions) {
    tokens.push_back(vocab.token(action));
  }
  return tokens;
}

std::uint64_t GrammarMaskSource::MaskAt(
    const std::vector<int>& actions_so_far) const {
  const Vocab& vocab = Vocab::Get();
  PrefixState state;
  for (int action : actions_so_far) {
    state.Push(vocab.token(action));
  }
  return LegalActionMask(state, l_max_ - state.tokens_used());
}

Episode Rollout(const PolicyNet& policy, const MaskSource& masks, Rng& rng) {
  Episode episode;
  std::vector<double> h;
  std::vector<double> logits;
  std::vector<double> probs;
  const int sep = masks.sep_id();
  while (true) {
    const std::uint64_t mask = masks.MaskAt(episode.actions);
    if (mask == 0) {
      throw RuntimeError("mask source returned an empty legal set");
    }
    const int input = episode.actions.empty() ? policy.begin_input_id()
                                              : episode.actions.back();
    double value = 0.0;
    policy.Step(input, h, logits, value);
    probs = PolicyNet::MaskedSoftmax(logits, mask);
    const int action = static_cast<int>(rng.NextCategorical(probs));
    episode.actions.push_back(action);
    episode.masks.push_back(mask);
    episode.logps.push_back(std::log(std::max(probs[action], 1e-300)));
    episode.values.push_back(value);
    if (action == sep) {
      break;
    }
  }
  return episode;
}

std::vector<int> GreedyDecode(const PolicyNet& policy, const MaskSource& masks) {
  std::vector<int> actions;
  std::vector<double> h;
  std::vector<double> logits;
  const int sep = masks.sep_id();
  while (true) {
    const std::uint64_t mask = masks.MaskAt(actions);
    if (mask == 0) {
      throw RuntimeError("mask source returned an empty legal set");
    }
    const int input =
        actions.empty() ? policy.begin_input_id() : actions.back();
    double value = 0.0;
    policy.Step(input, h, logits, value);
    int best = -1;
    for (int a = 0; a < static_cast<int>(logits.size()); ++a) {
      if (((mask >> a) & 1ULL) && (best < 0 || logits[a] > logits[best])) {
        best = a;
      }
    }
    actions.push_back(best);
    if (best == sep) {
      break;
    }
  }
  return actions;
}

void ExperienceBuffer::Insert(Episode episode) {
  episodes_.push_back(std::move(episode));
  while (static_cast<int>(episodes_.size()) > capacity_) {
    episodes_.pop_front();
  }
}

std::vector<const Episode*> ExperienceBuffer::SeededEpisodes() const {
  std::vector<const Episode*> seeded;
  for (const Episode& e : episodes_) {
    if (e.seeded) {
      seeded.push_back(&e);
    }
  }
  return seeded;
}

std::string ExperienceBuffer::ToJson() const {
  json doc;
  doc["capacity"] = capacity_;
  doc["episodes"] = json::array();
  const Vocab& vocab = Vocab::Get();
  for (const Episode& e : episodes_) {
    json names = json::array();
    for (int a : e.actions) {
      names.push_back(vocab.token(a).Name());
    }
    doc["episodes"].push_back(
        {{"tokens", names}, {"reward", e.reward}, {"seeded", e.seeded}});
  }
  return doc.dump() + "\n";
}

ExperienceBuffer ExperienceBuffer::FromJson(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid buffer JSON: ") + e.what());
  }
  ExperienceBuffer buffer(doc.at("capacity").get<int>());
  const Vocab& vocab = Vocab::Get();
  for (const auto& item : doc.at("episodes")) {
    Episode e;
    e.reward = item.at("reward").get<double>();
    e.seeded = item.at("seeded").get<bool>();
    PrefixState state;
    bool ok = true;
    for (const auto& name : item.at("tokens")) {
      const Token token = TokenFromName(name.get<std::string>());
      const int id = vocab.IdOf(token);
      if (id < 0) {
        ok = false;
        break;
      }
      // Masks are reconstructed with an effectively unbounded budget; the
      // stored sequences are already complete.
      e.masks.push_back(LegalActionMask(state, 1 << 10));
      e.actions.push_back(id);
      if (token.kind != TokenKind::kSep) {
        state.Push(token);
      }
    }
    if (!ok || e.actions.empty()) {
      continue;
    }
    e.logps.assign(e.actions.size(), 0.0);
    e.values.assign(e.actions.size(), 0.0);
    buffer.Insert(std::move(e));
  }
  return buffer;
}

namespace {

// GAE over a terminal-only reward series.
void ComputeAdvantages(const Episode& episode, double gamma, double lambda,
                       std::vector<double>& advantages,
                       std::vector<double>& returns) {
  const int steps = static_cast<int>(episode.actions.size());
  advantages.resize(steps);
  returns.resize(steps);
  double gae = 0.0;
  for (int t = steps - 1; t >= 0; --t) {
    const double reward = t == steps - 1 ? episode.reward : 0.0;
    const double next_value = t == steps - 1 ? 0.0 : episode.values[t + 1];
    const double delta = reward + gamma * next_value - episode.values[t];
    gae = delta + gamma * lambda * gae;
    advantages[t] = gae;
    returns[t] = gae + episode.values[t];
  }
}

}  // namespace

PpoDiagnostics PpoUpdate(PolicyNet& policy, const std::vector<Episode>& batch,
                         const PpoParams& params, Rng& rng,
                         const std::vector<const Episode*>& bc_episodes,
                         double bc_beta) {
  if (batch.empty()) {
    throw ConfigError("PPO batch must be non-empty");
  }
  PpoDiagnostics diag;

  // Advantages from behavior-time values, normalized across the batch.
  std::vector<std::vector<double>> advantages(batch.size());
  std::vector<std::vector<double>> returns(batch.size());
  int total_steps = 0;
  double adv_sum = 0.0;
  for (std::size_t e = 0; e < batch.size(); ++e) {
    ComputeAdvantages(batch[e], params.gamma, params.lambda, advantages[e],
                      returns[e]);
    for (double a : advantages[e]) {
      adv_sum += a;
      ++total_steps;
    }
  }
  const double adv_mean = adv_sum / total_steps;
  double adv_var = 0.0;
  for (const auto& a : advantages) {
    for (double v : a) {
      adv_var += (v - adv_mean) * (v - adv_mean);
    }
  }
  const double adv_std = std::sqrt(adv_var / total_steps);
  if (adv_std > 1e-8) {
    for (auto& a : advantages) {
      for (double& v : a) {
        v = (v - adv_mean) / adv_std;
      }
    }
  }

  const std::vector<double> params_backup = policy.params();
  std::vector<double> grad(policy.param_count());
  std::vector<std::vector<double>> dlogits;
  std::vector<double> dvalue;

  std::vector<int> order(batch.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = static_cast<int>(i);
  }

  double sum_policy_loss = 0.0;
  double sum_value_loss = 0.0;
  double sum_entropy = 0.0;
  double sum_kl = 0.0;
  long counted_steps = 0;

  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    rng.Shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(params.minibatch)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(params.minibatch));
      std::fill(grad.begin(), grad.end(), 0.0);
      int mb_steps = 0;
      for (std::size_t idx = start; idx < end; ++idx) {
        mb_steps += static_cast<int>(batch[order[idx]].actions.size());
      }
      if (mb_steps == 0) {
        continue;
      }
      const double inv_steps = 1.0 / mb_steps;
      bool finite = true;

      for (std::size_t idx = start; idx < end && finite; ++idx) {
        const Episode& episode = batch[order[idx]];
        const std::vector<double>& adv = advantages[order[idx]];
        const std::vector<double>& ret = returns[order[idx]];
        const PolicyNet::Forward fwd = policy.Run(episode.actions, episode.masks);
        const int steps = fwd.steps();
        dlogits.assign(steps, std::vector<double>(policy.vocab_size(), 0.0));
        dvalue.assign(steps, 0.0);
        for (int t = 0; t < steps; ++t) {
          const double ratio = std::exp(fwd.logp_action[t] - episode.logps[t]);
          const double clipped =
              std::clamp(ratio, 1.0 - params.clip, 1.0 + params.clip);
          const double surr = std::min(ratio * adv[t], clipped * adv[t]);
          const double value_err = fwd.value[t] - ret[t];
          sum_policy_loss += -surr;
          sum_value_loss += value_err * value_err;
          sum_entropy += fwd.entropy[t];
          sum_kl += episode.logps[t] - fwd.logp_action[t];
          ++counted_steps;
          if (!std::isfinite(surr) || !std::isfinite(value_err)) {
            finite = false;
            break;
          }

          // d(-surr)/d logp: active only when the unclipped branch wins.
          const bool unclipped_active =
              ratio * adv[t] <= clipped * adv[t] + 1e-300;
          double dlogp = 0.0;
          if (unclipped_active) {
            dlogp = -adv[t] * ratio;
          }
          // Entropy bonus: d(-c_e * H)/d logit.
          for (int a = 0; a < policy.vocab_size(); ++a) {
            const double p = fwd.probs[t][a];
            if (p <= 0.0) {
              continue;
            }
            const double indicator = a == episode.actions[t] ? 1.0 : 0.0;
            double g = dlogp * (indicator - p);
            g += params.entropy_coef * p * (std::log(p) + fwd.entropy[t]);
            dlogits[t][a] = g * inv_steps;
          }
          dvalue[t] = params.value_coef * 2.0 * value_err * inv_steps;
        }
        if (finite) {
          policy.Backward(fwd, dlogits, dvalue, grad);
        }
      }

      // Behavior cloning on seeded episodes joins every minibatch while the
      // decayed weight is positive.
      if (finite && bc_beta > 0.0 && !bc_episodes.empty()) {
        int bc_steps = 0;
        for (const Episode* e : bc_episodes) {
          bc_steps += static_cast<int>(e->actions.size());
        }
        const double inv_bc = bc_beta / bc_steps;
        for (const Episode* e : bc_episodes) {
          const PolicyNet::Forward fwd = policy.Run(e->actions, e->masks);
          const int steps = fwd.steps();
          dlogits.assign(steps, std::vector<double>(policy.vocab_size(), 0.0));
          dvalue.assign(steps, 0.0);
          for (int t = 0; t < steps; ++t) {
            for (int a = 0; a < policy.vocab_size(); ++a) {
              const double p = fwd.probs[t][a];
              if (p <= 0.0 && a != e->actions[t]) {
                continue;
              }
              const double indicator = a == e->actions[t] ? 1.0 : 0.0;
              dlogits[t][a] = -inv_bc * (indicator - p);
            }
          }
          policy.Backward(fwd, dlogits, dvalue, grad);
        }
      }

      if (!finite) {
        policy.params() = params_backup;
        diag.aborted = true;
        diag.policy_loss = kNaN;
        return diag;
      }

      double norm = 0.0;
      for (double g : grad) {
        norm += g * g;
      }
      norm = std::sqrt(norm);
      if (!std::isfinite(norm)) {
        policy.params() = params_backup;
        diag.aborted = true;
        diag.policy_loss = kNaN;
        return diag;
      }
      if (norm > params.max_grad_norm && norm > 0.0) {
        const double scale = params.max_grad_norm / norm;
        for (double& g : grad) {
          g *= scale;
        }
      }
      policy.AdamStep(grad, params.lr);
    }
  }

  if (counted_steps > 0) {
    diag.policy_loss = sum_policy_loss / counted_steps;
    diag.value_loss = sum_value_loss / counted_steps;
    diag.entropy = sum_entropy / counted_steps;
    diag.approx_kl = sum_kl / counted_steps;
  }
  return diag;
}

RewardResult EvalReward(AlphaPool& pool, const ExprPtr& expr,
                        const WeightOptParams& opt, double commit_threshold,
                        double degenerate_penalty) {
  RewardResult result;
  AlphaPool::Trial trial = pool.TryAdd(expr, opt);
  result.outcome = trial.outcome;
  if (trial.outcome.degenerate) {
    result.reward = degenerate_penalty;
    return result;
  }
  if (trial.outcome.duplicate) {
    result.reward = 0.0;
    return result;
  }
  result.reward = trial.outcome.delta_ic;
  if (trial.outcome.delta_ic > commit_threshold) {
    pool.Apply(std::move(trial));
    result.committed = true;
  }
  return result;
}

std::vector<std::string> SeedBuffer(ExperienceBuffer& buffer,
                                    const std::vector<ExprPtr>& exprs,
                                    AlphaPool& pool,
                                    const WeightOptParams& opt,
                                    std::vector<CommitEvent>* events) {
  std::vector<std::string> warnings;
  const Vocab& vocab = Vocab::Get();
  for (const ExprPtr& expr : exprs) {
    // The add is unconditional (seeds start in the alpha set even when they
    // do not improve it); the observed delta becomes the episode reward.
    const AddOutcome outcome = pool.AddFactor(expr, opt);
    if (outcome.degenerate) {
      warnings.push_back("degenerate seed skipped: " + Print(expr));
      continue;
    }
    if (events != nullptr && !outcome.duplicate) {
      events->push_back(
          CommitEvent{-1, Print(expr), outcome.delta_ic, outcome.evicted});
    }

    const std::vector<Token> tokens = ToTokens(expr);
    Episode episode;
    episode.seeded = true;
    episode.reward = outcome.duplicate ? 0.0 : outcome.delta_ic;
    PrefixState state;
    bool encodable = true;
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      const int id = vocab.IdOf(tokens[i]);
      if (id < 0) {
        encodable = false;
        break;
      }
      episode.masks.push_back(LegalActionMask(state, 1 << 10));
      episode.actions.push_back(id);
      if (tokens[i].kind != TokenKind::kSep) {
        state.Push(tokens[i]);
      }
    }
    if (!encodable) {
      warnings.push_back("seed outside the generation alphabet, "
                         "not added to the buffer: " +
                         Print(expr));
      continue;
    }
    episode.logps.assign(episode.actions.size(), 0.0);
    episode.values.assign(episode.actions.size(), 0.0);
    buffer.Insert(std::move(episode));
  }
  return warnings;
}

std::string UpdateRecordJson(const UpdateRecord& r) {
  return "{\"step\":" + std::to_string(r.step) +
         ",\"train_ic\":" + FormatDouble(r.train_ic) +
         ",\"valid_ic\":" + FormatDouble(r.valid_ic) +
         ",\"pool_size\":" + std::to_string(r.pool_size) +
         ",\"entropy\":" + FormatDouble(r.entropy) +
         ",\"kl\":" + FormatDouble(r.kl) + "}";
}

MiningResult Mine(const MiningConfig& config,
                  std::shared_ptr<PolicyNet> initial_policy,
                  std::shared_ptr<ExperienceBuffer> initial_buffer,
                  const std::function<void(const UpdateRecord&)>& on_update) {
  if (!config.panel || !config.targets) {
    throw ConfigError("mining requires a panel and targets");
  }
  if (config.pool_capacity < 1) {
    throw ConfigError("pool capacity must be >= 1");
  }
  if (config.l_max < 1) {
    throw ConfigError("l_max must be >= 1");
  }
  if (config.train_range.size() <= 0 || config.valid_range.size() <= 0) {
    throw ConfigError("train and valid ranges must be non-empty");
  }
  if (config.updates < 0 || config.ppo.batch < 1 || config.ppo.minibatch < 1 ||
      config.ppo.epochs < 1) {
    throw ConfigError("PPO schedule parameters must be positive");
  }

  MiningResult result;
  result.pool = std::make_shared<AlphaPool>(config.pool_capacity, config.panel,
                                            config.targets, config.train_range,
                                            config.min_coverage);
  AlphaPool& pool = *result.pool;

  if (initial_buffer) {
    result.buffer = std::move(initial_buffer);
  } else {
    result.buffer = std::make_shared<ExperienceBuffer>(config.buffer_capacity);
  }
  ExperienceBuffer& buffer = *result.buffer;

  if (!config.seed_exprs.empty()) {
    if (static_cast<int>(config.seed_exprs.size()) > config.pool_capacity) {
      throw ConfigError("seed list exceeds pool capacity");
    }
    std::vector<std::string> warnings = SeedBuffer(
        buffer, config.seed_exprs, pool, config.weight_opt, &result.commits);
    result.warnings.insert(result.warnings.end(), warnings.begin(),
                           warnings.end());
  }
  // Post-seeding entry point; the commit ledger covers seeds as well, so
  // summing every delta against an empty-pool baseline reproduces the final
  // train IC.
  result.initial_train_ic = pool.empty() ? 0.0 : pool.train_ic();

  if (initial_policy) {
    result.policy = std::move(initial_policy);
    if (result.policy->vocab_size() != Vocab::Get().size()) {
      throw ConfigError("loaded policy has a different action alphabet");
    }
  } else {
    PolicyConfig pc;
    pc.vocab_size = Vocab::Get().size();
    pc.embed_dim = config.policy_embed_dim;
    pc.hidden_dim = config.policy_hidden_dim;
    result.policy = std::make_shared<PolicyNet>(pc, config.rng_seed);
  }
  PolicyNet& policy = *result.policy;

  const GrammarMaskSource masks(config.l_max);
  Rng update_rng = Rng::Substream(config.rng_seed, 0xA11CE, 0);

  // Rewards for repeated candidates are memoized until the next commit
  // changes the pool.
  std::unordered_map<std::string, double> reward_memo;

  for (int update = 0; update < config.updates; ++update) {
    std::vector<Episode> batch;
    batch.reserve(config.ppo.batch);
    for (int e = 0; e < config.ppo.batch; ++e) {
      Rng episode_rng = Rng::Substream(config.rng_seed,
                                       static_cast<std::uint64_t>(update) + 1,
                                       static_cast<std::uint64_t>(e));
      batch.push_back(Rollout(policy, masks, episode_rng));
    }

    for (std::size_t e = 0; e < batch.size(); ++e) {
      Episode& episode = batch[e];
      const ExprPtr expr = FromTokens(episode.Tokens());
      const std::string formula = Print(expr);
      const auto memo = reward_memo.find(formula);
      if (memo != reward_memo.end()) {
        episode.reward = memo->second;
        continue;
      }
      const RewardResult rr =
          EvalReward(pool, expr, config.weight_opt, config.commit_threshold,
                     config.degenerate_penalty);
      episode.reward = rr.reward;
      if (rr.committed) {
        reward_memo.clear();
        result.commits.push_back(CommitEvent{update, formula,
                                             rr.outcome.delta_ic,
                                             rr.outcome.evicted});
        // A committed formula repeats as a duplicate from now on.
        reward_memo[formula] = 0.0;
      } else {
        reward_memo[formula] = rr.reward;
      }
    }

    double bc_beta = 0.0;
    if (config.ppo.bc_decay_updates > 0 && update < config.ppo.bc_decay_updates) {
      bc_beta = config.ppo.bc_beta *
                (1.0 - static_cast<double>(update) / config.ppo.bc_decay_updates);
    }
    const std::vector<const Episode*> bc_episodes =
        bc_beta > 0.0 ? buffer.SeededEpisodes() : std::vector<const Episode*>{};
    const PpoDiagnostics diag =
        PpoUpdate(policy, batch, config.ppo, update_rng, bc_episodes, bc_beta);

    for (Episode& episode : batch) {
      buffer.Insert(std::move(episode));
    }

    UpdateRecord record;
    record.step = update;
    record.train_ic = pool.empty() ? 0.0 : pool.train_ic();
    record.pool_size = pool.size();
    record.entropy = diag.entropy;
    record.kl = diag.approx_kl;
    record.valid_ic = 0.0;
    if (!pool.empty()) {
      try {
        record.valid_ic = Ic(pool.CombineCached(), config.targets->returns,
                             config.valid_range)
                              .ic;
      } catch (const Error&) {
        record.valid_ic = 0.0;
      }
    }
    result.log.push_back(record);
    if (on_update) {
      on_update(record);
    }
    if (record.train_ic >= config.stop_at_train_ic) {
      break;
    }
  }
  return result;
}

}  // namespace alphaforge
