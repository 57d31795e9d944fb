#include "alphaforge/policy.hpp"

#include <cmath>
#include <cstddef>

#include <nlohmann/json.hpp>

#include "alphaforge/common.hpp"

namespace alphaforge {

namespace {

using nlohmann::json;

double Sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

// Parameter layout, in order:
//   embedding   (V+1) x d
//   W_z W_r W_c  each hxd    (input weights)
//   U_z U_r U_c  each hxh    (recurrent weights)
//   b_z b_r b_c  each h
//   W_pi  A x h,  b_pi  A    (policy head)
//   w_v   h,      b_v   1    (value head)
struct PolicyNet::Views {
  std::size_t embed, wz, wr, wc, uz, ur, uc, bz, br, bc, wp, bp, wv, bv, total;

  explicit Views(const PolicyConfig& c) {
    const std::size_t V = c.vocab_size;
    const std::size_t d = c.embed_dim;
    const std::size_t h = c.hidden_dim;
    std::size_t at = 0;
    const auto take = [&at](std::size_t n) {
      const std::size_t offset = at;
      at += n;
      return offset;
    };
    embed = take((V + 1) * d);
    wz = take(h * d);
    wr = take(h * d);
    wc = take(h * d);
    uz = take(h * h);
    ur = take(h * h);
    uc = take(h * h);
    bz = take(h);
    br = take(h);
    bc = take(h);
    wp = take(V * h);
    bp = take(V);
    wv = take(h);
    bv = take(1);
    total = at;
  }
};

PolicyNet::PolicyNet(const PolicyConfig& config, std::uint64_t init_seed)
    : config_(config) {
  if (config_.vocab_size < 1 || config_.vocab_size > 64) {
    throw ConfigError("policy vocab size must be in [1, 64]");
  }
  const Views v(config_);
  params_.assign(v.total, 0.0);
  adam_m_.assign(v.total, 0.0);
  adam_v_.assign(v.total, 0.0);

  Rng rng(init_seed);
  const double embed_scale = 0.1;
  for (std::size_t i = v.embed; i < v.wz; ++i) {
    params_[i] = embed_scale * rng.NextNormal();
  }
  const double input_scale = 1.0 / std::sqrt(static_cast<double>(config_.embed_dim));
  for (std::size_t i = v.wz; i < v.uz; ++i) {
    params_[i] = input_scale * (2.0 * rng.NextDouble() - 1.0);
  }
  const double hidden_scale =
      1.0 / std::sqrt(static_cast<double>(config_.hidden_dim));
  for (std::size_t i = v.uz; i < v.bz; ++i) {
    params_[i] = hidden_scale * (2.0 * rng.NextDouble() - 1.0);
  }
  // Biases and both heads stay at zero.
}

void PolicyNet::Step(int input_id, std::vector<double>& h,
                     std::vector<double>& logits_out, double& value_out) const {
  const Views v(config_);
  const int d = config_.embed_dim;
  const int hd = config_.hidden_dim;
  const int A = config_.vocab_size;
  if (h.empty()) {
    h.assign(hd, 0.0);
  }
  const double* x = params_.data() + v.embed + static_cast<std::size_t>(input_id) * d;

  std::vector<double> gz(hd), gr(hd), gc(hd), hn(hd);
  for (int i = 0; i < hd; ++i) {
    double az = params_[v.bz + i];
    double ar = params_[v.br + i];
    for (int j = 0; j < d; ++j) {
      az += params_[v.wz + static_cast<std::size_t>(i) * d + j] * x[j];
      ar += params_[v.wr + static_cast<std::size_t>(i) * d + j] * x[j];
    }
    for (int j = 0; j < hd; ++j) {
      az += params_[v.uz + static_cast<std::size_t>(i) * hd + j] * h[j];
      ar += params_[v.ur + static_cast<std::size_t>(i) * hd + j] * h[j];
    }
    gz[i] = Sigmoid(az);
    gr[i] = Sigmoid(ar);
  }
  for (int i = 0; i < hd; ++i) {
    double ac = params_[v.bc + i];
    for (int j = 0; j < d; ++j) {
      ac += params_[v.wc + static_cast<std::size_t>(i) * d + j] * x[j];
    }
    for (int j = 0; j < hd; ++j) {
      ac += params_[v.uc + static_cast<std::size_t>(i) * hd + j] * (gr[j] * h[j]);
    }
    gc[i] = std::tanh(ac);
  }
  for (int i = 0; i < hd; ++i) {
    hn[i] = (1.0 - gz[i]) * h[i] + gz[i] * gc[i];
  }
  h = hn;

  logits_out.assign(A, 0.0);
  for (int a = 0; a < A; ++a) {
    double acc = params_[v.bp + a];
    for (int j = 0; j < hd; ++j) {
      acc += params_[v.wp + static_cast<std::size_t>(a) * hd + j] * h[j];
    }
    logits_out[a] = acc;
  }
  double value = params_[v.bv];
  for (int j = 0; j < hd; ++j) {
    value += params_[v.wv + j] * h[j];
  }
  value_out = value;
}

std::vector<double> PolicyNet::MaskedSoftmax(const std::vector<double>& logits,
                                             std::uint64_t mask) {
  std::vector<double> probs(logits.size(), 0.0);
  double max_logit = -1e300;
  for (std::size_t a = 0; a < logits.size(); ++a) {
    if (((mask >> a) & 1ULL) && logits[a] > max_logit) {
      max_logit = logits[a];
    }
  }
  double total = 0.0;
  for (std::size_t a = 0; a < logits.size(); ++a) {
    if ((mask >> a) & 1ULL) {
      probs[a] = std::exp(logits[a] - max_logit);
      total += probs[a];
    }
  }
  for (double& p : probs) {
    p /= total;
  }
  return probs;
}

PolicyNet::Forward PolicyNet::Run(const std::vector<int>& actions,
                                  const std::vector<std::uint64_t>& masks) const {
  Forward fwd;
  fwd.actions = actions;
  fwd.masks = masks;
  const int steps = static_cast<int>(actions.size());
  fwd.h.resize(steps);
  fwd.gate_z.resize(steps);
  fwd.gate_r.resize(steps);
  fwd.cand.resize(steps);
  fwd.probs.resize(steps);
  fwd.logp_action.resize(steps);
  fwd.value.resize(steps);
  fwd.entropy.resize(steps);

  const Views v(config_);
  const int d = config_.embed_dim;
  const int hd = config_.hidden_dim;
  const int A = config_.vocab_size;
  std::vector<double> h(hd, 0.0);
  std::vector<double> logits(A);
  for (int t = 0; t < steps; ++t) {
    const int input = t == 0 ? begin_input_id() : actions[t - 1];
    const double* x =
        params_.data() + v.embed + static_cast<std::size_t>(input) * d;
    std::vector<double> gz(hd), gr(hd), gc(hd), hn(hd);
    for (int i = 0; i < hd; ++i) {
      double az = params_[v.bz + i];
      double ar = params_[v.br + i];
      for (int j = 0; j < d; ++j) {
        az += params_[v.wz + static_cast<std::size_t>(i) * d + j] * x[j];
        ar += params_[v.wr + static_cast<std::size_t>(i) * d + j] * x[j];
      }
      for (int j = 0; j < hd; ++j) {
        az += params_[v.uz + static_cast<std::size_t>(i) * hd + j] * h[j];
        ar += params_[v.ur + static_cast<std::size_t>(i) * hd + j] * h[j];
      }
      gz[i] = Sigmoid(az);
      gr[i] = Sigmoid(ar);
    }
    for (int i = 0; i < hd; ++i) {
      double ac = params_[v.bc + i];
      for (int j = 0; j < d; ++j) {
        ac += params_[v.wc + static_cast<std::size_t>(i) * d + j] * x[j];
      }
      for (int j = 0; j < hd; ++j) {
        ac += params_[v.uc + static_cast<std::size_t>(i) * hd + j] * (gr[j] * h[j]);
      }
      gc[i] = std::tanh(ac);
    }
    for (int i = 0; i < hd; ++i) {
      hn[i] = (1.0 - gz[i]) * h[i] + gz[i] * gc[i];
    }
    h = hn;

    for (int a = 0; a < A; ++a) {
      double acc = params_[v.bp + a];
      for (int j = 0; j < hd; ++j) {
        acc += params_[v.wp + static_cast<std::size_t>(a) * hd + j] * h[j];
      }
      logits[a] = acc;
    }
    double value = params_[v.bv];
    for (int j = 0; j < hd; ++j) {
      value += params_[v.wv + j] * h[j];
    }

    fwd.value[t] = value;
    fwd.probs[t] = MaskedSoftmax(logits, masks[t]);
    const double p_action = fwd.probs[t][actions[t]];
    fwd.logp_action[t] = std::log(std::max(p_action, 1e-300));
    double entropy = 0.0;
    for (std::size_t a = 0; a < fwd.probs[t].size(); ++a) {
      const double p = fwd.probs[t][a];
      if (p > 0.0) {
        entropy -= p * std::log(p);
      }
    }
    fwd.entropy[t] = entropy;
    fwd.h[t] = h;
    fwd.gate_z[t] = std::move(gz);
    fwd.gate_r[t] = std::move(gr);
    fwd.cand[t] = std::move(gc);
  }
  return fwd;
}

void PolicyNet::Backward(const Forward& fwd,
                         const std::vector<std::vector<double>>& dlogits,
                         const std::vector<double>& dvalue,
                         std::vector<double>& grad) const {
  const Views v(config_);
  const int d = config_.embed_dim;
  const int hd = config_.hidden_dim;
  const int A = config_.vocab_size;
  const int steps = fwd.steps();
  if (grad.size() != params_.size()) {
    grad.assign(params_.size(), 0.0);
  }

  std::vector<double> dh(hd, 0.0);
  std::vector<double> dh_prev(hd);
  std::vector<double> daz(hd), dar(hd), dac(hd), dx(d);
  const std::vector<double> zero(hd, 0.0);

  for (int t = steps - 1; t >= 0; --t) {
    const std::vector<double>& h = fwd.h[t];
    const std::vector<double>& h_prev = t > 0 ? fwd.h[t - 1] : zero;
    const int input = t == 0 ? begin_input_id() : fwd.actions[t - 1];

    // Heads.
    for (int a = 0; a < A; ++a) {
      const double g = dlogits[t][a];
      if (g == 0.0) {
        continue;
      }
      grad[v.bp + a] += g;
      for (int j = 0; j < hd; ++j) {
        grad[v.wp + static_cast<std::size_t>(a) * hd + j] += g * h[j];
        dh[j] += g * params_[v.wp + static_cast<std::size_t>(a) * hd + j];
      }
    }
    const double dv = dvalue[t];
    if (dv != 0.0) {
      grad[v.bv] += dv;
      for (int j = 0; j < hd; ++j) {
        grad[v.wv + j] += dv * h[j];
        dh[j] += dv * params_[v.wv + j];
      }
    }

    // GRU step backward: h = (1-z) h_prev + z c.
    const std::vector<double>& gz = fwd.gate_z[t];
    const std::vector<double>& gr = fwd.gate_r[t];
    const std::vector<double>& gc = fwd.cand[t];
    std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
    std::fill(dx.begin(), dx.end(), 0.0);
    for (int i = 0; i < hd; ++i) {
      const double dz = dh[i] * (gc[i] - h_prev[i]);
      const double dc = dh[i] * gz[i];
      dh_prev[i] += dh[i] * (1.0 - gz[i]);
      daz[i] = dz * gz[i] * (1.0 - gz[i]);
      dac[i] = dc * (1.0 - gc[i] * gc[i]);
    }
    // Candidate path: ac = Wc x + Uc (r o h_prev) + bc.
    const double* x =
        params_.data() + v.embed + static_cast<std::size_t>(input) * d;
    std::vector<double> drh(hd, 0.0);
    for (int i = 0; i < hd; ++i) {
      const double g = dac[i];
      grad[v.bc + i] += g;
      for (int j = 0; j < hd; ++j) {
        grad[v.uc + static_cast<std::size_t>(i) * hd + j] += g * gr[j] * h_prev[j];
        drh[j] += g * params_[v.uc + static_cast<std::size_t>(i) * hd + j];
      }
      for (int j = 0; j < d; ++j) {
        grad[v.wc + static_cast<std::size_t>(i) * d + j] += g * x[j];
        dx[j] += g * params_[v.wc + static_cast<std::size_t>(i) * d + j];
      }
    }
    for (int i = 0; i < hd; ++i) {
      dar[i] = drh[i] * h_prev[i] * gr[i] * (1.0 - gr[i]);
      dh_prev[i] += drh[i] * gr[i];
    }
    // Gate paths: az = Wz x + Uz h_prev + bz, same for ar.
    for (int i = 0; i < hd; ++i) {
      const double gzd = daz[i];
      const double grd = dar[i];
      grad[v.bz + i] += gzd;
      grad[v.br + i] += grd;
      for (int j = 0; j < d; ++j) {
        grad[v.wz + static_cast<std::size_t>(i) * d + j] += gzd * x[j];
        grad[v.wr + static_cast<std::size_t>(i) * d + j] += grd * x[j];
        dx[j] += gzd * params_[v.wz + static_cast<std::size_t>(i) * d + j] +
                 grd * params_[v.wr + static_cast<std::size_t>(i) * d + j];
      }
      for (int j = 0; j < hd; ++j) {
        grad[v.uz + static_cast<std::size_t>(i) * hd + j] += gzd * h_prev[j];
        grad[v.ur + static_cast<std::size_t>(i) * hd + j] += grd * h_prev[j];
        dh_prev[j] += gzd * params_[v.uz + static_cast<std::size_t>(i) * hd + j] +
                      grd * params_[v.ur + static_cast<std::size_t>(i) * hd + j];
      }
    }
    for (int j = 0; j < d; ++j) {
      grad[v.embed + static_cast<std::size_t>(input) * d + j] += dx[j];
    }
    dh = dh_prev;
  }
}

void PolicyNet::AdamStep(const std::vector<double>& grad, double lr) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  ++adam_t_;
  const double bias1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam_t_));
  const double bias2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam_t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    adam_m_[i] = kBeta1 * adam_m_[i] + (1.0 - kBeta1) * grad[i];
    adam_v_[i] = kBeta2 * adam_v_[i] + (1.0 - kBeta2) * grad[i] * grad[i];
    const double m_hat = adam_m_[i] / bias1;
    const double v_hat = adam_v_[i] / bias2;
    params_[i] -= lr * m_hat / (std::sqrt(v_hat) + kEps);
  }
}

std::string PolicyNet::ToJson() const {
  json doc;
  doc["vocab_size"] = config_.vocab_size;
  doc["embed_dim"] = config_.embed_dim;
  doc["hidden_dim"] = config_.hidden_dim;
  doc["params"] = params_;
  doc["adam_m"] = adam_m_;
  doc["adam_v"] = adam_v_;
  doc["adam_t"] = adam_t_;
  return doc.dump() + "\n";
}

PolicyNet PolicyNet::FromJson(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid policy JSON: ") + e.what());
  }
  PolicyConfig config;
  config.vocab_size = doc.at("vocab_size").get<int>();
  config.embed_dim = doc.at("embed_dim").get<int>();
  config.hidden_dim = doc.at("hidden_dim").get<int>();
  PolicyNet net(config, 0);
  net.params_ = doc.at("params").get<std::vector<double>>();
  net.adam_m_ = doc.at("adam_m").get<std::vector<double>>();
  net.adam_v_ = doc.at("adam_v").get<std::vector<double>>();
  net.adam_t_ = doc.at("adam_t").get<long>();
  if (net.params_.size() != Views(config).total) {
    throw DataError("policy JSON parameter count mismatch");
  }
  return net;
}

}  // namespace alphaforge
