#include "tmlm/interventions.hpp"

#include <cmath>

#include "tmlm/engine.hpp"
#include "tmlm/error.hpp"
#include "tmlm/tokenizer.hpp"

namespace tmlm {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

const nlohmann::json& field(const nlohmann::json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) throw ParseError(std::string("intervention spec: missing field '") + name + "'");
  return *it;
}

std::size_t count_field(const nlohmann::json& j, const char* name) {
  const auto& v = field(j, name);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ParseError(std::string("intervention spec: field '") + name + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

std::uint64_t seed_field(const nlohmann::json& j) {
  if (!j.contains("seed")) return 0;
  const auto& v = j.at("seed");
  if (!v.is_number_integer()) throw ParseError("intervention spec: field 'seed' must be an integer");
  return v.is_number_unsigned() ? v.get<std::uint64_t>() : static_cast<std::uint64_t>(v.get<long long>());
}

std::vector<std::size_t> index_list(const nlohmann::json& j, const char* name) {
  const auto& v = field(j, name);
  if (!v.is_array()) throw ParseError(std::string("intervention spec: field '") + name + "' must be an array");
  std::vector<std::size_t> out;
  for (const auto& e : v) {
    if (!e.is_number_integer() || e.get<long long>() < 0) {
      throw ParseError(std::string("intervention spec: field '") + name + "' must hold non-negative integers");
    }
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

void check_range(std::size_t value, std::size_t lo, std::size_t hi, const std::string& what) {
  if (value < lo || value > hi) {
    throw ValidationError(what + "=" + std::to_string(value) + " outside [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "]");
  }
}

}  // namespace

std::string InterventionSpec::name() const {
  return std::visit(overloaded{[](const Freeze&) { return std::string("freeze"); },
                               [](const ShuffleNoise&) { return std::string("shuffle"); },
                               [](const RandomNoise&) { return std::string("random"); },
                               [](const Patch&) { return std::string("patch"); },
                               [](const SkipAttention&) { return std::string("skip_attn"); }},
                    kind);
}

std::size_t InterventionSpec::layer() const {
  return std::visit(overloaded{[](const Freeze& f) { return f.k; }, [](const ShuffleNoise& s) { return s.k; },
                               [](const RandomNoise& r) { return r.k; }, [](const Patch& p) { return p.layer; },
                               [](const SkipAttention& s) { return s.from_layer; }},
                    kind);
}

InterventionSpec parse_spec(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("intervention spec must be a JSON object");
  const auto& kind_v = field(j, "kind");
  if (!kind_v.is_string()) throw ParseError("intervention spec: field 'kind' must be a string");
  const auto kind = kind_v.get<std::string>();

  InterventionSpec spec;
  if (kind == "freeze") {
    spec.kind = Freeze{count_field(j, "k")};
  } else if (kind == "shuffle") {
    spec.kind = ShuffleNoise{count_field(j, "k"), seed_field(j)};
  } else if (kind == "random") {
    spec.kind = RandomNoise{count_field(j, "k"), seed_field(j)};
  } else if (kind == "patch") {
    Patch p;
    p.layer = count_field(j, "layer");
    p.targets = index_list(j, "targets");
    const auto& dp = field(j, "donor_prompt");
    if (!dp.is_string()) throw ParseError("intervention spec: field 'donor_prompt' must be a string");
    p.donor.prompt_text = dp.get<std::string>();
    p.donor.positions = index_list(j, "donor_targets");
    spec.kind = std::move(p);
  } else if (kind == "skip_attn") {
    spec.kind = SkipAttention{count_field(j, "from_layer")};
  } else {
    throw ParseError("intervention spec: field 'kind' has unknown value '" + kind +
                     "' (freeze, shuffle, random, patch, skip_attn)");
  }

  if (j.contains("scope")) {
    const auto& s = j.at("scope");
    if (s == "prompt_only") {
      spec.scope = HistoryScope::prompt_only;
    } else if (s == "all_history") {
      spec.scope = HistoryScope::all_history;
    } else {
      throw ParseError("intervention spec: field 'scope' must be \"prompt_only\" or \"all_history\"");
    }
  }
  return spec;
}

InterventionSpec parse_spec(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("intervention spec is not valid JSON: ") + e.what());
  }
  return parse_spec(j);
}

nlohmann::json spec_to_json(const InterventionSpec& spec) {
  nlohmann::json j = std::visit(
      overloaded{[](const Freeze& f) { return nlohmann::json{{"kind", "freeze"}, {"k", f.k}}; },
                 [](const ShuffleNoise& s) { return nlohmann::json{{"kind", "shuffle"}, {"k", s.k}, {"seed", s.seed}}; },
                 [](const RandomNoise& r) { return nlohmann::json{{"kind", "random"}, {"k", r.k}, {"seed", r.seed}}; },
                 [](const Patch& p) {
                   return nlohmann::json{{"kind", "patch"},
                                         {"layer", p.layer},
                                         {"targets", p.targets},
                                         {"donor_prompt", p.donor.prompt_text},
                                         {"donor_targets", p.donor.positions}};
                 },
                 [](const SkipAttention& s) { return nlohmann::json{{"kind", "skip_attn"}, {"from_layer", s.from_layer}}; }},
      spec.kind);
  j["scope"] = spec.scope == HistoryScope::all_history ? "all_history" : "prompt_only";
  return j;
}

void bind_tokens(InterventionSpec& spec, const Tokenizer& tokenizer) {
  if (auto* p = std::get_if<Patch>(&spec.kind)) p->donor.prompt_tokens = tokenizer.encode(p->donor.prompt_text);
}

void validate_spec(const InterventionSpec& spec, std::size_t n_layers, std::size_t prompt_len) {
  std::visit(overloaded{[&](const Freeze& f) { check_range(f.k, 1, n_layers, "freeze k"); },
                        [&](const ShuffleNoise& s) { check_range(s.k, 1, n_layers, "shuffle k"); },
                        [&](const RandomNoise& r) { check_range(r.k, 1, n_layers, "random k"); },
                        [&](const SkipAttention& s) { check_range(s.from_layer, 1, n_layers, "skip_attn from_layer"); },
                        [&](const Patch& p) {
                          check_range(p.layer, 0, n_layers, "patch layer");
                          if (p.targets.size() != p.donor.positions.size()) {
                            throw ValidationError("patch shape: " + std::to_string(p.targets.size()) +
                                                  " targets but " + std::to_string(p.donor.positions.size()) +
                                                  " donor positions");
                          }
                          for (std::size_t i = 0; i < p.targets.size(); ++i) {
                            if (p.targets[i] >= prompt_len) {
                              throw ValidationError("patch target " + std::to_string(p.targets[i]) +
                                                    " outside prompt of " + std::to_string(prompt_len) + " tokens");
                            }
                            if (i > 0 && p.targets[i] <= p.targets[i - 1]) {
                              throw ValidationError("patch targets must be strictly increasing");
                            }
                            if (p.donor.positions[i] >= p.donor.prompt_tokens.size()) {
                              throw ValidationError("patch donor position " + std::to_string(p.donor.positions[i]) +
                                                    " outside donor prompt of " +
                                                    std::to_string(p.donor.prompt_tokens.size()) + " tokens");
                            }
                          }
                        }},
             spec.kind);
}

// ---------------------------------------------------------------------------

PlanAction InterventionPlan::action(std::size_t layer, std::size_t position) const {
  if (const auto* v = overwrite(layer, position)) return Overwrite{v};
  if (skips_attention(layer)) return SkipAttnLayer{};
  if (freeze_ && layer > *freeze_) return ReadFrozen{*freeze_};
  return PassThrough{};
}

std::size_t InterventionPlan::history_source(std::size_t layer) const {
  if (freeze_ && layer > *freeze_) return *freeze_;
  return layer - 1;
}

const std::vector<float>* InterventionPlan::overwrite(std::size_t layer, std::size_t position) const {
  auto it = overwrites_.find({layer, position});
  return it == overwrites_.end() ? nullptr : &it->second;
}

void InterventionPlan::set_freeze(std::size_t k) { freeze_ = k; }
void InterventionPlan::set_skip_from(std::size_t s) { skip_from_ = s; }

void InterventionPlan::add_overwrite(std::size_t layer, std::size_t position, std::vector<float> v) {
  if (!overwrites_.emplace(std::make_pair(layer, position), std::move(v)).second) {
    throw ValidationError("plan already overwrites layer " + std::to_string(layer) + " position " +
                          std::to_string(position));
  }
}

void InterventionPlan::set_history_noise(NoiseRule rule) { history_noise_ = rule; }

void InterventionPlan::validate(const ModelConfig& config, std::size_t n_positions) const {
  if (n_layers_ != config.n_layers && !(n_layers_ == 0 && empty())) {
    throw ValidationError("plan built for " + std::to_string(n_layers_) + " layers, model has " +
                          std::to_string(config.n_layers));
  }
  if (freeze_) check_range(*freeze_, 1, config.n_layers, "plan freeze layer");
  if (skip_from_) check_range(*skip_from_, 1, config.n_layers, "plan skip layer");
  if (history_noise_) check_range(history_noise_->layer, 1, config.n_layers, "plan noise layer");
  for (const auto& [key, v] : overwrites_) {
    const auto [layer, position] = key;
    check_range(layer, 0, config.n_layers, "plan overwrite layer");
    if (position >= n_positions) {
      throw ValidationError("plan overwrites position " + std::to_string(position) + " beyond prompt of " +
                            std::to_string(n_positions) + " tokens");
    }
    if (v.size() != config.d_model) {
      throw ValidationError("plan overwrite vector has width " + std::to_string(v.size()) + ", expected " +
                            std::to_string(config.d_model));
    }
  }
}

// ---------------------------------------------------------------------------

std::vector<float> make_shuffle_noise(std::span<const float> x, Xoshiro256& rng) {
  if (x.empty()) throw ValidationError("shuffle noise of an empty vector");
  std::vector<float> out(x.begin(), x.end());
  fisher_yates(std::span<float>(out), rng);
  return out;
}

std::vector<float> make_gaussian_noise(std::size_t d, float target_norm, Xoshiro256& rng) {
  if (d == 0) throw ValidationError("gaussian noise needs d >= 1");
  if (!(target_norm > 0.0f) || !std::isfinite(target_norm)) {
    throw ValidationError("gaussian noise needs a positive finite target norm");
  }
  constexpr int kMaxDraws = 8;
  for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
    std::vector<double> z(d);
    double ss = 0.0;
    for (auto& v : z) {
      v = rng.normal();
      ss += v * v;
    }
    if (!(ss > 0.0)) continue;
    const double scale = static_cast<double>(target_norm) / std::sqrt(ss);
    std::vector<float> out(d);
    for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<float>(z[i] * scale);
    return out;
  }
  throw NumericError("gaussian noise draw was all zeros " + std::to_string(kMaxDraws) + " times");
}

std::vector<float> noise_for_position(NoiseKind kind, std::span<const float> genuine, std::uint64_t seed,
                                      std::size_t position) {
  Xoshiro256 rng(derive_seed(seed, position));
  if (kind == NoiseKind::shuffle) return make_shuffle_noise(genuine, rng);
  const double norm = l2_norm(genuine);
  // A zero state has nothing to preserve; keep it.
  if (norm == 0.0) return std::vector<float>(genuine.begin(), genuine.end());
  return make_gaussian_noise(genuine.size(), static_cast<float>(norm), rng);
}

Matrix history_inputs(const InterventionPlan& plan, std::size_t layer, std::size_t position, ForwardTrace& trace) {
  if (layer < 1 || layer > trace.n_layers()) {
    throw MisuseError("history_inputs: layer " + std::to_string(layer) + " out of range");
  }
  const std::size_t src = plan.history_source(layer);
  const Matrix& states = trace.states[src];
  if (states.rows() < position) {
    throw MisuseError("history_inputs: X^" + std::to_string(src) + " holds " + std::to_string(states.rows()) +
                      " rows, position " + std::to_string(position) + " needs its history");
  }
  Matrix out(0, states.cols());
  out.reserve_rows(position);
  for (std::size_t j = 0; j < position; ++j) {
    out.append_row(states.row(j));
    if (src != layer - 1) trace.mark(layer - 1, j);
  }
  return out;
}

// ---------------------------------------------------------------------------

InterventionPlan resolve(const InterventionSpec& spec, const Model& model, std::span<const TokenId> prompt) {
  const auto& c = model.config;
  validate_spec(spec, c.n_layers, prompt.size());
  InterventionPlan plan(c.n_layers);

  auto noise_plan = [&](NoiseKind kind, std::size_t k, std::uint64_t seed) {
    const std::size_t n = prompt.size();
    if (n >= 2) {
      // Layer-k states of history positions do not depend on noise at k.
      const auto base = forward_prompt(model, prompt.first(n - 1), InterventionPlan(c.n_layers));
      for (std::size_t p = 0; p + 1 < n; ++p) {
        plan.add_overwrite(k, p, noise_for_position(kind, base.trace.states[k].row(p), seed, p));
      }
    }
    if (spec.scope == HistoryScope::all_history) {
      plan.set_history_noise(NoiseRule{kind, k, seed, n == 0 ? 0 : n - 1});
    }
  };

  std::visit(overloaded{[&](const Freeze& f) { plan.set_freeze(f.k); },
                        [&](const ShuffleNoise& s) { noise_plan(NoiseKind::shuffle, s.k, s.seed); },
                        [&](const RandomNoise& r) { noise_plan(NoiseKind::gaussian, r.k, r.seed); },
                        [&](const SkipAttention& s) { plan.set_skip_from(s.from_layer); },
                        [&](const Patch& p) {
                          if (p.targets.empty()) return;
                          const auto donor = forward_prompt(model, p.donor.prompt_tokens, InterventionPlan(c.n_layers));
                          for (std::size_t i = 0; i < p.targets.size(); ++i) {
                            const auto row = donor.trace.states[p.layer].row(p.donor.positions[i]);
                            plan.add_overwrite(p.layer, p.targets[i], std::vector<float>(row.begin(), row.end()));
                          }
                        }},
             spec.kind);
  return plan;
}

}  // namespace tmlm
