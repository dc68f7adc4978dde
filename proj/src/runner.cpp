#include "tmlm/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <thread>

#include "tmlm/error.hpp"
#include "tmlm/metrics.hpp"
#include "tmlm/rng.hpp"

namespace tmlm {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

/// Runs task(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& task) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < n; i = next++) task(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

const std::vector<std::string> kKnownManipulations = {"freeze", "shuffle", "random", "skip_attn", "patch"};

}  // namespace

EvalSet load_eval_set(const DatasetRef& ref, const Tokenizer& tokenizer) {
  EvalSet set;
  set.name = ref.kind;
  if (ref.kind == "arithmetic2" || ref.kind == "arithmetic3") {
    for (auto& inst : gen_arithmetic(ref.kind == "arithmetic2" ? 2 : 3, tokenizer)) {
      set.items.push_back({inst.prompt, inst.answer, std::nullopt});
    }
  } else if (ref.kind == "capitals") {
    const auto pairs = load_capitals(ref.path);
    set.items = capitals_dataset(pairs, {}, &tokenizer);
    set.patch_pairs = build_patch_pairs(pairs, tokenizer, ref.seed).pairs;
  } else if (ref.kind == "squad") {
    set.items = load_jsonl_qa(ref.path, ref.sample_n, ref.seed);
  } else if (ref.kind == "cnn") {
    set.items = load_jsonl_summarization(ref.path, ref.sample_n, ref.seed);
    set.metric = MetricKind::rouge;
  } else {
    throw ValidationError("unknown dataset kind '" + ref.kind + "' (arithmetic2, arithmetic3, capitals, squad, cnn)");
  }
  if (ref.limit > 0) {
    if (set.items.size() > ref.limit) set.items.resize(ref.limit);
    if (set.patch_pairs.size() > ref.limit) set.patch_pairs.resize(ref.limit);
  }
  return set;
}

SweepConfig SweepConfig::from_json(const nlohmann::json& j) {
  SweepConfig c;
  try {
    c.model_path = j.value("model", c.model_path);
    c.tokenizer_path = j.value("tokenizer", c.tokenizer_path);
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      c.dataset.kind = d.value("kind", c.dataset.kind);
      c.dataset.path = d.value("path", c.dataset.path);
      c.dataset.sample_n = d.value("sample_n", c.dataset.sample_n);
      c.dataset.seed = d.value("seed", c.dataset.seed);
      c.dataset.limit = d.value("limit", c.dataset.limit);
    }
    c.manipulations = j.value("manipulations", c.manipulations);
    if (j.contains("layers")) {
      const auto& l = j.at("layers");
      c.layer_start = l.value("start", c.layer_start);
      c.layer_end = l.value("end", c.layer_end);
      c.layer_step = l.value("step", c.layer_step);
    }
    if (j.contains("decode")) {
      const auto& d = j.at("decode");
      const auto kind = d.value("kind", std::string("greedy"));
      if (kind == "temperature") {
        c.decode = DecodePolicy::sampled(d.value("temperature", 1.0f), d.value("seed", std::uint64_t{0}));
      } else if (kind != "greedy") {
        throw ParseError("sweep config: decode.kind must be greedy or temperature");
      }
    }
    c.seed = j.value("seed", c.seed);
    c.max_new = j.value("max_new", c.max_new);
    const auto scope = j.value("scope", std::string("prompt_only"));
    if (scope == "all_history") {
      c.scope = HistoryScope::all_history;
    } else if (scope != "prompt_only") {
      throw ParseError("sweep config: scope must be prompt_only or all_history");
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    c.threads = j.value("threads", c.threads);
    c.record_timing = j.value("record_timing", c.record_timing);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("sweep config: ") + e.what());
  }
  for (const auto& m : c.manipulations) {
    if (m != "baseline" && std::find(kKnownManipulations.begin(), kKnownManipulations.end(), m) ==
                               kKnownManipulations.end()) {
      throw ParseError("sweep config: unknown manipulation '" + m + "'");
    }
  }
  return c;
}

nlohmann::json SweepConfig::to_json() const {
  nlohmann::json decode_j = {{"kind", decode.kind == DecodePolicy::Kind::greedy ? "greedy" : "temperature"}};
  if (decode.kind == DecodePolicy::Kind::temperature) {
    decode_j["temperature"] = decode.temperature;
    decode_j["seed"] = decode.seed;
  }
  return {{"model", model_path},
          {"tokenizer", tokenizer_path},
          {"dataset",
           {{"kind", dataset.kind},
            {"path", dataset.path},
            {"sample_n", dataset.sample_n},
            {"seed", dataset.seed},
            {"limit", dataset.limit}}},
          {"manipulations", manipulations},
          {"layers", {{"start", layer_start}, {"end", layer_end}, {"step", layer_step}}},
          {"decode", decode_j},
          {"seed", seed},
          {"max_new", max_new},
          {"scope", scope == HistoryScope::all_history ? "all_history" : "prompt_only"},
          {"output_dir", output_dir},
          {"threads", threads},
          {"record_timing", record_timing}};
}

std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("TMLM_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

std::vector<std::size_t> sweep_layers(const SweepConfig& config, std::size_t n_layers) {
  const std::size_t end = config.layer_end == 0 ? n_layers : config.layer_end;
  if (config.layer_start < 1 || end > n_layers || config.layer_start > end) {
    throw ValidationError("sweep layer range [" + std::to_string(config.layer_start) + ", " + std::to_string(end) +
                          "] not within [1, " + std::to_string(n_layers) + "]");
  }
  if (config.layer_step == 0) throw ValidationError("sweep layer step must be >= 1");
  std::vector<std::size_t> out;
  for (std::size_t l = config.layer_start; l <= end; l += config.layer_step) out.push_back(l);
  return out;
}

std::set<TokenId> default_stop_tokens(const Tokenizer& tokenizer) {
  std::set<TokenId> stop;
  try {
    const auto nl = tokenizer.encode("\n");
    if (nl.size() == 1) stop.insert(nl[0]);
  } catch (const VocabularyError&) {
  }
  if (auto eos = tokenizer.token_id("<eos>")) stop.insert(*eos);
  return stop;
}

namespace {

struct Cell {
  std::string manipulation;
  std::optional<std::size_t> layer;
};

std::optional<InterventionSpec> cell_spec(const Cell& cell, const SweepConfig& config, std::size_t instance,
                                          const EvalSet& data, const Tokenizer& tokenizer) {
  if (!cell.layer) return std::nullopt;
  const std::size_t k = *cell.layer;
  const std::uint64_t seed = derive_seed(config.seed, instance);
  InterventionSpec spec;
  spec.scope = config.scope;
  if (cell.manipulation == "freeze") {
    spec.kind = Freeze{k};
  } else if (cell.manipulation == "shuffle") {
    spec.kind = ShuffleNoise{k, seed};
  } else if (cell.manipulation == "random") {
    spec.kind = RandomNoise{k, seed};
  } else if (cell.manipulation == "skip_attn") {
    spec.kind = SkipAttention{k};
  } else if (cell.manipulation == "patch") {
    const auto& pp = data.patch_pairs.at(instance);
    Patch p;
    p.layer = k;
    p.targets = pp.target_positions;
    p.donor.prompt_text = pp.donor.prompt;
    p.donor.prompt_tokens = tokenizer.encode(pp.donor.prompt);
    p.donor.positions = pp.donor_positions;
    spec.kind = std::move(p);
  } else {
    throw ValidationError("unknown manipulation '" + cell.manipulation + "'");
  }
  return spec;
}

std::vector<ResultRow> evaluate_cell(const Model& model, const Tokenizer& tokenizer, const EvalSet& data,
                                     const SweepConfig& config, const Cell& cell) {
  const auto start = std::chrono::steady_clock::now();
  const bool patch = cell.manipulation == "patch";
  if (patch && data.patch_pairs.empty()) throw ValidationError("patch cells need a capitals dataset with patch pairs");
  const std::size_t n = patch ? data.patch_pairs.size() : data.items.size();

  GenerationOptions options;
  options.max_new = config.max_new;
  options.decode = config.decode;
  options.stop = default_stop_tokens(tokenizer);
  options.cache = CachePolicy::automatic;

  double sum_a = 0.0;
  double sum_b = 0.0;
  std::size_t errors = 0;
  std::size_t stored = 0;
  std::size_t baseline = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const QAPair& item = patch ? data.patch_pairs[i].base : data.items[i];
    try {
      const auto prompt = tokenizer.encode(item.prompt);
      const auto spec = cell_spec(cell, config, i, data, tokenizer);
      const InterventionPlan plan =
          spec ? resolve(*spec, model, prompt) : InterventionPlan(model.config.n_layers);
      const auto gen = generate(model, prompt, plan, options);
      const std::string text = first_line(tokenizer.decode(gen.generated_tokens));
      if (data.metric == MetricKind::exact_match) {
        sum_a += exact_match(text, item.answer);
      } else {
        sum_a += rouge1(text, item.answer).f1;
        sum_b += rougeL(text, item.answer).f1;
      }
      stored += gen.cache_stats.floats_stored;
      baseline += gen.cache_stats.floats_baseline_equivalent;
    } catch (const Error&) {
      ++errors;
    }
  }

  ResultRow row;
  row.manipulation = cell.layer ? cell.manipulation : "baseline";
  row.layer = cell.layer;
  row.n_instances = n;
  row.n_errors = errors;
  row.floats_stored = stored;
  row.saving_ratio = baseline == 0 ? 0.0 : 1.0 - static_cast<double>(stored) / static_cast<double>(baseline);
  if (config.record_timing) {
    row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  const double denom = n == 0 ? 1.0 : static_cast<double>(n);
  if (data.metric == MetricKind::exact_match) {
    row.metric = "exact_match";
    row.value = sum_a / denom;
    return {row};
  }
  ResultRow r1 = row;
  r1.metric = "rouge1_f1";
  r1.value = sum_a / denom;
  ResultRow rl = row;
  rl.metric = "rougeL_f1";
  rl.value = sum_b / denom;
  return {r1, rl};
}

}  // namespace

std::vector<ResultRow> run_sweep(const Model& model, const Tokenizer& tokenizer, const EvalSet& data,
                                 const SweepConfig& config) {
  const auto layers = sweep_layers(config, model.config.n_layers);
  std::vector<Cell> cells{{"baseline", std::nullopt}};
  for (const auto& m : config.manipulations) {
    if (m == "baseline") continue;
    for (auto l : layers) cells.push_back({m, l});
  }
  std::vector<std::vector<ResultRow>> results(cells.size());
  parallel_for(cells.size(), resolve_threads(config.threads),
               [&](std::size_t i) { results[i] = evaluate_cell(model, tokenizer, data, config, cells[i]); });
  std::vector<ResultRow> rows;
  for (auto& r : results) rows.insert(rows.end(), r.begin(), r.end());
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << kSweepCsvHeader << "\n";
  for (const auto& r : rows) {
    out << r.manipulation << "," << (r.layer ? std::to_string(*r.layer) : "") << "," << r.metric << ","
        << fmt_double(r.value) << "," << r.n_instances << "," << r.n_errors << "," << r.floats_stored << ","
        << fmt_double(r.saving_ratio) << "," << (r.wall_time ? fmt_double(*r.wall_time) : "") << "\n";
  }
}

std::vector<PatchRow> patch_experiment(const Model& model, const Tokenizer& tokenizer,
                                       const std::vector<PatchPair>& pairs, const std::vector<std::size_t>& layers,
                                       std::size_t max_new, std::size_t threads) {
  for (auto l : layers) {
    if (l > model.config.n_layers) {
      throw ValidationError("patch layer " + std::to_string(l) + " beyond L=" + std::to_string(model.config.n_layers));
    }
  }
  GenerationOptions options;
  options.max_new = max_new;
  options.stop = default_stop_tokens(tokenizer);

  std::vector<PatchRow> rows(layers.size());
  parallel_for(layers.size(), resolve_threads(threads), [&](std::size_t li) {
    PatchRow row;
    row.layer = layers[li];
    row.n_pairs = pairs.size();
    std::size_t original = 0, donor = 0, other = 0;
    for (const auto& pp : pairs) {
      try {
        InterventionSpec spec;
        Patch p;
        p.layer = row.layer;
        p.targets = pp.target_positions;
        p.donor.prompt_text = pp.donor.prompt;
        p.donor.prompt_tokens = tokenizer.encode(pp.donor.prompt);
        p.donor.positions = pp.donor_positions;
        spec.kind = std::move(p);
        const auto prompt = tokenizer.encode(pp.base.prompt);
        const auto gen = generate(model, prompt, resolve(spec, model, prompt), options);
        const std::string text = first_line(tokenizer.decode(gen.generated_tokens));
        if (exact_match(text, pp.base.answer)) {
          ++original;
        } else if (exact_match(text, pp.donor.answer)) {
          ++donor;
        } else {
          ++other;
        }
      } catch (const Error&) {
        ++other;
        ++row.n_errors;
      }
    }
    if (!pairs.empty()) {
      const double n = static_cast<double>(pairs.size());
      row.frac_original = static_cast<double>(original) / n;
      row.frac_donor = static_cast<double>(donor) / n;
      row.frac_other = static_cast<double>(other) / n;
    }
    rows[li] = row;
  });
  return rows;
}

void write_patch_csv(std::ostream& out, const std::vector<PatchRow>& rows) {
  out << kPatchCsvHeader << "\n";
  for (const auto& r : rows) {
    out << r.layer << "," << fmt_double(r.frac_original) << "," << fmt_double(r.frac_donor) << ","
        << fmt_double(r.frac_other) << "," << r.n_pairs << "," << r.n_errors << "\n";
  }
}

RunOutput run_once(const Model& model, const Tokenizer& tokenizer, const std::string& prompt,
                   const std::optional<InterventionSpec>& spec, const GenerationOptions& options) {
  const auto tokens = tokenizer.encode(prompt);
  InterventionPlan plan(model.config.n_layers);
  if (spec) {
    InterventionSpec bound = *spec;
    bind_tokens(bound, tokenizer);
    plan = resolve(bound, model, tokens);
  }
  RunOutput out;
  out.generation = generate(model, tokens, plan, options);
  out.text = tokenizer.decode(out.generation.generated_tokens);
  return out;
}

nlohmann::json trace_summary(const ForwardTrace& trace) {
  nlohmann::json norms = nlohmann::json::array();
  nlohmann::json mask = nlohmann::json::array();
  for (std::size_t l = 0; l < trace.states.size(); ++l) {
    nlohmann::json nrow = nlohmann::json::array();
    nlohmann::json mrow = nlohmann::json::array();
    for (std::size_t p = 0; p < trace.states[l].rows(); ++p) {
      nrow.push_back(l2_norm(trace.states[l].row(p)));
      mrow.push_back(trace.modified(l, p) ? 1 : 0);
    }
    norms.push_back(std::move(nrow));
    mask.push_back(std::move(mrow));
  }
  return {{"n_layers", trace.n_layers()}, {"n_tokens", trace.n_tokens()}, {"norms", norms}, {"modified_mask", mask}};
}

}  // namespace tmlm
