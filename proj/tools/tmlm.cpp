#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tmlm/datasets.hpp"
#include "tmlm/error.hpp"
#include "tmlm/plot.hpp"
#include "tmlm/runner.hpp"
#include "tmlm/weights_io.hpp"

using namespace tmlm;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// "@file" reads the spec from a file, anything else is inline JSON.
std::string spec_text(const std::string& arg) { return !arg.empty() && arg[0] == '@' ? read_text(arg.substr(1)) : arg; }

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

/// Loads `path` or picks a built-in tokenizer, padded up to the model's vocabulary.
Tokenizer tokenizer_or(const std::string& path, bool arithmetic, const ModelConfig& config) {
  Tokenizer tok = !path.empty() ? Tokenizer::load(path) : arithmetic ? Tokenizer::arithmetic() : Tokenizer::ascii_text();
  if (tok.vocab_size() > config.vocab_size) {
    throw ValidationError("tokenizer has " + std::to_string(tok.vocab_size()) + " entries but the model vocabulary is " +
                          std::to_string(config.vocab_size));
  }
  return tok.padded_to(config.vocab_size);
}

std::vector<std::size_t> parse_layer_list(const std::string& s, std::size_t n_layers) {
  std::vector<std::size_t> out;
  if (s.empty()) {
    for (std::size_t l = 0; l <= n_layers; ++l) out.push_back(l);
    return out;
  }
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto dash = item.find('-');
    try {
      if (dash == std::string::npos) {
        out.push_back(std::stoul(item));
      } else {
        for (auto l = std::stoul(item.substr(0, dash)); l <= std::stoul(item.substr(dash + 1)); ++l) out.push_back(l);
      }
    } catch (const std::logic_error&) {
      throw ParseError("--layers: cannot parse '" + item + "' (expected e.g. 0-4 or 1,3,5)");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-wise intervention engine for decoder-only transformers"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Generate a continuation, optionally under an intervention");
  std::string run_model, run_tok, run_prompt, run_spec, run_trace, run_cache = "auto";
  std::size_t run_max_new = 16;
  float run_temp = 0.0f;
  std::uint64_t run_seed = 0;
  run->add_option("--model", run_model, "TMLM weight file")->required();
  run->add_option("--tokenizer", run_tok, "Tokenizer JSON (default: built-in ASCII tokenizer)");
  run->add_option("--prompt", run_prompt, "Prompt text")->required();
  run->add_option("--spec", run_spec, "Intervention spec as JSON, or @file");
  run->add_option("--max-new", run_max_new, "Tokens to generate");
  run->add_option("--cache", run_cache, "none | standard | freeze_aware | skip_aware | auto");
  run->add_option("--temperature", run_temp, "Sampling temperature (0 = greedy)");
  run->add_option("--seed", run_seed, "Sampling seed");
  run->add_option("--dump-trace", run_trace, "Write per-layer norms and modified mask as JSON");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Evaluate a dataset under every (manipulation, layer) cell");
  std::string sw_config, sw_model, sw_tok, sw_dataset, sw_data_path, sw_out, sw_manips;
  std::optional<std::size_t> sw_start, sw_end, sw_step, sw_max_new, sw_threads, sw_limit;
  std::optional<std::uint64_t> sw_seed;
  bool sw_timing = false;
  sweep->add_option("--config", sw_config, "Sweep config JSON");
  sweep->add_option("--model", sw_model, "TMLM weight file");
  sweep->add_option("--tokenizer", sw_tok, "Tokenizer JSON");
  sweep->add_option("--dataset", sw_dataset, "arithmetic2 | arithmetic3 | capitals | squad | cnn");
  sweep->add_option("--data-path", sw_data_path, "Dataset file for capitals/squad/cnn");
  sweep->add_option("--limit", sw_limit, "Use only the first N instances");
  sweep->add_option("--manipulations", sw_manips, "Comma-separated subset of freeze,shuffle,random,skip_attn,patch");
  sweep->add_option("--layer-start", sw_start);
  sweep->add_option("--layer-end", sw_end);
  sweep->add_option("--layer-step", sw_step);
  sweep->add_option("--seed", sw_seed, "Noise seed");
  sweep->add_option("--max-new", sw_max_new, "Tokens generated per instance");
  sweep->add_option("--threads", sw_threads, "Worker threads (default: $TMLM_THREADS or 1)");
  sweep->add_flag("--timing", sw_timing, "Fill the wall_time column");
  sweep->add_option("--out", sw_out, "CSV path (default: <output_dir>/sweep.csv)");

  // patch
  auto* patch = app.add_subcommand("patch", "Cross-prompt patching of country tokens on the capitals task");
  std::string pa_model, pa_tok, pa_capitals, pa_layers, pa_out;
  std::uint64_t pa_seed = 0;
  std::size_t pa_max_new = 8, pa_threads = 0, pa_limit = 0;
  patch->add_option("--model", pa_model, "TMLM weight file")->required();
  patch->add_option("--tokenizer", pa_tok, "Tokenizer JSON (default: built-in ASCII tokenizer)");
  patch->add_option("--capitals", pa_capitals, "country<TAB>capital file")->required();
  patch->add_option("--layers", pa_layers, "Layers, e.g. 0-32 or 0,4,8 (default: 0..L)");
  patch->add_option("--seed", pa_seed, "Pairing seed");
  patch->add_option("--max-new", pa_max_new);
  patch->add_option("--threads", pa_threads);
  patch->add_option("--limit", pa_limit, "Use only the first N pairs");
  patch->add_option("--out", pa_out, "CSV path (default: stdout)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a dataset as JSONL");
  std::string gd_kind, gd_path, gd_tok, gd_out;
  std::size_t gd_sample = 0;
  std::uint64_t gd_seed = 0;
  bool gd_pairs = false;
  gen->add_option("--kind", gd_kind, "arithmetic2 | arithmetic3 | capitals | squad | cnn")->required();
  gen->add_option("--path", gd_path, "Source file for capitals/squad/cnn");
  gen->add_option("--tokenizer", gd_tok, "Tokenizer JSON");
  gen->add_option("--sample-n", gd_sample, "Sample size for squad/cnn (0 = all)");
  gen->add_option("--seed", gd_seed);
  gen->add_flag("--patch-pairs", gd_pairs, "For capitals: emit patch pairs instead of prompts");
  gen->add_option("--out", gd_out, "Output path (default: stdout)");

  // make-toy-model
  auto* toy = app.add_subcommand("make-toy-model", "Write a seeded random TMLM file");
  ModelConfig toy_cfg;
  toy_cfg.n_layers = 4;
  toy_cfg.d_model = 64;
  toy_cfg.n_heads = 4;
  toy_cfg.n_kv_heads = 4;
  toy_cfg.d_ff = 128;
  toy_cfg.vocab_size = 64;
  toy_cfg.max_seq_len = 256;
  std::optional<std::size_t> toy_d_head;
  std::uint64_t toy_seed = 0;
  bool toy_f16 = false, toy_tied = false;
  std::string toy_out, toy_tok_out, toy_tok_kind = "arithmetic";
  toy->add_option("--layers", toy_cfg.n_layers);
  toy->add_option("--d-model", toy_cfg.d_model);
  toy->add_option("--heads", toy_cfg.n_heads);
  toy->add_option("--kv-heads", toy_cfg.n_kv_heads);
  toy->add_option("--d-head", toy_d_head, "Default: d_model / heads");
  toy->add_option("--d-ff", toy_cfg.d_ff);
  toy->add_option("--vocab", toy_cfg.vocab_size);
  toy->add_option("--max-seq", toy_cfg.max_seq_len);
  toy->add_option("--rope-theta", toy_cfg.rope_theta);
  toy->add_option("--seed", toy_seed);
  toy->add_flag("--f16", toy_f16, "Store tensors as f16");
  toy->add_flag("--tied", toy_tied, "Share embedding and output matrices");
  toy->add_option("--out", toy_out, "Weight file path")->required();
  toy->add_option("--tokenizer-out", toy_tok_out, "Also write a matching built-in tokenizer");
  toy->add_option("--tokenizer-kind", toy_tok_kind, "arithmetic | ascii");

  // plot
  auto* plot = app.add_subcommand("plot", "Render a sweep or patch CSV as SVG");
  std::string pl_csv, pl_out;
  plot->add_option("csv", pl_csv)->required();
  plot->add_option("--out", pl_out, "SVG path (default: CSV path with .svg)");

  // inspect
  auto* inspect = app.add_subcommand("inspect", "Print the config and tensor directory of a TMLM file");
  std::string in_path;
  inspect->add_option("model", in_path)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const Model model = load_model(run_model);
      const Tokenizer tok = tokenizer_or(run_tok, false, model.config);
      std::optional<InterventionSpec> spec;
      if (!run_spec.empty()) spec = parse_spec(spec_text(run_spec));
      GenerationOptions options;
      options.max_new = run_max_new;
      options.stop = default_stop_tokens(tok);
      options.cache = run_cache == "auto" ? CachePolicy::automatic : parse_cache_policy(run_cache);
      if (run_temp > 0.0f) options.decode = DecodePolicy::sampled(run_temp, run_seed);
      options.keep_trace = !run_trace.empty();
      const auto out = run_once(model, tok, run_prompt, spec, options);
      std::cout << out.text << "\n";
      if (!run_trace.empty()) write_file(run_trace, trace_summary(*out.generation.trace).dump(1) + "\n");
    } else if (*sweep) {
      SweepConfig cfg;
      if (!sw_config.empty()) {
        try {
          cfg = SweepConfig::from_json(nlohmann::json::parse(read_text(sw_config)));
        } catch (const nlohmann::json::parse_error& e) {
          throw ParseError(sw_config + ": " + e.what());
        }
      }
      if (!sw_model.empty()) cfg.model_path = sw_model;
      if (!sw_tok.empty()) cfg.tokenizer_path = sw_tok;
      if (!sw_dataset.empty()) cfg.dataset.kind = sw_dataset;
      if (!sw_data_path.empty()) cfg.dataset.path = sw_data_path;
      if (sw_limit) cfg.dataset.limit = *sw_limit;
      if (!sw_manips.empty()) {
        nlohmann::json j = cfg.to_json();
        std::vector<std::string> list;
        std::stringstream in(sw_manips);
        for (std::string m; std::getline(in, m, ',');) list.push_back(m);
        j["manipulations"] = list;
        cfg = SweepConfig::from_json(j);
      }
      if (sw_start) cfg.layer_start = *sw_start;
      if (sw_end) cfg.layer_end = *sw_end;
      if (sw_step) cfg.layer_step = *sw_step;
      if (sw_seed) cfg.seed = *sw_seed;
      if (sw_max_new) cfg.max_new = *sw_max_new;
      if (sw_threads) cfg.threads = *sw_threads;
      if (sw_timing) cfg.record_timing = true;
      if (cfg.model_path.empty()) throw ValidationError("sweep needs a model (--model or \"model\" in the config)");

      const Model model = load_model(cfg.model_path);
      const bool arithmetic = cfg.dataset.kind.rfind("arithmetic", 0) == 0;
      const Tokenizer tok = tokenizer_or(cfg.tokenizer_path, arithmetic, model.config);
      const EvalSet data = load_eval_set(cfg.dataset, tok);
      const auto rows = run_sweep(model, tok, data, cfg);
      const std::string out_path = sw_out.empty() ? (std::filesystem::path(cfg.output_dir) / "sweep.csv").string() : sw_out;
      std::ofstream out(out_path);
      if (!out) throw IoError("cannot write " + out_path);
      write_sweep_csv(out, rows);
      std::cerr << "wrote " << rows.size() << " rows to " << out_path << "\n";
    } else if (*patch) {
      const Model model = load_model(pa_model);
      const Tokenizer tok = tokenizer_or(pa_tok, false, model.config);
      auto pairs = build_patch_pairs(load_capitals(pa_capitals), tok, pa_seed);
      if (!pairs.dropped.empty()) std::cerr << pairs.dropped.size() << " countries without a same-length partner\n";
      if (pa_limit > 0 && pairs.pairs.size() > pa_limit) pairs.pairs.resize(pa_limit);
      const auto rows = patch_experiment(model, tok, pairs.pairs, parse_layer_list(pa_layers, model.config.n_layers),
                                         pa_max_new, pa_threads);
      if (pa_out.empty()) {
        write_patch_csv(std::cout, rows);
      } else {
        std::ofstream out(pa_out);
        if (!out) throw IoError("cannot write " + pa_out);
        write_patch_csv(out, rows);
      }
    } else if (*gen) {
      const bool arithmetic = gd_kind.rfind("arithmetic", 0) == 0;
      const Tokenizer tok = !gd_tok.empty() ? Tokenizer::load(gd_tok)
                            : arithmetic    ? Tokenizer::arithmetic()
                                            : Tokenizer::ascii_text();
      std::ostringstream lines;
      if (gd_kind == "capitals" && gd_pairs) {
        for (const auto& p : build_patch_pairs(load_capitals(gd_path), tok, gd_seed).pairs) {
          lines << to_json(p).dump() << "\n";
        }
      } else {
        DatasetRef ref;
        ref.kind = gd_kind;
        ref.path = gd_path;
        ref.sample_n = gd_sample;
        ref.seed = gd_seed;
        for (const auto& q : load_eval_set(ref, tok).items) lines << to_json(q).dump() << "\n";
      }
      if (gd_out.empty()) {
        std::cout << lines.str();
      } else {
        write_file(gd_out, lines.str());
      }
    } else if (*toy) {
      toy_cfg.d_head = toy_d_head ? *toy_d_head : toy_cfg.d_model / std::max<std::size_t>(1, toy_cfg.n_heads);
      toy_cfg.validate();
      save_model(toy_out, make_toy_model(toy_cfg, toy_seed, toy_tied), toy_f16 ? DType::f16 : DType::f32);
      if (!toy_tok_out.empty()) {
        const Tokenizer tok = toy_tok_kind == "ascii" ? Tokenizer::ascii_text() : Tokenizer::arithmetic();
        if (tok.vocab_size() > toy_cfg.vocab_size) {
          throw ValidationError("tokenizer has " + std::to_string(tok.vocab_size()) + " entries but --vocab is " +
                                std::to_string(toy_cfg.vocab_size));
        }
        tok.padded_to(toy_cfg.vocab_size).save(toy_tok_out);
      }
    } else if (*plot) {
      const std::string out = pl_out.empty() ? std::filesystem::path(pl_csv).replace_extension(".svg").string() : pl_out;
      emit_plot(pl_csv, out);
    } else if (*inspect) {
      const FileHeader h = read_header(in_path);
      std::cout << "format version " << h.version << "\n";
      std::cout << "config " << h.config.to_json().dump() << "\n";
      std::cout << "tied_embeddings " << (h.tied_embeddings ? "true" : "false") << "\n";
      for (const auto& t : h.tensors) {
        std::cout << t.name << "\t" << to_string(t.dtype) << "\t[";
        for (std::size_t i = 0; i < t.shape.size(); ++i) std::cout << (i ? ", " : "") << t.shape[i];
        std::cout << "]\t@" << t.offset << "\n";
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
