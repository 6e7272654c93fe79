// camp: train, evaluate and verify the multi-prompt embedding model.
//
// Exit codes: 0 success, 1 a check failed, 2 bad arguments or config,
// 3 runtime failure (numeric, I/O, malformed files).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "camp/errors.hpp"
#include "camp/kernels.hpp"
#include "camp/verify.hpp"

namespace fs = std::filesystem;
using namespace camp;

namespace {

constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;
constexpr int kRuntime = 3;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k, unfrozen, steps, batch;
  std::optional<double> alpha, beta;
  std::optional<std::string> template_mode, combine_mode;
  std::optional<bool> negation;
  bool learnable_vocab = false;
  std::vector<std::string> set;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "key = value config file");
    app->add_option("--seed", seed);
    app->add_option("--k", k, "number of prompts");
    app->add_option("--alpha", alpha, "diversity weight");
    app->add_option("--beta", beta, "negation weight");
    app->add_option("--template-mode", template_mode, "adaptive | shared_apt | fixed | minimal");
    app->add_option("--combine-mode", combine_mode, "concat | average");
    app->add_flag("--negation,!--no-negation", negation, "include negation prompts");
    app->add_option("--unfrozen-layers", unfrozen);
    app->add_flag("--learnable-vocab", learnable_vocab);
    app->add_option("--steps", steps, "total training steps");
    app->add_option("--batch-size", batch);
    app->add_option("--set", set, "any config key as key=value")->allow_extra_args(false);
  }

  TrainConfig build() const {
    TrainConfig cfg = config.empty() ? TrainConfig{} : load_config(config);
    auto put = [&](const char* key, const auto& v) {
      if (v) cfg.set(key, to_text(*v));
    };
    put("seed", seed);
    put("k", k);
    put("alpha", alpha);
    put("beta", beta);
    put("template_mode", template_mode);
    put("combine_mode", combine_mode);
    put("include_negation", negation);
    put("unfrozen_layers", unfrozen);
    put("total_steps", steps);
    put("batch_size", batch);
    if (learnable_vocab) cfg.set("learnable_vocab", "true");
    for (const auto& kv : set) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
  }

 private:
  static std::string to_text(const std::string& s) { return s; }
  static std::string to_text(bool b) { return b ? "true" : "false"; }
  template <typename N>
  static std::string to_text(N n) {
    return CLI::detail::to_string(n);
  }
};

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const auto part = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (part.empty()) throw ConfigError("empty entry in list '" + text + "'");
    std::size_t used = 0;
    const unsigned long v = std::stoul(part, &used);
    if (used != part.size()) throw ConfigError("not a number: '" + part + "'");
    out.push_back(v);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    out.push_back(text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

int cmd_train(const Overrides& ov, const std::string& out_dir) {
  const auto cfg = ov.build();
  fs::create_directories(out_dir);
  const auto metrics_path = fs::path(out_dir) / "metrics.tsv";
  const auto ckpt_path = fs::path(out_dir) / "checkpoint.camp";
  std::ofstream metrics(metrics_path);
  if (!metrics) throw std::runtime_error("cannot write " + metrics_path.string());
  Trainer t(cfg);
  t.run(&metrics);
  t.save(ckpt_path);
  std::cout << "checkpoint\t" << ckpt_path.string() << "\nmetrics\t" << metrics_path.string() << "\nsteps\t"
            << t.steps_done() << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& split) {
  const auto t = Trainer::load(checkpoint);
  const auto& samples = split == "train" ? t.train_set() : t.eval_set();
  std::cout << format_reports(evaluate_retrieval(embed_samples(t.model(), samples)));
  return 0;
}

int cmd_equivcheck(const std::string& ks, std::size_t seeds, double tol, const std::string& negation,
                   bool no_reset) {
  EquivOptions opt;
  opt.ks = parse_list(ks);
  opt.seeds = seeds;
  opt.tolerance = tol;
  opt.position_reset = !no_reset;
  if (negation == "off") {
    opt.negation_modes = {false};
  } else if (negation == "on") {
    opt.negation_modes = {true};
  } else if (negation != "both") {
    throw ConfigError("--negation-modes expects off, on or both");
  }
  bool ok = true;
  double worst = 0;
  std::cout << "k\tnegation\tseed\tmax_abs_diff\tresult\n";
  for (const auto& c : equivalence_check(opt)) {
    std::printf("%zu\t%d\t%llu\t%.3e\t%s\n", c.k, c.negation ? 1 : 0, static_cast<unsigned long long>(c.seed),
                c.max_abs_diff, c.pass ? "pass" : "FAIL");
    ok = ok && c.pass;
    worst = std::max(worst, c.max_abs_diff);
  }
  std::printf("summary\t%s\tworst=%.3e\ttol=%.1e\n", ok ? "pass" : "FAIL", worst, tol);
  return ok ? 0 : kCheckFailed;
}

int cmd_gradcheck(const std::string& components, const std::string& params, std::uint64_t seed, double tol) {
  GradcheckOptions opt;
  opt.components = split_names(components);
  if (!params.empty()) opt.parameters = split_names(params);
  opt.seed = seed;
  bool ok = true;
  std::cout << "component\tparameter\tmax_rel_error\tmax_abs_error\tcount\tresult\n";
  for (const auto& r : gradient_check(opt)) {
    const bool pass = r.max_rel_error < tol;
    ok = ok && pass;
    std::printf("%s\t%s\t%.3e\t%.3e\t%zu\t%s\n", r.component.c_str(), r.parameter.c_str(), r.max_rel_error,
                r.max_abs_error, r.count, pass ? "pass" : "FAIL");
  }
  const auto frozen = frozen_parameters_with_gradient(seed);
  std::printf("frozen\t%zu_nonzero\t%s\n", frozen.size(), frozen.empty() ? "pass" : "FAIL");
  for (const auto& n : frozen) std::printf("frozen_nonzero\t%s\n", n.c_str());
  return ok && frozen.empty() ? 0 : kCheckFailed;
}

int cmd_attnmaps(const std::string& checkpoint, const std::string& ids, bool two_object, const std::string& out) {
  const auto t = Trainer::load(checkpoint);
  const auto& m = t.model();
  std::vector<std::pair<std::string, Image>> images;
  const auto all = all_factors();
  if (!ids.empty()) {
    for (auto id : parse_list(ids)) {
      if (id >= all.size()) throw IndexError("sample id " + std::to_string(id) + " outside 0.." + std::to_string(all.size() - 1));
      images.emplace_back("sample" + std::to_string(id), render_image(all[id]));
    }
  }
  if (two_object) {
    const auto imgs = two_object_images();
    for (std::size_t i = 0; i < imgs.size(); ++i) images.emplace_back("pair" + std::to_string(i), imgs[i]);
  }
  if (images.empty()) throw ConfigError("attnmaps: give --ids and/or --two-object");
  std::cout << "image\tsegment\tsum\targmax_patch\tfile\n";
  for (const auto& [stem, img] : images) {
    const auto set = attention_maps_by_segment(img, m.vision, m.cfg.k);
    const auto files = export_attention_maps(set, out, stem);
    for (std::size_t s = 0; s < set.maps.size(); ++s) {
      double sum = 0;
      for (double v : set.maps[s]) sum += v;
      const auto arg = std::max_element(set.maps[s].begin(), set.maps[s].end()) - set.maps[s].begin();
      std::printf("%s\t%zu\t%.9f\t%td\t%s\n", stem.c_str(), s + 1, sum, arg, files[2 * s].string().c_str());
    }
  }
  return 0;
}

int cmd_bench(const std::string& ks, std::size_t repeats, std::size_t batch) {
  BenchOptions opt;
  opt.ks = parse_list(ks);
  opt.repeats = repeats;
  opt.batch = batch;
  std::cout << "k\tsingle_pass_s\tone_prompt_s\tk_pass_s\tratio\n";
  for (const auto& t : bench_passes(opt)) {
    std::printf("%zu\t%.6f\t%.6f\t%.6f\t%.4f\n", t.k, t.single_pass_s, t.one_prompt_s, t.multi_pass_s, t.ratio);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  kernels::configure_threads_from_env();
  CLI::App app{"Context-adaptive multi-prompt embedding: training and verification"};
  app.require_subcommand(1);

  Overrides ov;
  std::string out_dir = "run";
  auto* train = app.add_subcommand("train", "train a model, write checkpoint.camp and metrics.tsv");
  ov.attach(train);
  train->add_option("--out", out_dir, "output directory");

  std::string checkpoint, split = "eval";
  auto* eval = app.add_subcommand("eval", "retrieval recall of a checkpoint");
  eval->add_option("checkpoint", checkpoint)->required();
  eval->add_option("--split", split)->check(CLI::IsMember({"train", "eval"}));

  std::string ks = "1,3,6", negation_modes = "both";
  std::size_t seeds = 20;
  double tol = 1e-5;
  bool no_reset = false;
  auto* equiv = app.add_subcommand("equivcheck", "single-pass vs multi-pass embeddings");
  equiv->add_option("--k", ks, "comma-separated prompt counts");
  equiv->add_option("--seeds", seeds);
  equiv->add_option("--tol", tol);
  equiv->add_option("--negation-modes", negation_modes, "off | on | both");
  equiv->add_flag("--no-position-reset", no_reset, "debug: continue positions across prompts");

  std::string components = "con,div,neg,total", params;
  std::uint64_t gseed = 0;
  double gtol = 1e-3;
  auto* grad = app.add_subcommand("gradcheck", "analytic vs finite-difference gradients");
  grad->add_option("--components", components);
  grad->add_option("--params", params, "comma-separated parameter names (default sweep if empty)");
  grad->add_option("--seed", gseed);
  grad->add_option("--tol", gtol);

  std::string ids, maps_out = "maps";
  bool two_object = false;
  auto* maps = app.add_subcommand("attnmaps", "export per-segment pooling attention maps");
  maps->add_option("checkpoint", checkpoint)->required();
  maps->add_option("--ids", ids, "comma-separated combination ids (0..143)");
  maps->add_flag("--two-object", two_object, "also export the two-object probe images");
  maps->add_option("--out", maps_out);

  std::string bench_ks = "1,2,3,6";
  std::size_t repeats = 5, batch = 32;
  auto* bench = app.add_subcommand("bench", "single-pass vs K single-prompt passes");
  bench->add_option("--k", bench_ks);
  bench->add_option("--repeats", repeats);
  bench->add_option("--batch", batch);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*train) return cmd_train(ov, out_dir);
    if (*eval) return cmd_eval(checkpoint, split);
    if (*equiv) return cmd_equivcheck(ks, seeds, tol, negation_modes, no_reset);
    if (*grad) return cmd_gradcheck(components, params, gseed, gtol);
    if (*maps) return cmd_attnmaps(checkpoint, ids, two_object, maps_out);
    if (*bench) return cmd_bench(bench_ks, repeats, batch);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kUsage;
  } catch (const IndexError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
