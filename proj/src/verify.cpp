#include "camp/verify.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <set>

#include "camp/errors.hpp"
#include "camp/gradcheck.hpp"

namespace camp {

namespace {

std::vector<std::string> random_captions(SplitMix64& rng, std::size_t n) {
  const auto all = all_factors();
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(caption_of(all[rng.next() % all.size()]));
  return out;
}

double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double m = 0;
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(static_cast<double>(x[i]) - y[i]));
  return m;
}

using Clock = std::chrono::steady_clock;

template <typename F>
double min_seconds(std::size_t repeats, F&& f) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
    const auto t0 = Clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(Clock::now() - t0).count());
  }
  return best;
}

}  // namespace

std::vector<EquivCase> equivalence_check(const EquivOptions& opt) {
  std::vector<EquivCase> out;
  for (const std::size_t k : opt.ks) {
    for (const bool neg : opt.negation_modes) {
      for (std::uint64_t seed = 0; seed < opt.seeds; ++seed) {
        TrainConfig cfg = opt.base;
        cfg.k = k;
        cfg.seed = seed;
        cfg.include_negation = neg;
        cfg.position_reset = opt.position_reset;
        const auto m = Model<float>::init(cfg);
        SplitMix64 rng(seed ^ 0x5eed5eedULL);
        const auto captions = random_captions(rng, opt.batch);
        const auto seqs = m.sequences(captions);
        const auto single = m.text.forward_singlepass(seqs);
        const auto multi = m.text.forward_multipass(seqs);
        EquivCase c;
        c.k = k;
        c.negation = neg;
        c.seed = seed;
        c.max_abs_diff = max_abs_diff(single.pooled, multi.pooled);
        c.pass = c.max_abs_diff < opt.tolerance;
        out.push_back(c);
      }
    }
  }
  return out;
}

// --- gradient check -----------------------------------------------------------

namespace {

TrainConfig gradcheck_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.k = 6;
  cfg.embed_dim = 24;
  cfg.include_negation = true;
  cfg.text_hidden = 16;
  cfg.text_heads = 2;
  cfg.text_layers = 2;
  cfg.unfrozen_layers = 1;
  cfg.vision_width = 16;
  cfg.vision_heads = 2;
  cfg.vision_layers = 1;
  cfg.pool_heads = 6;
  cfg.mlp_ratio = 2;
  cfg.max_frames = 4;
  return cfg;
}

struct GradProblem {
  Model<double> model;
  std::vector<std::string> captions;
  std::vector<std::vector<Image>> videos;
};

GradProblem make_problem(std::uint64_t seed, std::size_t batch) {
  GradProblem p{Model<double>::init(gradcheck_config(seed)), {}, {}};
  SplitMix64 rng(seed + 17);
  const auto all = all_factors();
  for (std::size_t i = 0; i < batch; ++i) {
    const auto& f = all[rng.next() % all.size()];
    p.captions.push_back(caption_of(f));
    p.videos.push_back(make_video(f, 2, 1.0));
  }
  // nonzero temporal rows so frames differ in the pooled sequence
  Tensor<double> t = p.model.vision.temporal;
  for (auto& x : t.data_mut()) x = 0.1 * rng.normal();
  return p;
}

struct Components {
  Tensor<double> con, div, neg, total;

  const Tensor<double>& get(const std::string& name) const {
    if (name == "con") return con;
    if (name == "div") return div;
    if (name == "neg") return neg;
    if (name == "total") return total;
    throw ConfigError("unknown loss component '" + name + "' (expected con, div, neg or total)");
  }
};

Components evaluate(const GradProblem& p) {
  const auto& m = p.model;
  const auto q = m.vision.encode_videos(p.videos).q;
  const auto text = project_and_concat(m.text.forward_singlepass(m.sequences(p.captions)), m.cfg.combine_mode,
                                       m.cfg.embed_dim);
  const auto s = m.logit_scale();
  Components c;
  const auto terms = contrastive_loss(text.p, q, s);
  c.con = terms.l_con;
  c.div = diversity_loss(text.segment_rows, m.cfg.k);
  c.neg = negation_loss(q, text.p, text.n, s);
  c.total = total_loss(terms, c.div, c.neg, m.cfg.alpha, m.cfg.beta, s).total;
  return c;
}

std::vector<std::string> default_sweep(const Model<double>& m) {
  const std::string last = "text.block" + std::to_string(m.cfg.text_layers - 1) + ".";
  return {"logit_scale.log", "text.apt_table", "text.proj", "text.lnf.g", last + "attn.wq", last + "mlp.w2",
          "vision.pool.query", "vision.pool.wk", "vision.temporal", "vision.block0.attn.wv"};
}

}  // namespace

std::vector<GradcheckRow> gradient_check(const GradcheckOptions& opt) {
  auto prob = make_problem(opt.seed, opt.batch);
  std::map<std::string, Tensor<double>> by_name;
  for (const auto& p : prob.model.parameters()) by_name.emplace(p.name, p.tensor);
  const auto names = opt.parameters.empty() ? default_sweep(prob.model) : opt.parameters;
  for (const auto& n : names) {
    auto it = by_name.find(n);
    if (it == by_name.end()) throw ConfigError("gradcheck: no parameter named '" + n + "'");
    if (!it->second.requires_grad()) throw ConfigError("gradcheck: parameter '" + n + "' is frozen");
  }
  for (const auto& c : opt.components) Components{}.get(c);  // validates names

  // analytic: one backward per component
  std::map<std::string, std::map<std::string, std::vector<double>>> analytic;
  for (const auto& c : opt.components) {
    for (const auto& p : prob.model.parameters()) p.tensor.drop_grad();
    GradTape<double> tape;
    Components comps;
    {
      GradTape<double>::Scope scope(tape);
      comps = evaluate(prob);
    }
    tape.backward(comps.get(c));
    for (const auto& n : names) {
      const auto& t = by_name.at(n);
      std::vector<double> g(t.numel(), 0.0);
      if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), g.begin());
      analytic[c][n] = std::move(g);
    }
  }
  for (const auto& p : prob.model.parameters()) p.tensor.drop_grad();

  // numeric: every perturbation evaluates all components at once
  std::vector<GradcheckRow> rows;
  for (const auto& n : names) {
    Tensor<double> t = by_name.at(n);
    auto x = t.data_mut();
    std::map<std::string, std::vector<double>> numeric;
    for (const auto& c : opt.components) numeric[c].assign(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      // five-point stencil: truncation O(h^4), so h can sit well above roundoff
      const double saved = x[i], h = opt.step;
      auto at = [&](double offset) {
        x[i] = saved + offset;
        return evaluate(prob);
      };
      const auto p2 = at(2 * h), p1 = at(h), m1 = at(-h), m2 = at(-2 * h);
      x[i] = saved;
      for (const auto& c : opt.components) {
        numeric[c][i] = (8 * (p1.get(c).item() - m1.get(c).item()) - (p2.get(c).item() - m2.get(c).item())) /
                        (12 * h);
      }
    }
    for (const auto& c : opt.components) {
      const auto cmp = compare_gradients<double>(analytic[c][n], numeric[c], opt.floor);
      rows.push_back({c, n, cmp.max_rel_error, cmp.max_abs_error, cmp.count});
    }
  }
  return rows;
}

std::vector<std::string> frozen_parameters_with_gradient(std::uint64_t seed) {
  auto prob = make_problem(seed, 4);
  GradTape<double> tape;
  Components comps;
  {
    GradTape<double>::Scope scope(tape);
    comps = evaluate(prob);
  }
  tape.backward(comps.total);
  std::vector<std::string> bad;
  for (const auto& p : prob.model.parameters()) {
    if (p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
    const auto g = p.tensor.grad();
    if (std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; })) bad.push_back(p.name);
  }
  return bad;
}

// --- benchmark --------------------------------------------------------------------

std::vector<PassTiming> bench_passes(const BenchOptions& opt) {
  std::vector<PassTiming> out;
  for (const std::size_t k : opt.ks) {
    TrainConfig cfg = opt.base;
    cfg.k = k;
    cfg.include_negation = false;
    const auto m = Model<float>::init(cfg);
    SplitMix64 rng(cfg.seed + 99);
    const auto seqs = m.sequences(random_captions(rng, opt.batch));
    std::vector<std::vector<SegmentedSequence>> singles(k);
    for (const auto& s : seqs) {
      for (std::size_t seg = 1; seg <= k; ++seg) singles[seg - 1].push_back(standalone_prompt(s, seg));
    }
    PassTiming t;
    t.k = k;
    t.single_pass_s = min_seconds(opt.repeats, [&] { m.text.forward_singlepass(seqs); });
    t.one_prompt_s = min_seconds(opt.repeats, [&] { m.text.forward_singlepass(singles[0]); });
    t.multi_pass_s = min_seconds(opt.repeats, [&] {
      for (const auto& batch : singles) m.text.forward_singlepass(batch);
    });
    t.ratio = t.single_pass_s / (static_cast<double>(k) * t.one_prompt_s);
    out.push_back(t);
  }
  return out;
}

// --- training runs -------------------------------------------------------------------

double process_cpu_seconds() {
  rusage u{};
  getrusage(RUSAGE_SELF, &u);
  return static_cast<double>(u.ru_utime.tv_sec + u.ru_stime.tv_sec) +
         1e-6 * static_cast<double>(u.ru_utime.tv_usec + u.ru_stime.tv_usec);
}

RunResult train_and_evaluate(const TrainConfig& cfg, std::ostream* metrics, std::unique_ptr<Trainer>* trainer) {
  auto t = std::make_unique<Trainer>(cfg);
  const auto t0 = Clock::now();
  const double c0 = process_cpu_seconds();
  t->run(metrics);
  RunResult r;
  r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  r.cpu_seconds = process_cpu_seconds() - c0;
  const auto e = embed_samples(t->model(), t->eval_set());
  r.reports = evaluate_retrieval(e);
  r.segment_cosine = mean_segment_cosine(e, cfg.k);
  if (trainer) *trainer = std::move(t);
  return r;
}

std::vector<Image> two_object_images() {
  using S = ShapeKind;
  using C = ColorKind;
  using B = BackgroundKind;
  using P = PositionKind;
  const std::vector<std::pair<FactorSpec, FactorSpec>> pairs = {
      {{S::circle, C::red, B::black, P::left}, {S::square, C::blue, B::black, P::right}},
      {{S::triangle, C::green, B::gray, P::left}, {S::cross, C::yellow, B::gray, P::right}},
      {{S::square, C::yellow, B::white, P::center}, {S::circle, C::blue, B::white, P::right}},
      {{S::cross, C::red, B::gray, P::left}, {S::triangle, C::blue, B::gray, P::center}},
      {{S::circle, C::green, B::white, P::left}, {S::cross, C::red, B::white, P::right}},
      {{S::square, C::blue, B::black, P::left}, {S::triangle, C::yellow, B::black, P::center}},
  };
  std::vector<Image> out;
  for (const auto& [a, b] : pairs) out.push_back(render_two_objects(a, b));
  return out;
}

std::size_t distinct_argmax_patches(const Model<float>& m, const Image& image) {
  const auto set = attention_maps_by_segment(image, m.vision, m.cfg.k);
  std::set<std::size_t> argmax;
  for (const auto& map : set.maps) {
    argmax.insert(static_cast<std::size_t>(std::max_element(map.begin(), map.end()) - map.begin()));
  }
  return argmax.size();
}

}  // namespace camp
