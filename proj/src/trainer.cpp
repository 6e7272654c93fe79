#include "camp/trainer.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "camp/errors.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace camp {

double lr_at(std::size_t step, const TrainConfig& cfg) {
  const double s = static_cast<double>(step);
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
    return cfg.peak_lr * s / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.lr_schedule == LrSchedule::cosine && cfg.total_steps > cfg.warmup_steps) {
    const double span = static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    const double t = std::min(1.0, (s - static_cast<double>(cfg.warmup_steps)) / span);
    return cfg.peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
  }
  return cfg.peak_lr;
}

template <typename T>
OptimizerState<T> OptimizerState<T>::from_config(const TrainConfig& cfg) {
  OptimizerState s;
  s.beta1 = cfg.adam_beta1;
  s.beta2 = cfg.adam_beta2;
  s.eps = cfg.adam_eps;
  s.weight_decay = cfg.weight_decay;
  return s;
}

bool decays(const std::string& param_name) { return param_name != "logit_scale.log"; }

template <typename T>
void adamw_step(const ParamList<T>& params, OptimizerState<T>& state, double lr) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (const auto& [name, tensor] : params) {
    if (!tensor.requires_grad()) continue;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (!m.defined()) m = Tensor<T>::zeros(tensor.shape());
    if (!v.defined()) v = Tensor<T>::zeros(tensor.shape());
    if (m.shape() != tensor.shape() || v.shape() != tensor.shape()) {
      throw DimensionError("optimizer state for " + name + " has shape " + shape_str(m.shape()) +
                           ", parameter has " + shape_str(tensor.shape()));
    }
    Tensor<T> p = tensor;
    auto pd = p.data_mut();
    const auto g = tensor.grad();
    auto md = m.data_mut();
    auto vd = v.data_mut();
    const double wd = decays(name) ? state.weight_decay : 0.0;
    for (std::size_t i = 0; i < pd.size(); ++i) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
      const double mi = state.beta1 * md[i] + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * vd[i] + (1.0 - state.beta2) * gi * gi;
      md[i] = static_cast<T>(mi);
      vd[i] = static_cast<T>(vi);
      const double mhat = static_cast<double>(md[i]) / c1;
      const double vhat = static_cast<double>(vd[i]) / c2;
      const double x = static_cast<double>(pd[i]);
      pd[i] = static_cast<T>(x - lr * (mhat / (std::sqrt(vhat) + state.eps) + wd * x));
    }
  }
}

template <typename T>
double clip_gradients(const ParamList<T>& params, double max_norm) {
  double ss = 0;
  for (const auto& p : params) {
    if (!p.tensor.requires_grad()) continue;
    for (T g : p.tensor.grad()) ss += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(ss);
  if (max_norm > 0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (const auto& p : params) {
      if (!p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
      for (auto& g : p.tensor.grad_mut()) g = static_cast<T>(g * f);
    }
  }
  return norm;
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t step, std::size_t batch_size,
                                       std::size_t n) {
  if (n == 0) throw ConfigError("cannot draw batches from an empty training set");
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm;
  for (std::size_t j = 0; j < batch_size; ++j) {
    const std::size_t flat = step * batch_size + j;
    const std::size_t epoch = flat / n;
    if (epoch != cached_epoch) {
      perm.resize(n);
      for (std::size_t i = 0; i < n; ++i) perm[i] = i;
      SplitMix64 rng(seed ^ (0xD1B54A32D192ED03ULL * (epoch + 1)));
      rng.shuffle(perm);
      cached_epoch = epoch;
    }
    out.push_back(perm[flat % n]);
  }
  return out;
}

std::string metrics_line(const StepMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g", m.step, m.loss.l_total, m.loss.l_con,
                m.loss.l_div, m.loss.l_neg, m.loss.tau, m.lr);
  return buf;
}

std::pair<std::vector<Sample>, std::vector<Sample>> dataset_for(const TrainConfig& cfg) {
  if (cfg.corpus_index.empty()) return generate_split(cfg.n_train, cfg.n_eval, cfg.seed);
  auto all = load_external_corpus(cfg.corpus_index, cfg.image_side);
  if (cfg.n_train + cfg.n_eval > all.size()) {
    throw ConfigError("corpus holds " + std::to_string(all.size()) + " samples, config asks for " +
                      std::to_string(cfg.n_train + cfg.n_eval));
  }
  std::vector<Sample> train(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cfg.n_train));
  std::vector<Sample> eval(all.begin() + static_cast<std::ptrdiff_t>(cfg.n_train),
                           all.begin() + static_cast<std::ptrdiff_t>(cfg.n_train + cfg.n_eval));
  return {std::move(train), std::move(eval)};
}

// --- trainer ----------------------------------------------------------------

Trainer::Trainer(const TrainConfig& cfg)
    : model_(Model<float>::init(cfg)), opt_(OptimizerState<float>::from_config(cfg)) {
  load_data();
}

Trainer::Trainer(Model<float> model, OptimizerState<float> opt) : model_(std::move(model)), opt_(std::move(opt)) {
  load_data();
}

void Trainer::load_data() {
#if defined(__GLIBC__)
  // Step tensors are large and short-lived; keep freed pages instead of unmapping them.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
  auto [train, eval] = dataset_for(model_.cfg);
  train_ = std::move(train);
  eval_ = std::move(eval);
}

StepMetrics Trainer::step() {
  const auto& cfg = model_.cfg;
  const std::size_t s = opt_.step;
  const auto idx = batch_indices(cfg.seed, s, cfg.batch_size, train_.size());
  std::vector<Sample> batch;
  batch.reserve(idx.size());
  for (auto i : idx) batch.push_back(train_[i]);

  const auto params = model_.parameters();
  for (const auto& p : params) p.tensor.drop_grad();

  StepMetrics out;
  out.step = s;
  out.lr = lr_at(s, cfg);
  GradTape<float> tape;
  BatchForward<float> fwd;
  try {
    {
      GradTape<float>::Scope scope(tape);
      fwd = forward_batch(model_, batch);
    }
    out.loss = fwd.loss.breakdown;
    tape.backward(fwd.loss.total);
  } catch (const NumericError& e) {
    std::ostringstream msg;
    msg << "step " << s << ": " << e.what();
    if (fwd.loss.total.defined()) {
      msg << " (l_con=" << out.loss.l_con << " l_div=" << out.loss.l_div << " l_neg=" << out.loss.l_neg << ")";
    }
    throw NumericError(msg.str());
  }
  if (cfg.grad_clip > 0) clip_gradients(params, cfg.grad_clip);
  adamw_step(params, opt_, out.lr);
  model_.clamp_temperature();
  return out;
}

void Trainer::run(std::ostream* metrics, std::size_t until) {
  if (until == 0) until = model_.cfg.total_steps;
  while (opt_.step < until) {
    const auto m = step();
    if (metrics) *metrics << metrics_line(m) << '\n' << std::flush;
  }
}

void Trainer::save(const std::filesystem::path& path) const { save_checkpoint(model_, opt_, path); }

Trainer Trainer::load(const std::filesystem::path& path) {
  auto ck = load_checkpoint(path);
  return Trainer(std::move(ck.model), std::move(ck.opt));
}

// --- checkpoint -------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'C', 'A', 'M', 'P'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  template <typename U>
  void le(U v) {
    unsigned char b[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, sizeof(U));
  }
  void str(const std::string& s) {
    le(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const std::string& name, const Tensor<float>& t) {
    str(name);
    le(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) le(static_cast<std::uint64_t>(d));
    for (float f : t.data()) le(std::bit_cast<std::uint32_t>(f));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  std::uint64_t offset() const { return offset_; }
  void bytes(void* p, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what,
                        offset_ + static_cast<std::uint64_t>(in_.gcount()));
    }
    offset_ += n;
  }
  template <typename U>
  U le(const char* what) {
    unsigned char b[sizeof(U)];
    bytes(b, sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
    return v;
  }
  std::string str(const char* what, std::uint32_t limit) {
    const auto at = offset_;
    const auto n = le<std::uint32_t>(what);
    if (n > limit) throw FormatError(std::string(what) + " length " + std::to_string(n) + " is implausible", at);
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

}  // namespace

void save_checkpoint(const Model<float>& model, const OptimizerState<float>& opt, std::ostream& out) {
  const auto params = model.parameters();
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  for (const auto& p : params) tensors.emplace_back(p.name, p.tensor);
  for (const auto& p : params) {
    if (auto it = opt.m.find(p.name); it != opt.m.end()) tensors.emplace_back("opt.m." + p.name, it->second);
    if (auto it = opt.v.find(p.name); it != opt.v.end()) tensors.emplace_back("opt.v." + p.name, it->second);
  }
  Writer w(out);
  w.bytes(kMagic, 4);
  w.le(kVersion);
  w.le(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) w.tensor(name, t);
  w.str(serialize_config(model.cfg) + "optimizer_step = " + std::to_string(opt.step) + "\n");
  if (!out) throw ConfigError("checkpoint write failed");
}

void save_checkpoint(const Model<float>& model, const OptimizerState<float>& opt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  save_checkpoint(model, opt, out);
}

Checkpoint load_checkpoint(std::istream& in) {
  Reader r(in);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (!std::equal(magic, magic + 4, kMagic)) throw FormatError("not a CAMP checkpoint (bad magic)", 0);
  const auto version = r.le<std::uint32_t>("version");
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const auto count = r.le<std::uint32_t>("tensor count");

  struct Raw {
    std::string name;
    Shape shape;
    std::vector<float> data;
    std::uint64_t offset;
  };
  std::vector<Raw> raws;
  for (std::uint32_t i = 0; i < count; ++i) {
    Raw t;
    t.offset = r.offset();
    t.name = r.str("tensor name", 4096);
    const auto rank_at = r.offset();
    const auto rank = r.le<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) throw FormatError("tensor " + t.name + " has invalid rank " + std::to_string(rank), rank_at);
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto at = r.offset();
      const auto dim = r.le<std::uint64_t>("dimension");
      if (dim == 0 || dim > (1ULL << 32)) throw FormatError("tensor " + t.name + " has invalid dimension", at);
      numel *= dim;
      if (numel > (1ULL << 32)) throw FormatError("tensor " + t.name + " is implausibly large", at);
      t.shape.push_back(static_cast<std::size_t>(dim));
    }
    t.data.resize(static_cast<std::size_t>(numel));
    for (auto& f : t.data) f = std::bit_cast<float>(r.le<std::uint32_t>("tensor payload"));
    raws.push_back(std::move(t));
  }
  const auto blob_at = r.offset();
  const auto blob = r.str("config", 1u << 20);

  std::istringstream lines(blob);
  std::string cfg_text;
  std::size_t step = 0;
  bool have_step = false;
  for (std::string line; std::getline(lines, line);) {
    if (line.rfind("optimizer_step", 0) == 0) {
      const auto eq = line.find('=');
      try {
        step = std::stoull(line.substr(eq + 1));
      } catch (const std::exception&) {
        throw FormatError("bad optimizer_step in checkpoint config", blob_at);
      }
      have_step = true;
    } else {
      cfg_text += line + "\n";
    }
  }
  if (!have_step) throw FormatError("checkpoint config lacks optimizer_step", blob_at);
  TrainConfig cfg;
  try {
    std::istringstream cin(cfg_text);
    cfg = parse_config(cin);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what(), blob_at);
  }

  Checkpoint ck{Model<float>::init(cfg), OptimizerState<float>::from_config(cfg)};
  ck.opt.step = step;
  const auto params = ck.model.parameters();
  std::map<std::string, Tensor<float>> by_name;
  for (const auto& p : params) by_name.emplace(p.name, p.tensor);
  std::size_t loaded = 0;
  std::set<std::string> seen;
  for (auto& t : raws) {
    if (!seen.insert(t.name).second) throw FormatError("duplicate tensor '" + t.name + "' in checkpoint", t.offset);
    std::string pname = t.name;
    std::map<std::string, Tensor<float>>* moments = nullptr;
    if (pname.rfind("opt.m.", 0) == 0) {
      moments = &ck.opt.m;
      pname = pname.substr(6);
    } else if (pname.rfind("opt.v.", 0) == 0) {
      moments = &ck.opt.v;
      pname = pname.substr(6);
    }
    auto it = by_name.find(pname);
    if (it == by_name.end()) throw FormatError("unknown tensor '" + t.name + "' in checkpoint", t.offset);
    if (it->second.shape() != t.shape) {
      throw FormatError("tensor '" + t.name + "' has shape " + shape_str(t.shape) + ", model expects " +
                            shape_str(it->second.shape()),
                        t.offset);
    }
    if (moments) {
      (*moments)[pname] = Tensor<float>(t.shape, std::move(t.data));
    } else {
      auto dst = it->second.data_mut();
      std::copy(t.data.begin(), t.data.end(), dst.begin());
      ++loaded;
    }
  }
  if (loaded != params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(loaded) + " of " + std::to_string(params.size()) +
                          " model tensors",
                      blob_at);
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void adamw_step(const ParamList<float>&, OptimizerState<float>&, double);
template void adamw_step(const ParamList<double>&, OptimizerState<double>&, double);
template double clip_gradients(const ParamList<float>&, double);
template double clip_gradients(const ParamList<double>&, double);

}  // namespace camp
