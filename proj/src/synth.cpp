#include "camp/synth.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "camp/errors.hpp"

namespace camp {

namespace {

constexpr std::array<std::string_view, 4> kShapes = {"circle", "square", "triangle", "cross"};
constexpr std::array<std::string_view, 4> kColors = {"red", "green", "blue", "yellow"};
constexpr std::array<std::string_view, 3> kBackgrounds = {"black", "white", "gray"};
constexpr std::array<std::string_view, 3> kPositions = {"left", "center", "right"};

constexpr std::array<std::array<float, 3>, 4> kColorRgb = {{
    {1.0f, 0.0f, 0.0f},
    {0.0f, 1.0f, 0.0f},
    {0.0f, 0.0f, 1.0f},
    {1.0f, 1.0f, 0.0f},
}};
constexpr std::array<float, 3> kBackgroundLevel = {0.0f, 1.0f, 0.5f};
constexpr std::array<double, 3> kCenterX = {6.0, 16.0, 26.0};
constexpr double kCenterY = 16.0;
constexpr double kRadius = 5.0;

bool covers(ShapeKind shape, double dx, double dy) {
  switch (shape) {
    case ShapeKind::circle:
      return dx * dx + dy * dy <= kRadius * kRadius;
    case ShapeKind::square:
      return std::abs(dx) <= 4.0 && std::abs(dy) <= 4.0;
    case ShapeKind::triangle:
      return dy >= -kRadius && dy <= kRadius && std::abs(dx) <= (dy + kRadius) / 2.0;
    case ShapeKind::cross:
      return (std::abs(dx) <= kRadius && std::abs(dy) <= 1.5) ||
             (std::abs(dy) <= kRadius && std::abs(dx) <= 1.5);
  }
  return false;
}

template <std::size_t N>
std::optional<std::size_t> lookup(const std::array<std::string_view, N>& names, std::string_view word) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == word) return i;
  }
  return std::nullopt;
}

}  // namespace

double SplitMix64::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::string_view name(ShapeKind v) { return kShapes[static_cast<std::size_t>(v)]; }
std::string_view name(ColorKind v) { return kColors[static_cast<std::size_t>(v)]; }
std::string_view name(BackgroundKind v) { return kBackgrounds[static_cast<std::size_t>(v)]; }
std::string_view name(PositionKind v) { return kPositions[static_cast<std::size_t>(v)]; }

std::vector<FactorSpec> all_factors() {
  std::vector<FactorSpec> out;
  out.reserve(kFactorCombinations);
  for (std::size_t s = 0; s < kShapes.size(); ++s) {
    for (std::size_t c = 0; c < kColors.size(); ++c) {
      for (std::size_t b = 0; b < kBackgrounds.size(); ++b) {
        for (std::size_t p = 0; p < kPositions.size(); ++p) {
          out.push_back({static_cast<ShapeKind>(s), static_cast<ColorKind>(c),
                         static_cast<BackgroundKind>(b), static_cast<PositionKind>(p)});
        }
      }
    }
  }
  return out;
}

std::size_t factor_index(const FactorSpec& f) {
  return ((static_cast<std::size_t>(f.shape) * 4 + static_cast<std::size_t>(f.color)) * 3 +
          static_cast<std::size_t>(f.background)) *
             3 +
         static_cast<std::size_t>(f.position);
}

Image render_image_shifted(const FactorSpec& f, double shift) {
  constexpr std::size_t side = kImageSide;
  Image img;
  img.side = side;
  img.pixels.assign(3 * side * side, kBackgroundLevel[static_cast<std::size_t>(f.background)]);
  const auto& rgb = kColorRgb[static_cast<std::size_t>(f.color)];
  const double cx = kCenterX[static_cast<std::size_t>(f.position)] + shift;
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double dy = static_cast<double>(y) + 0.5 - kCenterY;
      if (!covers(f.shape, dx, dy)) continue;
      for (std::size_t c = 0; c < 3; ++c) img.pixels[(c * side + y) * side + x] = rgb[c];
    }
  }
  return img;
}

Image render_image(const FactorSpec& f) { return render_image_shifted(f, 0.0); }

Image render_two_objects(const FactorSpec& first, const FactorSpec& second) {
  if (first.position == second.position) {
    throw ConfigError("two-object image needs two different positions");
  }
  Image img = render_image(first);
  const std::size_t side = img.side;
  const auto& rgb = kColorRgb[static_cast<std::size_t>(second.color)];
  const double cx = kCenterX[static_cast<std::size_t>(second.position)];
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double dy = static_cast<double>(y) + 0.5 - kCenterY;
      if (!covers(second.shape, dx, dy)) continue;
      for (std::size_t c = 0; c < 3; ++c) img.pixels[(c * side + y) * side + x] = rgb[c];
    }
  }
  return img;
}

std::string caption_of(const FactorSpec& f) {
  std::string s = "a ";
  s += name(f.color);
  s += ' ';
  s += name(f.shape);
  s += " on a ";
  s += name(f.background);
  s += " background at the ";
  s += name(f.position);
  return s;
}

std::optional<FactorSpec> parse_caption(std::string_view caption) {
  std::istringstream in{std::string(caption)};
  std::vector<std::string> w;
  for (std::string t; in >> t;) w.push_back(t);
  if (w.size() != 10 || w[0] != "a" || w[3] != "on" || w[4] != "a" || w[6] != "background" ||
      w[7] != "at" || w[8] != "the") {
    return std::nullopt;
  }
  const auto color = lookup(kColors, w[1]);
  const auto shape = lookup(kShapes, w[2]);
  const auto background = lookup(kBackgrounds, w[5]);
  const auto position = lookup(kPositions, w[9]);
  if (!color || !shape || !background || !position) return std::nullopt;
  return FactorSpec{static_cast<ShapeKind>(*shape), static_cast<ColorKind>(*color),
                    static_cast<BackgroundKind>(*background), static_cast<PositionKind>(*position)};
}

const std::vector<std::string>& corpus_words() {
  static const std::vector<std::string> words = [] {
    std::vector<std::string> v = {"a", "on", "background", "at", "the"};
    for (auto n : kColors) v.emplace_back(n);
    for (auto n : kShapes) v.emplace_back(n);
    for (auto n : kBackgrounds) v.emplace_back(n);
    for (auto n : kPositions) v.emplace_back(n);
    return v;
  }();
  return words;
}

Sample make_sample(const FactorSpec& f) {
  return Sample{factor_index(f), render_image(f), caption_of(f), f};
}

std::pair<std::vector<Sample>, std::vector<Sample>> generate_split(std::size_t n_train,
                                                                   std::size_t n_eval,
                                                                   std::uint64_t seed) {
  if (n_train + n_eval > kFactorCombinations) {
    throw ConfigError("requested " + std::to_string(n_train + n_eval) + " samples but only " +
                      std::to_string(kFactorCombinations) + " factor combinations exist");
  }
  auto factors = all_factors();
  SplitMix64 rng(seed);
  rng.shuffle(factors);
  std::vector<Sample> train, eval;
  train.reserve(n_train);
  eval.reserve(n_eval);
  for (std::size_t i = 0; i < n_train; ++i) train.push_back(make_sample(factors[i]));
  for (std::size_t i = 0; i < n_eval; ++i) eval.push_back(make_sample(factors[n_train + i]));
  return {std::move(train), std::move(eval)};
}

std::vector<Image> make_video(const FactorSpec& f, std::size_t frames, double step) {
  std::vector<Image> out;
  out.reserve(frames);
  for (std::size_t t = 0; t < frames; ++t) out.push_back(render_image_shifted(f, step * static_cast<double>(t)));
  return out;
}

std::vector<Sample> load_external_corpus(const std::filesystem::path& index, std::size_t side) {
  std::ifstream in(index, std::ios::binary);
  if (!in) throw ConfigError("cannot open corpus index " + index.string());
  std::vector<Sample> out;
  std::uint64_t offset = 0;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const std::uint64_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw FormatError("corpus index line " + std::to_string(line_no) + " needs 3 tab-separated fields",
                        line_start);
    }
    Sample s;
    try {
      s.id = std::stoull(line.substr(0, t1));
    } catch (const std::exception&) {
      throw FormatError("corpus index line " + std::to_string(line_no) + ": bad id", line_start);
    }
    const auto rel = line.substr(t1 + 1, t2 - t1 - 1);
    s.caption = line.substr(t2 + 1);
    s.factors = parse_caption(s.caption);
    std::ifstream raw(index.parent_path() / rel, std::ios::binary);
    if (!raw) throw ConfigError("cannot open image file " + (index.parent_path() / rel).string());
    std::vector<unsigned char> bytes(side * side * 3);
    raw.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (raw.gcount() != static_cast<std::streamsize>(bytes.size())) {
      throw FormatError("image file " + rel + " is shorter than " + std::to_string(bytes.size()) + " bytes",
                        static_cast<std::uint64_t>(raw.gcount()));
    }
    s.image.side = side;
    s.image.pixels.resize(bytes.size());
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        for (std::size_t c = 0; c < 3; ++c) {
          s.image.pixels[(c * side + y) * side + x] = static_cast<float>(bytes[(y * side + x) * 3 + c]) / 255.0f;
        }
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace camp
