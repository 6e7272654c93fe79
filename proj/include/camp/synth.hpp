#pragma once

// Procedural image-caption corpus: one coloured shape on a plain background,
// 4 shapes x 4 colours x 3 backgrounds x 3 horizontal positions = 144 pairs.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace camp {

/// SplitMix64 (Steele, Lea & Flood). state += 0x9E3779B97F4A7C15, then the
/// output is mixed with the multipliers 0xBF58476D1CE4E5B9 and
/// 0x94D049BB133111EB and shifts 30, 27, 31.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller (one draw per call, two uniforms).
  double normal();

  /// Fisher-Yates from the back: for i = n-1 .. 1 swap(i, next() % (i + 1)).
  template <typename Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i-- > 1;) {
      const std::size_t j = static_cast<std::size_t>(next() % (i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

enum class ShapeKind : std::uint8_t { circle, square, triangle, cross };
enum class ColorKind : std::uint8_t { red, green, blue, yellow };
enum class BackgroundKind : std::uint8_t { black, white, gray };
enum class PositionKind : std::uint8_t { left, center, right };

struct FactorSpec {
  ShapeKind shape = ShapeKind::circle;
  ColorKind color = ColorKind::red;
  BackgroundKind background = BackgroundKind::black;
  PositionKind position = PositionKind::center;

  bool operator==(const FactorSpec&) const = default;
};

std::string_view name(ShapeKind v);
std::string_view name(ColorKind v);
std::string_view name(BackgroundKind v);
std::string_view name(PositionKind v);

inline constexpr std::size_t kFactorCombinations = 144;
inline constexpr std::size_t kImageSide = 32;

/// All 144 combinations, shape-major then colour, background, position.
std::vector<FactorSpec> all_factors();
/// Index of `f` in all_factors().
std::size_t factor_index(const FactorSpec& f);

/// 3 x side x side, channel-first, values in [0, 1].
struct Image {
  std::size_t side = kImageSide;
  std::vector<float> pixels;

  float at(std::size_t channel, std::size_t y, std::size_t x) const {
    return pixels[(channel * side + y) * side + x];
  }
  bool operator==(const Image&) const = default;
};

struct Sample {
  std::size_t id = 0;
  Image image;
  std::string caption;
  std::optional<FactorSpec> factors;
};

/// Background fill, then the shape in its colour centred at x = 6, 16 or 26
/// (left, center, right), y = 16. Hard edges, no randomness.
Image render_image(const FactorSpec& f);

/// Same as render_image with the shape centre moved `dx` pixels right.
Image render_image_shifted(const FactorSpec& f, double dx);

/// render_image(first) with the second shape drawn at its own position;
/// the background comes from `first`. Positions must differ.
Image render_two_objects(const FactorSpec& first, const FactorSpec& second);

/// "a {color} {shape} on a {background} background at the {position}"
std::string caption_of(const FactorSpec& f);
std::optional<FactorSpec> parse_caption(std::string_view caption);

/// Every word used by captions.
const std::vector<std::string>& corpus_words();

Sample make_sample(const FactorSpec& f);

/// Shuffles the 144 combinations with SplitMix64(seed); the first n_train go
/// to train, the next n_eval to eval. Throws ConfigError on overdraw.
std::pair<std::vector<Sample>, std::vector<Sample>> generate_split(std::size_t n_train,
                                                                   std::size_t n_eval,
                                                                   std::uint64_t seed);

/// T frames of the same scene with the shape drifting `step` pixels per frame.
std::vector<Image> make_video(const FactorSpec& f, std::size_t frames, double step);

/// External corpus: `index` is a tab-separated file (id, relative path,
/// caption; UTF-8, LF). Each path names a raw file of side*side*3 interleaved
/// 8-bit RGB values.
std::vector<Sample> load_external_corpus(const std::filesystem::path& index,
                                         std::size_t side = kImageSide);

}  // namespace camp
