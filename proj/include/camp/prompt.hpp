#pragma once

// Multi-prompt sequence construction.
//
// A caption becomes one token sequence: a shared prefix followed by K prompt
// segments (and optionally K negation segments), e.g. for the adaptive
// template
//
//   <caption> . The | [APT-1] of this image means : " | [APT-2] of ... : " | ...
//
// The attention mask lets every token see the prefix and earlier tokens of
// its own segment only, so each segment's closing quote summarizes
// "prefix + that segment" exactly as a standalone prompt would.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace camp {

using TokenId = std::int32_t;

class Vocabulary {
 public:
  static constexpr TokenId kUnk = 0;
  static constexpr TokenId kPeriod = 1;
  static constexpr TokenId kQuote = 2;

  /// Words that follow the quote token in the reserved block, in order.
  static const std::vector<std::string>& template_words();
  static std::string apt_word(std::size_t index);  // index is 0-based: "[APT-1]" for 0

  /// Reserved block with `apt_count` adaptive prompt tokens and no natural words.
  explicit Vocabulary(std::size_t apt_count);

  /// Reserved block plus every word of the synthetic corpus and the
  /// fixed-prompt texts.
  static Vocabulary standard(std::size_t apt_count);

  /// One word per line. The reserved block must come first, in order.
  static Vocabulary load(std::istream& in);
  void save(std::ostream& out) const;

  /// Appends a natural-language word (no-op if present). Returns its id.
  TokenId add(const std::string& word);

  TokenId id(std::string_view word) const;  // kUnk when absent
  bool contains(std::string_view word) const;
  const std::string& word(TokenId id) const;
  std::size_t size() const noexcept { return words_.size(); }

  std::size_t apt_count() const noexcept { return apt_count_; }
  TokenId apt_first() const noexcept { return apt_first_; }
  TokenId apt_id(std::size_t index) const;
  bool is_apt(TokenId id) const noexcept {
    return id >= apt_first_ && id < apt_first_ + static_cast<TokenId>(apt_count_);
  }

  const std::vector<std::string>& words() const noexcept { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> ids_;
  std::size_t apt_count_ = 0;
  TokenId apt_first_ = 0;
};

/// Word-level tokenization. Whitespace separates words; each of . , : ; ! ? "
/// is split off as its own token. Unknown words map to [UNK].
std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab);
std::string detokenize(const std::vector<TokenId>& ids, const Vocabulary& vocab);

enum class TemplateMode { adaptive, shared_apt, fixed, minimal };

std::string to_string(TemplateMode mode);
TemplateMode parse_template_mode(std::string_view text);

/// The six handwritten prompts used by the fixed template.
const std::vector<std::string>& default_fixed_prompts();

struct PromptConfig {
  std::size_t k = 6;
  TemplateMode mode = TemplateMode::adaptive;
  bool include_negation = false;
  /// Only read in fixed mode; must hold exactly k entries there.
  std::vector<std::string> fixed_prompt_texts;
  /// Restart segment position ids at the prefix length. Disabling this is a
  /// debugging aid that breaks single-pass / multi-pass equivalence.
  bool position_reset = true;

  /// Fixed-mode config using the first k default prompts.
  static PromptConfig fixed(std::size_t k);
  void validate() const;
};

/// Concatenated prefix + prompt segments.
///
/// segment_ids: 0 for the prefix, 1..K for prompts, K+1..2K for negation
/// prompts. pooling_index[s] is the position of segment (s+1)'s closing quote.
struct SegmentedSequence {
  std::vector<TokenId> token_ids;
  std::vector<std::uint16_t> segment_ids;
  std::vector<std::uint32_t> position_ids;
  std::vector<std::size_t> pooling_index;
  std::size_t prefix_length = 0;
  std::size_t positive_segments = 0;  // K
  std::size_t segment_count = 0;      // K or 2K

  std::size_t size() const noexcept { return token_ids.size(); }
};

/// Query x key boolean matrix, true = attendable.
struct AttentionMask {
  std::size_t size = 0;
  std::vector<std::uint8_t> bits;

  bool at(std::size_t query, std::size_t key) const { return bits[query * size + key] != 0; }
};

SegmentedSequence build_sequence(const std::vector<TokenId>& caption_ids, const PromptConfig& cfg,
                                 const Vocabulary& vocab);

/// M[q][k] = (k <= q) && (segment(k) == 0 || segment(k) == segment(q)).
AttentionMask build_mask(const SegmentedSequence& seq);

/// Recomputes and validates the closing-quote position of every segment.
/// Throws StructureError for an empty segment, a non-contiguous segment or
/// one that does not end in the quote token.
std::vector<std::size_t> pooling_positions(const SegmentedSequence& seq);

/// Prefix + one segment as a standalone single-segment prompt with natural
/// positions 0..n-1. `segment` is 1-based.
SegmentedSequence standalone_prompt(const SegmentedSequence& seq, std::size_t segment);

/// Builds a sequence from explicit segment lengths, for structural tests.
/// Every segment is filled with `filler` tokens and ends in the quote token.
SegmentedSequence layout_sequence(std::size_t prefix_length,
                                  const std::vector<std::size_t>& segment_lengths,
                                  TokenId filler = Vocabulary::kPeriod, bool position_reset = true);

}  // namespace camp
