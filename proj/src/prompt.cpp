#include "camp/prompt.hpp"

#include <istream>
#include <ostream>
#include <sstream>

#include "camp/errors.hpp"
#include "camp/synth.hpp"

namespace camp {

namespace {

bool is_split_punct(char c) {
  switch (c) {
    case '.':
    case ',':
    case ':':
    case ';':
    case '!':
    case '?':
    case '"':
      return true;
    default:
      return false;
  }
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

std::vector<TokenId> words_to_ids(const std::vector<std::string>& words, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(vocab.id(w));
  return ids;
}

}  // namespace

const std::vector<std::string>& Vocabulary::template_words() {
  static const std::vector<std::string> words = {"The",  "of",   "this", "image", "means",
                                                 ":",    "does", "NOT",  "mean"};
  return words;
}

std::string Vocabulary::apt_word(std::size_t index) {
  return "[APT-" + std::to_string(index + 1) + "]";
}

Vocabulary::Vocabulary(std::size_t apt_count) : apt_count_(apt_count) {
  words_ = {"[UNK]", ".", "\""};
  for (const auto& w : template_words()) words_.push_back(w);
  apt_first_ = static_cast<TokenId>(words_.size());
  for (std::size_t i = 0; i < apt_count; ++i) words_.push_back(apt_word(i));
  for (std::size_t i = 0; i < words_.size(); ++i) ids_.emplace(words_[i], static_cast<TokenId>(i));
}

Vocabulary Vocabulary::standard(std::size_t apt_count) {
  Vocabulary v(apt_count);
  for (const auto& w : corpus_words()) v.add(w);
  for (const auto& text : default_fixed_prompts()) {
    std::istringstream in(text);
    for (std::string w; in >> w;) v.add(w);
  }
  return v;
}

Vocabulary Vocabulary::load(std::istream& in) {
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  std::size_t apt = 0;
  const std::size_t fixed = 3 + template_words().size();
  while (fixed + apt < lines.size() && lines[fixed + apt] == apt_word(apt)) ++apt;
  Vocabulary v(apt);
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i < v.words_.size()) {
      if (lines[i] != v.words_[i]) {
        throw FormatError("vocabulary line " + std::to_string(i + 1) + ": expected reserved word '" +
                              v.words_[i] + "', found '" + lines[i] + "'",
                          offset);
      }
    } else {
      if (lines[i].empty()) throw FormatError("vocabulary line " + std::to_string(i + 1) + " is empty", offset);
      if (v.contains(lines[i])) {
        throw FormatError("vocabulary line " + std::to_string(i + 1) + ": duplicate word '" + lines[i] + "'",
                          offset);
      }
      v.add(lines[i]);
    }
    offset += lines[i].size() + 1;
  }
  if (lines.size() < static_cast<std::size_t>(v.apt_first_)) throw FormatError("vocabulary is missing reserved words", offset);
  return v;
}

void Vocabulary::save(std::ostream& out) const {
  for (const auto& w : words_) out << w << '\n';
}

TokenId Vocabulary::add(const std::string& word) {
  if (auto it = ids_.find(word); it != ids_.end()) return it->second;
  const auto id = static_cast<TokenId>(words_.size());
  words_.push_back(word);
  ids_.emplace(word, id);
  return id;
}

TokenId Vocabulary::id(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view word) const { return ids_.count(std::string(word)) != 0; }

const std::string& Vocabulary::word(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return words_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::apt_id(std::size_t index) const {
  if (index >= apt_count_) {
    throw IndexError("adaptive prompt token " + std::to_string(index + 1) + " not in vocabulary (K=" +
                     std::to_string(apt_count_) + ")");
  }
  return apt_first_ + static_cast<TokenId>(index);
}

std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) ids.push_back(vocab.id(current));
    current.clear();
  };
  for (const char c : text) {
    if (is_space(c)) {
      flush();
    } else if (is_split_punct(c)) {
      flush();
      ids.push_back(vocab.id(std::string_view(&c, 1)));
    } else {
      current.push_back(c);
    }
  }
  flush();
  return ids;
}

std::string detokenize(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.word(ids[i]);
  }
  return out;
}

std::string to_string(TemplateMode mode) {
  switch (mode) {
    case TemplateMode::adaptive:
      return "adaptive";
    case TemplateMode::shared_apt:
      return "shared_apt";
    case TemplateMode::fixed:
      return "fixed";
    case TemplateMode::minimal:
      return "minimal";
  }
  return "adaptive";
}

TemplateMode parse_template_mode(std::string_view text) {
  if (text == "adaptive") return TemplateMode::adaptive;
  if (text == "shared_apt" || text == "shared-apt" || text == "shared") return TemplateMode::shared_apt;
  if (text == "fixed") return TemplateMode::fixed;
  if (text == "minimal") return TemplateMode::minimal;
  throw ConfigError("unknown template mode '" + std::string(text) + "'");
}

const std::vector<std::string>& default_fixed_prompts() {
  static const std::vector<std::string> prompts = {
      "main category", "primary object", "background", "color scheme", "action", "spatial layout"};
  return prompts;
}

PromptConfig PromptConfig::fixed(std::size_t k) {
  if (k > default_fixed_prompts().size()) {
    throw ConfigError("only " + std::to_string(default_fixed_prompts().size()) +
                      " default fixed prompts exist; supply fixed_prompt_texts for K=" + std::to_string(k));
  }
  PromptConfig cfg;
  cfg.k = k;
  cfg.mode = TemplateMode::fixed;
  cfg.fixed_prompt_texts.assign(default_fixed_prompts().begin(),
                                default_fixed_prompts().begin() + static_cast<std::ptrdiff_t>(k));
  return cfg;
}

void PromptConfig::validate() const {
  if (k < 1) throw ConfigError("prompt count K must be at least 1");
  if (mode == TemplateMode::fixed && fixed_prompt_texts.size() != k) {
    throw ConfigError("fixed template needs exactly K=" + std::to_string(k) + " prompt texts, got " +
                      std::to_string(fixed_prompt_texts.size()));
  }
}

SegmentedSequence build_sequence(const std::vector<TokenId>& caption_ids, const PromptConfig& cfg,
                                 const Vocabulary& vocab) {
  cfg.validate();
  const auto body = words_to_ids({"of", "this", "image", "means", ":", "\""}, vocab);
  const auto negated = words_to_ids({"of", "this", "image", "does", "NOT", "mean", ":", "\""}, vocab);
  const auto minimal_body = words_to_ids({":", "\""}, vocab);
  const auto minimal_negated = words_to_ids({"does", "NOT", "mean", ":", "\""}, vocab);

  SegmentedSequence seq;
  auto push = [&seq](TokenId id, std::uint16_t segment) {
    seq.token_ids.push_back(id);
    seq.segment_ids.push_back(segment);
  };

  for (const TokenId id : caption_ids) push(id, 0);
  push(Vocabulary::kPeriod, 0);
  if (cfg.mode != TemplateMode::minimal) push(vocab.id("The"), 0);
  seq.prefix_length = seq.token_ids.size();

  const std::size_t passes = cfg.include_negation ? 2 : 1;
  for (std::size_t pass = 0; pass < passes; ++pass) {
    const bool negation = pass == 1;
    for (std::size_t i = 0; i < cfg.k; ++i) {
      const auto segment = static_cast<std::uint16_t>(pass * cfg.k + i + 1);
      switch (cfg.mode) {
        case TemplateMode::adaptive:
          push(vocab.apt_id(i), segment);
          break;
        case TemplateMode::shared_apt:
          push(vocab.apt_id(0), segment);
          break;
        case TemplateMode::fixed:
          for (const TokenId id : tokenize(cfg.fixed_prompt_texts[i], vocab)) push(id, segment);
          break;
        case TemplateMode::minimal:
          push(vocab.apt_id(i), segment);
          break;
      }
      const auto& tail = cfg.mode == TemplateMode::minimal ? (negation ? minimal_negated : minimal_body)
                                                           : (negation ? negated : body);
      for (const TokenId id : tail) push(id, segment);
      seq.pooling_index.push_back(seq.token_ids.size() - 1);
    }
  }
  seq.positive_segments = cfg.k;
  seq.segment_count = passes * cfg.k;

  seq.position_ids.resize(seq.token_ids.size());
  std::uint32_t next = 0;
  for (std::size_t t = 0; t < seq.token_ids.size(); ++t) {
    const bool segment_start = t > 0 && seq.segment_ids[t] != seq.segment_ids[t - 1];
    if (segment_start && cfg.position_reset) next = static_cast<std::uint32_t>(seq.prefix_length);
    seq.position_ids[t] = next++;
  }
  return seq;
}

AttentionMask build_mask(const SegmentedSequence& seq) {
  AttentionMask mask;
  const std::size_t S = seq.size();
  mask.size = S;
  mask.bits.assign(S * S, 0);
  for (std::size_t q = 0; q < S; ++q) {
    for (std::size_t k = 0; k <= q; ++k) {
      const auto sk = seq.segment_ids[k];
      if (sk == 0 || sk == seq.segment_ids[q]) mask.bits[q * S + k] = 1;
    }
  }
  return mask;
}

std::vector<std::size_t> pooling_positions(const SegmentedSequence& seq) {
  std::vector<std::size_t> out;
  out.reserve(seq.segment_count);
  std::size_t t = seq.prefix_length;
  for (std::size_t s = 1; s <= seq.segment_count; ++s) {
    if (t >= seq.size() || seq.segment_ids[t] != s) {
      throw StructureError("segment " + std::to_string(s) + " is empty or out of order");
    }
    while (t + 1 < seq.size() && seq.segment_ids[t + 1] == s) ++t;
    if (seq.token_ids[t] != Vocabulary::kQuote) {
      throw StructureError("segment " + std::to_string(s) + " does not end with the closing quote token");
    }
    out.push_back(t);
    ++t;
  }
  if (t != seq.size()) throw StructureError("tokens after the last segment");
  return out;
}

SegmentedSequence standalone_prompt(const SegmentedSequence& seq, std::size_t segment) {
  if (segment < 1 || segment > seq.segment_count) {
    throw IndexError("segment " + std::to_string(segment) + " out of range");
  }
  SegmentedSequence out;
  out.prefix_length = seq.prefix_length;
  out.positive_segments = 1;
  out.segment_count = 1;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const auto s = seq.segment_ids[t];
    if (s != 0 && s != segment) continue;
    out.token_ids.push_back(seq.token_ids[t]);
    out.segment_ids.push_back(s == 0 ? 0 : 1);
    out.position_ids.push_back(static_cast<std::uint32_t>(out.position_ids.size()));
  }
  out.pooling_index.push_back(out.size() - 1);
  return out;
}

SegmentedSequence layout_sequence(std::size_t prefix_length, const std::vector<std::size_t>& segment_lengths,
                                  TokenId filler, bool position_reset) {
  SegmentedSequence seq;
  seq.prefix_length = prefix_length;
  for (std::size_t i = 0; i < prefix_length; ++i) {
    seq.token_ids.push_back(filler);
    seq.segment_ids.push_back(0);
    seq.position_ids.push_back(static_cast<std::uint32_t>(i));
  }
  std::uint32_t next = static_cast<std::uint32_t>(prefix_length);
  for (std::size_t s = 0; s < segment_lengths.size(); ++s) {
    if (position_reset) next = static_cast<std::uint32_t>(prefix_length);
    for (std::size_t j = 0; j < segment_lengths[s]; ++j) {
      const bool last = j + 1 == segment_lengths[s];
      seq.token_ids.push_back(last ? Vocabulary::kQuote : filler);
      seq.segment_ids.push_back(static_cast<std::uint16_t>(s + 1));
      seq.position_ids.push_back(next++);
    }
    if (segment_lengths[s] > 0) seq.pooling_index.push_back(seq.size() - 1);
  }
  seq.segment_count = segment_lengths.size();
  seq.positive_segments = segment_lengths.size();
  return seq;
}

}  // namespace camp
