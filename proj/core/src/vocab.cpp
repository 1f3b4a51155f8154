// SPDX-License-Identifier: Apache-2.0
#include "rge/vocab.hpp"

#include <array>
#include <charconv>
#include <sstream>

#include "rge/error.hpp"
#include "rge/hash.hpp"

namespace rge {
namespace {

constexpr std::array<std::string_view, 6> kShapeNames = {"circle", "square", "triangle", "star", "hexagon", "diamond"};
constexpr std::array<std::string_view, 6> kColorNames = {"red", "blue", "green", "yellow", "purple", "orange"};
constexpr std::array<std::string_view, 6> kSizeNames = {"tiny", "small", "medium", "large", "huge", "giant"};

template <std::size_t N>
std::string attribute_name(const std::array<std::string_view, N>& names, std::string_view kind, int i) {
  if (static_cast<std::size_t>(i) < N) return std::string(names[static_cast<std::size_t>(i)]);
  return std::string(kind) + std::to_string(i);
}

}  // namespace

Vocab::Vocab(VocabSpec spec) : spec_(spec) {
  if (spec.n_shapes < 2 || spec.n_colors < 2 || spec.n_sizes < 1) {
    throw ConfigError("vocab needs at least 2 shapes, 2 colors and 1 size");
  }
  names_ = {"<pad>", "<eos>",  "<emb>", "SCENE_BEGIN", "OBJ_SEP", "RATIONALE_BEGIN", "ARROW",
            "NO_CHANGE", "DROP", "KEEP", "RECOLOR", "REMOVE", "SELECT"};
  for (int i = 0; i < spec.n_shapes; ++i) names_.push_back(attribute_name(kShapeNames, "shape", i));
  for (int i = 0; i < spec.n_colors; ++i) names_.push_back(attribute_name(kColorNames, "color", i));
  for (int i = 0; i < spec.n_sizes; ++i) names_.push_back(attribute_name(kSizeNames, "size", i));
}

TokenId Vocab::shape(int i) const {
  if (i < 0 || i >= spec_.n_shapes) throw VocabError("shape index " + std::to_string(i) + " out of range");
  return kFirstAttribute + i;
}

TokenId Vocab::color(int i) const {
  if (i < 0 || i >= spec_.n_colors) throw VocabError("color index " + std::to_string(i) + " out of range");
  return kFirstAttribute + spec_.n_shapes + i;
}

TokenId Vocab::size_token(int i) const {
  if (i < 0 || i >= spec_.n_sizes) throw VocabError("size index " + std::to_string(i) + " out of range");
  return kFirstAttribute + spec_.n_shapes + spec_.n_colors + i;
}

std::optional<int> Vocab::shape_index(TokenId t) const {
  const int i = t - kFirstAttribute;
  if (i >= 0 && i < spec_.n_shapes) return i;
  return std::nullopt;
}

std::optional<int> Vocab::color_index(TokenId t) const {
  const int i = t - kFirstAttribute - spec_.n_shapes;
  if (i >= 0 && i < spec_.n_colors) return i;
  return std::nullopt;
}

std::optional<int> Vocab::size_index(TokenId t) const {
  const int i = t - kFirstAttribute - spec_.n_shapes - spec_.n_colors;
  if (i >= 0 && i < spec_.n_sizes) return i;
  return std::nullopt;
}

const std::string& Vocab::name(TokenId t) const {
  if (t < 0 || static_cast<std::size_t>(t) >= names_.size()) {
    throw VocabError("token id " + std::to_string(t) + " outside vocabulary of " + std::to_string(names_.size()));
  }
  return names_[static_cast<std::size_t>(t)];
}

std::optional<TokenId> Vocab::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return static_cast<TokenId>(i);
  return std::nullopt;
}

std::string Vocab::fingerprint() const {
  Fnv1a h;
  for (const auto& n : names_) {
    h.update(n);
    h.update("\n");
  }
  return to_hex(h.digest());
}

std::string Vocab::render(const TokenSequence& seq) const {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += ' ';
    out += name(seq[i]);
  }
  return out;
}

TokenSequence Vocab::parse(std::string_view text) const {
  TokenSequence out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    if (auto id = find(word)) {
      out.push_back(*id);
      continue;
    }
    TokenId v = -1;
    const auto [ptr, ec] = std::from_chars(word.data(), word.data() + word.size(), v);
    if (ec != std::errc{} || ptr != word.data() + word.size() || v < 0 || static_cast<std::size_t>(v) >= size()) {
      throw VocabError("unknown token '" + word + "'");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace rge
