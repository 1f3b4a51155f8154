// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rge {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

struct VocabSpec {
  int n_shapes = 6;
  int n_colors = 6;
  int n_sizes = 6;
};

/// Token inventory of the synthetic benchmark. Ids are dense; the structural
/// and special tokens occupy fixed low ids, attribute tokens follow in
/// shape, color, size order.
class Vocab {
 public:
  explicit Vocab(VocabSpec spec = {});

  std::size_t size() const noexcept { return names_.size(); }
  const VocabSpec& spec() const noexcept { return spec_; }

  static constexpr TokenId kPad = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kEmb = 2;
  static constexpr TokenId kSceneBegin = 3;
  static constexpr TokenId kObjSep = 4;
  static constexpr TokenId kRationaleBegin = 5;
  static constexpr TokenId kArrow = 6;
  static constexpr TokenId kNoChange = 7;
  static constexpr TokenId kDrop = 8;
  static constexpr TokenId kKeep = 9;
  static constexpr TokenId kRecolor = 10;
  static constexpr TokenId kRemove = 11;
  static constexpr TokenId kSelect = 12;
  static constexpr TokenId kFirstAttribute = 13;

  TokenId shape(int i) const;
  TokenId color(int i) const;
  TokenId size_token(int i) const;

  std::optional<int> shape_index(TokenId t) const;
  std::optional<int> color_index(TokenId t) const;
  std::optional<int> size_index(TokenId t) const;

  static bool is_special(TokenId t) noexcept { return t == kPad || t == kEos || t == kEmb; }

  const std::string& name(TokenId t) const;
  std::optional<TokenId> find(std::string_view name) const;
  const std::vector<std::string>& tokens() const noexcept { return names_; }

  /// Stable hash of the ordered token list, as 16 hex digits.
  std::string fingerprint() const;

  std::string render(const TokenSequence& seq) const;
  /// Parses whitespace-separated token names or integer ids.
  TokenSequence parse(std::string_view text) const;

 private:
  VocabSpec spec_;
  std::vector<std::string> names_;
};

}  // namespace rge
