// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace patchwork {

using TokenId = int;

/// Explicit id <-> string table. Token strings may carry a leading space.
class Vocabulary {
 public:
  Vocabulary() = default;
  /// Entry i of `tokens` receives id i.
  explicit Vocabulary(std::vector<std::string> tokens);

  int size() const noexcept { return static_cast<int>(tokens_.size()); }
  bool empty() const noexcept { return tokens_.empty(); }

  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view text) const;
  /// Like find() but throws a tokenization error for unknown strings.
  TokenId id(std::string_view text) const;

  std::size_t max_token_length() const noexcept { return max_length_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::size_t max_length_ = 0;
};

struct TokenSequence {
  std::vector<TokenId> ids;
  std::vector<std::string> text_spans;

  int size() const noexcept { return static_cast<int>(ids.size()); }
  std::string text() const;
};

/// Greedy longest-match segmentation. Throws ErrorCode::kTokenization naming
/// the byte offset of the first unsegmentable position.
TokenSequence tokenize(std::string_view text, const Vocabulary& vocab);

/// Reads "id<TAB>token" lines. Ids must be dense and start at zero.
Vocabulary load_vocabulary(const std::filesystem::path& path);
void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);

}  // namespace patchwork
