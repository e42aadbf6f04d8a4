// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchwork/tokenizer.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>

#include <fmt/format.h>

#include "patchwork/error.hpp"

namespace patchwork {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (TokenId id = 0; id < size(); ++id) {
    const auto& text = tokens_[id];
    if (text.empty()) {
      throw Error(ErrorCode::kConfig, fmt::format("vocabulary entry {} is empty", id));
    }
    if (!index_.emplace(text, id).second) {
      throw Error(ErrorCode::kConfig,
                  fmt::format("vocabulary entry {} duplicates \"{}\"", id, text));
    }
    max_length_ = std::max(max_length_, text.size());
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || id >= size()) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("token id {} out of range", id));
  }
  return tokens_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view text) const {
  auto it = index_.find(std::string(text));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view text) const {
  if (auto found = find(text)) return *found;
  throw Error(ErrorCode::kTokenization, fmt::format("\"{}\" is not in the vocabulary", text));
}

std::string TokenSequence::text() const {
  std::string out;
  for (const auto& span : text_spans) out += span;
  return out;
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab) {
  if (vocab.empty()) throw Error(ErrorCode::kInvalidArgument, "empty vocabulary");
  if (text.empty()) throw Error(ErrorCode::kInvalidArgument, "empty text");

  TokenSequence seq;
  std::size_t offset = 0;
  while (offset < text.size()) {
    const std::size_t longest = std::min(vocab.max_token_length(), text.size() - offset);
    bool matched = false;
    for (std::size_t len = longest; len > 0; --len) {
      auto piece = text.substr(offset, len);
      if (auto id = vocab.find(piece)) {
        seq.ids.push_back(*id);
        seq.text_spans.emplace_back(piece);
        offset += len;
        matched = true;
        break;
      }
    }
    if (!matched) {
      throw Error(ErrorCode::kTokenization,
                  fmt::format("no vocabulary entry matches at byte offset {}", offset));
    }
  }
  return seq;
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open vocabulary {}", path.string()));

  std::map<int, std::string> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    int id = -1;
    if (tab == std::string::npos ||
        std::from_chars(line.data(), line.data() + tab, id).ptr != line.data() + tab || id < 0) {
      throw Error(ErrorCode::kConfig,
                  fmt::format("{}:{}: expected \"id<TAB>token\"", path.string(), line_no));
    }
    if (!entries.emplace(id, line.substr(tab + 1)).second) {
      throw Error(ErrorCode::kConfig,
                  fmt::format("{}:{}: duplicate id {}", path.string(), line_no, id));
    }
  }

  std::vector<std::string> tokens;
  tokens.reserve(entries.size());
  for (const auto& [id, text] : entries) {
    if (id != static_cast<int>(tokens.size())) {
      throw Error(ErrorCode::kConfig,
                  fmt::format("{}: ids are not dense (missing {})", path.string(), tokens.size()));
    }
    tokens.push_back(text);
  }
  return Vocabulary(std::move(tokens));
}

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  for (TokenId id = 0; id < vocab.size(); ++id) {
    out << id << '\t' << vocab.token(id) << '\n';
  }
}

}  // namespace patchwork
