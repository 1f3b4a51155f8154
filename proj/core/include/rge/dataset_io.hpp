// SPDX-License-Identifier: Apache-2.0
//
// JSONL dataset files. Line 1 is a header carrying the vocabulary fingerprint;
// every following line is one example with integer token-id arrays.

#pragma once

#include <filesystem>
#include <string>

#include "rge/task.hpp"

namespace rge {

inline constexpr int kJsonlVersion = 1;

std::string to_jsonl(const Dataset& dataset, const Vocab& vocab);
/// Throws FormatError on header or fingerprint mismatch and ParseError (with
/// the 1-based line number) on malformed records.
Dataset from_jsonl(const std::string& text, const Vocab& vocab);

/// Throws IoError naming the path.
void write_jsonl(const Dataset& dataset, const Vocab& vocab, const std::filesystem::path& path);
Dataset read_jsonl(const std::filesystem::path& path, const Vocab& vocab);

/// Whole-file helpers shared by the other file formats.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace rge
