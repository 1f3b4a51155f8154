// SPDX-License-Identifier: Apache-2.0
#include "rge/dataset_io.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "rge/error.hpp"

namespace rge {
namespace {

using nlohmann::json;

TokenSequence tokens_field(const json& record, const char* key, const Vocab& vocab, std::size_t line) {
  const auto it = record.find(key);
  if (it == record.end() || !it->is_array()) {
    throw ParseError("line " + std::to_string(line) + ": missing array field '" + key + "'");
  }
  TokenSequence out;
  out.reserve(it->size());
  for (const auto& v : *it) {
    if (!v.is_number_integer()) throw ParseError("line " + std::to_string(line) + ": non-integer token in '" + key + "'");
    const auto id = v.get<std::int64_t>();
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
      throw ParseError("line " + std::to_string(line) + ": token id " + std::to_string(id) + " outside vocabulary");
    }
    out.push_back(static_cast<TokenId>(id));
  }
  return out;
}

}  // namespace

std::string to_jsonl(const Dataset& dataset, const Vocab& vocab) {
  std::string out;
  json header = {{"format", "rge-jsonl"},
                 {"version", kJsonlVersion},
                 {"vocab_fingerprint", vocab.fingerprint()},
                 {"vocab_size", vocab.size()}};
  out += header.dump();
  out += '\n';
  for (const auto& ex : dataset) {
    json record = {{"example_id", ex.example_id},
                   {"task_family", std::string(to_string(ex.family))},
                   {"split", std::string(to_string(ex.split))},
                   {"query", ex.query},
                   {"target", ex.target},
                   {"oracle_rationale", ex.oracle_rationale_unprobed()}};
    out += record.dump();
    out += '\n';
  }
  return out;
}

Dataset from_jsonl(const std::string& text, const Vocab& vocab) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("dataset file is empty, header line missing");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(std::string("unreadable dataset header: ") + e.what());
  }
  if (!header.is_object() || header.value("format", "") != "rge-jsonl") throw FormatError("not an rge-jsonl file");
  if (header.value("version", 0) != kJsonlVersion) {
    throw FormatError("unsupported dataset version " + header.value("version", json()).dump());
  }
  const auto fp = header.value("vocab_fingerprint", "");
  if (fp != vocab.fingerprint()) {
    throw FormatError("vocab fingerprint mismatch: file has '" + fp + "', expected '" + vocab.fingerprint() + "'");
  }

  Dataset out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!record.is_object()) throw ParseError("line " + std::to_string(line_no) + ": record is not an object");
    ExampleTriple ex;
    try {
      ex.example_id = record.at("example_id").get<std::uint64_t>();
      ex.family = parse_task_family(record.at("task_family").get<std::string>());
      ex.split = parse_split(record.at("split").get<std::string>());
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    ex.query = tokens_field(record, "query", vocab, line_no);
    ex.target = tokens_field(record, "target", vocab, line_no);
    ex.set_oracle_rationale(tokens_field(record, "oracle_rationale", vocab, line_no));
    out.push_back(std::move(ex));
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed on '" + path.string() + "'");
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed on '" + path.string() + "'");
}

void write_jsonl(const Dataset& dataset, const Vocab& vocab, const std::filesystem::path& path) {
  write_file(path, to_jsonl(dataset, vocab));
}

Dataset read_jsonl(const std::filesystem::path& path, const Vocab& vocab) { return from_jsonl(read_file(path), vocab); }

}  // namespace rge
