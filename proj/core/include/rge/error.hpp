// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace rge {

/// Base class for every error raised by the library. The kind decides the
/// process exit code used by the command-line tool.
class Error : public std::runtime_error {
 public:
  enum class Kind { kDimension, kContract, kNumeric, kConfig, kLength, kVocab, kTask, kFormat, kParse, kBatch, kIo };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

#define RGE_DEFINE_ERROR(Name, KindValue)                                   \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what) : Error(Kind::KindValue, what) {} \
  };

RGE_DEFINE_ERROR(DimensionError, kDimension)
RGE_DEFINE_ERROR(ContractError, kContract)
RGE_DEFINE_ERROR(NumericError, kNumeric)
RGE_DEFINE_ERROR(ConfigError, kConfig)
RGE_DEFINE_ERROR(LengthError, kLength)
RGE_DEFINE_ERROR(VocabError, kVocab)
RGE_DEFINE_ERROR(TaskError, kTask)
RGE_DEFINE_ERROR(FormatError, kFormat)
RGE_DEFINE_ERROR(ParseError, kParse)
RGE_DEFINE_ERROR(BatchError, kBatch)
RGE_DEFINE_ERROR(IoError, kIo)

#undef RGE_DEFINE_ERROR

/// Exit codes: 0 success, 1 user/config error, 2 numeric abort, 3 IO error.
inline int exit_code_for(const Error& e) noexcept {
  switch (e.kind()) {
    case Error::Kind::kNumeric: return 2;
    case Error::Kind::kIo: return 3;
    default: return 1;
  }
}

}  // namespace rge
