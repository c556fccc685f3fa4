#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace skillmoo {

enum class ErrorKind {
  // bundle
  UnknownTarget,
  InvalidPermutation,
  InvalidEdit,
  EmptyResult,
  MalformedManifest,
  MissingSkillFile,
  DuplicateSkillId,
  // evaluation
  InvalidTask,
  EvaluationTimeout,
  VerifierCrash,
  // llm_client
  EndpointError,
  Timeout,
  // proposer
  ParseError,
  ProposerFailure,
  NoValidOperation,
  // moo_core / analysis
  ZeroBaseline,
  MissingBaseline,
  InvalidArgument,
  // search / cli
  Config,
  Io,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

/// Proposal parse failure carrying the byte offset into the reply text.
class ParseError : public Error {
public:
  ParseError(std::size_t offset, const std::string& reason)
      : Error(ErrorKind::ParseError, "at byte " + std::to_string(offset) + ": " + reason),
        offset_(offset), reason_(reason) {}

  std::size_t offset() const noexcept { return offset_; }
  const std::string& reason() const noexcept { return reason_; }

private:
  std::size_t offset_;
  std::string reason_;
};

}  // namespace skillmoo
