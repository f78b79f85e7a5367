#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace itv {

// Validation failures derive from Error. IoError is kept separate so callers
// (the CLI in particular) can map the two onto different exit codes.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& message) : std::runtime_error(message) {}
};

class MalformedRecord : public Error {
 public:
  MalformedRecord(std::size_t line, const std::string& why)
      : Error("MalformedRecord", "line " + std::to_string(line) + ": " + why), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class MissingField : public Error {
 public:
  explicit MissingField(std::string field)
      : Error("MissingField", "missing field \"" + field + "\""), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& why)
      : Error("ParseError", "line " + std::to_string(line) + ": " + why), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

#define ITV_SIMPLE_ERROR(Name)                                            \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& message) : Error(#Name, message) {} \
  };

ITV_SIMPLE_ERROR(LengthMismatch)
ITV_SIMPLE_ERROR(DegenerateCorpus)
ITV_SIMPLE_ERROR(EmptyCorpus)
ITV_SIMPLE_ERROR(EmptyText)
ITV_SIMPLE_ERROR(FormatError)
ITV_SIMPLE_ERROR(VersionError)
ITV_SIMPLE_ERROR(EmptyConversation)
ITV_SIMPLE_ERROR(EmptyQueryEntities)
ITV_SIMPLE_ERROR(QueryMismatch)
ITV_SIMPLE_ERROR(ConfigError)
ITV_SIMPLE_ERROR(ModelMismatch)
ITV_SIMPLE_ERROR(UnknownIssue)

#undef ITV_SIMPLE_ERROR

}  // namespace itv
