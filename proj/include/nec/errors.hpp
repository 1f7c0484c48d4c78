#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace nec {

class NecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define NEC_DEFINE_ERROR(Name)                 \
  class Name : public NecError {               \
   public:                                     \
    using NecError::NecError;                  \
  }

NEC_DEFINE_ERROR(RateOutOfRange);
NEC_DEFINE_ERROR(SiteOutOfCluster);
NEC_DEFINE_ERROR(DimensionMismatch);
NEC_DEFINE_ERROR(StepUnderflow);
NEC_DEFINE_ERROR(CapExceeded);
NEC_DEFINE_ERROR(NegativeRate);
NEC_DEFINE_ERROR(InsufficientBoundary);
NEC_DEFINE_ERROR(IncommensurateIsland);
NEC_DEFINE_ERROR(NotConverged);
NEC_DEFINE_ERROR(NonLinearRegime);
NEC_DEFINE_ERROR(WindowTooWide);
NEC_DEFINE_ERROR(Unclassified);

#undef NEC_DEFINE_ERROR

/// Configuration validation failure carrying every problem found, keyed by
/// `section.key` path.
class SchemaError : public NecError {
 public:
  explicit SchemaError(std::vector<std::string> problems)
      : NecError(join(problems)), problems_(std::move(problems)) {}

  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& items) {
    std::string out = "invalid configuration:";
    for (const auto& item : items) out += "\n  " + item;
    return out;
  }

  std::vector<std::string> problems_;
};

}  // namespace nec
