#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace semgen {

// Every failure raised by the library carries a machine-readable category so
// the CLI can map it onto an exit code without string matching.
enum class ErrorCategory {
    kConfig,
    kValidation,
    kDimension,
    kNumeric,
    kDependency,
    kFairness,
    kInternal,
};

const char *category_name(ErrorCategory c);

class Error : public std::runtime_error {
   public:
    Error(ErrorCategory category, const std::string &what)
        : std::runtime_error(what), category_(category) {}
    ErrorCategory category() const { return category_; }

   private:
    ErrorCategory category_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string &w) : Error(ErrorCategory::kConfig, w) {}
};
struct ValidationError : Error {
    explicit ValidationError(const std::string &w) : Error(ErrorCategory::kValidation, w) {}
};
struct DimensionError : Error {
    explicit DimensionError(const std::string &w) : Error(ErrorCategory::kDimension, w) {}
};
struct DependencyError : Error {
    explicit DependencyError(const std::string &w) : Error(ErrorCategory::kDependency, w) {}
};
struct FairnessError : Error {
    explicit FairnessError(const std::string &w) : Error(ErrorCategory::kFairness, w) {}
};
struct InternalError : Error {
    explicit InternalError(const std::string &w) : Error(ErrorCategory::kInternal, w) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string &w) : Error(ErrorCategory::kNumeric, w) {}
};

// Raised by the optimizer or a training loop when a loss or gradient stops
// being finite.
struct TrainingAbort : NumericError {
    TrainingAbort(const std::string &w, std::string param, std::size_t step)
        : NumericError(w), parameter(std::move(param)), step(step) {}
    std::string parameter;
    std::size_t step;
};

struct SamplingError : NumericError {
    SamplingError(const std::string &w, std::size_t step) : NumericError(w), step(step) {}
    std::size_t step;
};

}  // namespace semgen
