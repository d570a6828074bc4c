#include "semgen/errors.hpp"

namespace semgen {

const char *category_name(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::kConfig:
            return "config";
        case ErrorCategory::kValidation:
            return "validation";
        case ErrorCategory::kDimension:
            return "dimension";
        case ErrorCategory::kNumeric:
            return "numeric";
        case ErrorCategory::kDependency:
            return "dependency";
        case ErrorCategory::kFairness:
            return "fairness";
        case ErrorCategory::kInternal:
            return "internal";
    }
    return "unknown";
}

}  // namespace semgen
