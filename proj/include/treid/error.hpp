#ifndef TREID_ERROR_HPP
#define TREID_ERROR_HPP

#include <stdexcept>
#include <string>

namespace treid {

/// Base class for every error raised by the library. `kind()` is the stable,
/// machine-readable tag written into CLI error records.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class InvalidInput : public Error {
public:
    explicit InvalidInput(const std::string& what) : Error("invalid-input", what) {}
};

class DegenerateInput : public Error {
public:
    explicit DegenerateInput(const std::string& what) : Error("degenerate-input", what) {}
};

class TrainingDivergence : public Error {
public:
    explicit TrainingDivergence(const std::string& what) : Error("training-divergence", what) {}
};

class ManifestError : public Error {
public:
    explicit ManifestError(const std::string& what) : Error("manifest-validation", what) {}
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw InvalidInput(what);
}

}  // namespace treid

#endif  // TREID_ERROR_HPP
