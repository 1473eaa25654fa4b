#pragma once

#include <stdexcept>
#include <string>

namespace cuspflow {

// Every computational failure carries a short machine-readable class name;
// the CLI surfaces it in the error report and maps it to exit code 3.
class Error : public std::runtime_error {
public:
    Error(std::string cls, const std::string& msg)
        : std::runtime_error(msg), cls_(std::move(cls)) {}
    const std::string& error_class() const { return cls_; }

private:
    std::string cls_;
};

inline Error pole_error(const std::string& msg) { return Error("pole", msg); }
inline Error dimension_error(const std::string& msg) { return Error("dimension_mismatch", msg); }
inline Error budget_error(const std::string& msg) { return Error("budget_exceeded", msg); }
inline Error scale_error(const std::string& msg) { return Error("scale", msg); }
inline Error contraction_error(const std::string& msg) { return Error("contraction_violation", msg); }
inline Error bracket_error(const std::string& msg) { return Error("bracket", msg); }
inline Error convergence_error(const std::string& msg) { return Error("non_convergence", msg); }
inline Error escape_error(const std::string& msg) { return Error("escape", msg); }
inline Error irreducibility_error(const std::string& msg) { return Error("irreducible", msg); }
inline Error truncation_error(const std::string& msg) { return Error("truncation", msg); }
inline Error validation_error(const std::string& msg) { return Error("validation", msg); }

} // namespace cuspflow
