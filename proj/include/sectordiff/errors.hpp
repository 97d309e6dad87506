#pragma once

#include <stdexcept>
#include <string>

namespace sectordiff {

// Error with a stable machine-parseable category such as "shape-mismatch"
// or "digest-mismatch". The CLI prints "error: <category>: <detail>" on one
// line and exits nonzero.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& detail)
        : std::runtime_error(category + ": " + detail), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

[[noreturn]] inline void fail(std::string category, const std::string& detail) {
    throw Error(std::move(category), detail);
}

inline void require(bool ok, const char* category, const std::string& detail) {
    if (!ok) fail(category, detail);
}

}  // namespace sectordiff
