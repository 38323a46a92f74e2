#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cclip {

// Every failure carries a stable machine-parsable code plus human text.
// The CLI prints them as "error: <code>: <message>" on a single line.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

[[noreturn]] inline void fail(std::string code, const std::string& message) {
    throw Error(std::move(code), message);
}

inline void require(bool condition, std::string_view code, const std::string& message) {
    if (!condition) {
        fail(std::string(code), message);
    }
}

} // namespace cclip
