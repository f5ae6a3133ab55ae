#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace bimamsleep {

using WarningHandler = std::function<void(std::string_view)>;

// Routes non-fatal diagnostics. Default handler prints "warning: ..." to stderr.
void warn(std::string_view message);

// Installs a handler and returns the previous one. Passing an empty function
// restores the default.
WarningHandler set_warning_handler(WarningHandler handler);

// Captures warnings for the lifetime of the object (used by tests).
class ScopedWarningCapture {
public:
    ScopedWarningCapture();
    ~ScopedWarningCapture();
    ScopedWarningCapture(const ScopedWarningCapture&) = delete;
    ScopedWarningCapture& operator=(const ScopedWarningCapture&) = delete;

    const std::vector<std::string>& messages() const { return messages_; }

private:
    std::vector<std::string> messages_;
    WarningHandler previous_;
};

} // namespace bimamsleep
