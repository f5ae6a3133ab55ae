#include "bimamsleep/log.hpp"

#include <iostream>
#include <mutex>

namespace bimamsleep {

namespace {

std::mutex g_mutex;
WarningHandler g_handler;

} // namespace

void warn(std::string_view message)
{
    WarningHandler handler;
    {
        std::lock_guard lock(g_mutex);
        handler = g_handler;
    }
    if (handler) {
        handler(message);
    } else {
        std::cerr << "warning: " << message << '\n';
    }
}

WarningHandler set_warning_handler(WarningHandler handler)
{
    std::lock_guard lock(g_mutex);
    auto previous = std::move(g_handler);
    g_handler = std::move(handler);
    return previous;
}

ScopedWarningCapture::ScopedWarningCapture()
{
    previous_ = set_warning_handler([this](std::string_view msg) { messages_.emplace_back(msg); });
}

ScopedWarningCapture::~ScopedWarningCapture()
{
    set_warning_handler(std::move(previous_));
}

} // namespace bimamsleep
