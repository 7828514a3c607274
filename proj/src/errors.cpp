#include "scentree/errors.hpp"

#include <atomic>
#include <iostream>

namespace scentree {

namespace {
std::atomic<bool> g_warnings_enabled{true};
}

void warn(const std::string& message) {
    if (g_warnings_enabled.load()) {
        std::clog << "scentree: warning: " << message << '\n';
    }
}

void set_warnings_enabled(bool enabled) { g_warnings_enabled.store(enabled); }

}  // namespace scentree
