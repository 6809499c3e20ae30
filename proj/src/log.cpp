#include "qhd/log.hpp"

#include <atomic>
#include <cstdlib>
#include <cstdio>
#include <string>

namespace qhd::log {

namespace {

Level from_env() {
    const char* v = std::getenv("QHD_LOG");
    if (!v) return Level::warn;
    const std::string s(v);
    if (s == "error") return Level::error;
    if (s == "info") return Level::info;
    if (s == "debug") return Level::debug;
    return Level::warn;
}

std::atomic<int>& current() {
    static std::atomic<int> lvl{static_cast<int>(from_env())};
    return lvl;
}

constexpr const char* names[] = {"error", "warn", "info", "debug"};

} // namespace

Level level() { return static_cast<Level>(current().load(std::memory_order_relaxed)); }

void set_level(Level l) { current().store(static_cast<int>(l), std::memory_order_relaxed); }

void write(Level l, std::string_view message) {
    std::fprintf(stderr, "[qhd %s] %.*s\n", names[static_cast<int>(l)], static_cast<int>(message.size()),
                 message.data());
}

} // namespace qhd::log
