#pragma once

// Diagnostics on stderr. The level comes from CENTROIDAL_MPC_LOG
// (error|info|debug, default error).

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace centroidal_mpc::log {

enum class Level { error = 0, info = 1, debug = 2 };

inline Level level_from_env()
{
    const char* v = std::getenv("CENTROIDAL_MPC_LOG");
    if (v == nullptr) {
        return Level::error;
    }
    if (std::strcmp(v, "debug") == 0) {
        return Level::debug;
    }
    if (std::strcmp(v, "info") == 0) {
        return Level::info;
    }
    return Level::error;
}

inline Level& threshold()
{
    static Level level = level_from_env();
    return level;
}

inline bool enabled(Level l) { return static_cast<int>(l) <= static_cast<int>(threshold()); }

#if defined(__GNUC__)
__attribute__((format(printf, 2, 3)))
#endif
inline void write(Level l, const char* fmt, ...)
{
    if (!enabled(l)) {
        return;
    }
    static const char* const names[] = {"error", "info", "debug"};
    std::fprintf(stderr, "[%s] ", names[static_cast<int>(l)]);
    va_list args;
    va_start(args, fmt);
    std::vfprintf(stderr, fmt, args);
    va_end(args);
    std::fputc('\n', stderr);
}

}  // namespace centroidal_mpc::log

#define CMPC_LOG_ERROR(...) ::centroidal_mpc::log::write(::centroidal_mpc::log::Level::error, __VA_ARGS__)
#define CMPC_LOG_INFO(...) ::centroidal_mpc::log::write(::centroidal_mpc::log::Level::info, __VA_ARGS__)
#define CMPC_LOG_DEBUG(...) ::centroidal_mpc::log::write(::centroidal_mpc::log::Level::debug, __VA_ARGS__)
