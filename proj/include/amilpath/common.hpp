#pragma once
// Shared error type, logging and small string/filesystem helpers.

#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace amilpath {

namespace fs = std::filesystem;

// Fatal conditions (bad input, contract violations) are thrown as Error.
// The CLI maps them to exit code 1; tests assert on them directly.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

template <typename... Args>
[[noreturn]] inline void fail(Args&&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  throw Error(os.str());
}

template <typename... Args>
inline void require(bool cond, Args&&... parts) {
  if (!cond) fail(std::forward<Args>(parts)...);
}

enum class LogLevel { Debug = 0, Info = 1, Warn = 2 };

inline LogLevel& log_threshold() {
  static LogLevel lvl = LogLevel::Info;
  return lvl;
}

inline void vlog(LogLevel lvl, const char* tag, const char* fmt, va_list ap) {
  if (lvl < log_threshold()) return;
  std::fprintf(stderr, "[%s] ", tag);
  std::vfprintf(stderr, fmt, ap);
  std::fputc('\n', stderr);
}

inline void log_info(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  vlog(LogLevel::Info, "info", fmt, ap);
  va_end(ap);
}

inline void log_warn(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  vlog(LogLevel::Warn, "warn", fmt, ap);
  va_end(ap);
}

inline void log_debug(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  vlog(LogLevel::Debug, "debug", fmt, ap);
  va_end(ap);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// Stable 64-bit content hash (FNV-1a); used to derive per-key RNG streams.
inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Strict numeric parsers: the whole string must be consumed.
inline double parse_double(const std::string& s, const std::string& what) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    require(pos == s.size(), "trailing characters");
    return v;
  } catch (const std::exception&) {
    fail("bad numeric value '", s, "' for ", what);
  }
}

inline int64_t parse_int(const std::string& s, const std::string& what) {
  try {
    size_t pos = 0;
    int64_t v = std::stoll(s, &pos);
    require(pos == s.size(), "trailing characters");
    return v;
  } catch (const std::exception&) {
    fail("bad integer value '", s, "' for ", what);
  }
}

inline std::string read_text_file(const fs::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "rb");
  if (!f) fail("cannot open file: ", path.string());
  std::string out;
  char buf[1 << 14];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) out.append(buf, n);
  std::fclose(f);
  return out;
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) fail("cannot write file: ", path.string());
  if (!text.empty() && std::fwrite(text.data(), 1, text.size(), f) != text.size()) {
    std::fclose(f);
    fail("short write: ", path.string());
  }
  std::fclose(f);
}

}  // namespace amilpath
