#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "r3d/geom.hpp"
#include "r3d/rng.hpp"

namespace testutil {

// Unique scratch directory removed on scope exit.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path = std::filesystem::temp_directory_path() /
           (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }

  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }

  std::string str() const { return path.string(); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

// Swaps the C++ stream buffer; collects everything written while alive.
class StreamCapture {
 public:
  explicit StreamCapture(std::ostream& s) : stream_(s), old_(s.rdbuf(buffer_.rdbuf())) {}
  ~StreamCapture() { stream_.rdbuf(old_); }
  std::string text() const { return buffer_.str(); }

 private:
  std::ostream& stream_;
  std::ostringstream buffer_;
  std::streambuf* old_;
};

// Redirects a C-level stream (stderr) to a file at the descriptor level so
// fprintf output is caught too. stop() restores the stream and returns the
// captured text.
class FdCapture {
 public:
  FdCapture(std::FILE* stream, const std::string& path) : stream_(stream), path_(path) {
    std::fflush(stream_);
    saved_ = ::dup(::fileno(stream_));
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    ::dup2(fd, ::fileno(stream_));
    ::close(fd);
  }

  std::string stop() {
    if (saved_ < 0) return {};
    std::fflush(stream_);
    ::dup2(saved_, ::fileno(stream_));
    ::close(saved_);
    saved_ = -1;
    std::ifstream is(path_);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  }

  ~FdCapture() {
    if (saved_ >= 0) stop();
  }

 private:
  std::FILE* stream_;
  std::string path_;
  int saved_ = -1;
};

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline r3d::PointCloud random_cloud(std::size_t n, std::uint64_t seed,
                                    double lo = -1.0, double hi = 1.0) {
  r3d::Rng rng(seed);
  r3d::PointCloud pc;
  pc.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    pc.points.push_back({rng.uniform_range(lo, hi), rng.uniform_range(lo, hi),
                         rng.uniform_range(lo, hi)});
  return pc;
}

}  // namespace testutil
