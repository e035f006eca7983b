#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "avlab/corpus.hpp"
#include "avlab/rng.hpp"

namespace avlab::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("avlab_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

inline std::vector<int> random_frames(Rng& rng, int vocab, int lo, int hi) {
  std::vector<int> f(rng.between(lo, hi));
  for (int& t : f) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));
  return f;
}

inline CorpusSpec small_spec(std::uint64_t seed, int n = 64) {
  CorpusSpec s;
  s.n_videos = n;
  s.seed = seed;
  return s;
}

}  // namespace avlab::test
