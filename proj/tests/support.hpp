#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "clipose/evaluation.hpp"
#include "clipose/rng.hpp"
#include "clipose/taxonomy.hpp"
#include "clipose/tensor.hpp"

namespace clipose::testing {

inline std::filesystem::path data_dir() { return CLIPOSE_DATA_DIR; }

inline Taxonomy full_taxonomy() { return load_taxonomy(data_dir() / "yoga82_taxonomy.csv"); }

inline Taxonomy six_taxonomy() { return full_taxonomy().subset(six_pose_subset_names()); }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("clipose-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
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

inline Tensor random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double amplitude = 1.0) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.uniform(-amplitude, amplitude);
  return Tensor({rows, cols}, std::move(v));
}

/// Random scores ranked into predictions with uniformly random truths.
inline std::vector<Prediction> random_predictions(Rng& rng, std::size_t n, const Taxonomy& taxonomy) {
  const Tensor scores = random_matrix(rng, n, taxonomy.size());
  std::vector<std::string> ids;
  std::vector<std::size_t> truths;
  for (std::size_t i = 0; i < n; ++i) {
    ids.push_back("p" + std::to_string(i));
    truths.push_back(static_cast<std::size_t>(rng.below(taxonomy.size())));
  }
  return rank_scores(scores, ids, truths);
}

}  // namespace clipose::testing
