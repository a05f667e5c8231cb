#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <vector>

#include "icse/checkpoint.hpp"
#include "icse/model.hpp"
#include "icse/rng.hpp"

using namespace icse;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("icse_ckpt_test_" + name);
}

Checkpoint sample_checkpoint() {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.n_ctx = 12;
  cfg.d_filter = 8;
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.weights = init_weights(cfg, 7);
  Rng rng(9);
  for_each_tensor(ckpt.weights, [&](const std::string&, Tensor& t) {
    for (double& v : t.data) v += rng.normal(0.0, 0.1);
  });
  ckpt.standardizer.u_mean = {191.7, 215.9};
  ckpt.standardizer.u_std = {20.0, 20.0};
  ckpt.standardizer.y_mean = 49.7;
  ckpt.standardizer.y_std = 6.3;
  ckpt.standardizer.x_mean = {25.0, 49.7};
  ckpt.standardizer.x_std = {3.1, 6.2};
  return ckpt;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto p1 = temp_file("a.bin");
  const auto p2 = temp_file("b.bin");
  const Checkpoint ckpt = sample_checkpoint();
  save_checkpoint(p1, ckpt);
  const Checkpoint loaded = load_checkpoint(p1);
  save_checkpoint(p2, loaded);
  EXPECT_EQ(slurp(p1), slurp(p2));
  fs::remove(p1);
  fs::remove(p2);
}

TEST(Checkpoint, RoundTripPreservesForwardExactly) {
  const auto path = temp_file("fwd.bin");
  const Checkpoint ckpt = sample_checkpoint();
  save_checkpoint(path, ckpt);
  const Checkpoint loaded = load_checkpoint(path);

  EXPECT_EQ(loaded.config, ckpt.config);
  Rng rng(5);
  RowMat<double> tokens(6, 3);
  for (Eigen::Index i = 0; i < tokens.size(); ++i) {
    tokens(i / 3, i % 3) = rng.normal(0.0, 1.0);
  }
  const auto a = forward(ckpt.weights, ckpt.config, tokens);
  const auto b = forward(loaded.weights, loaded.config, tokens);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      ASSERT_EQ(a(i, j), b(i, j));
    }
  }
  fs::remove(path);
}

TEST(Checkpoint, TruncatedFileIsStructuredError) {
  const auto path = temp_file("trunc.bin");
  save_checkpoint(path, sample_checkpoint());
  fs::resize_file(path, fs::file_size(path) - 64);
  EXPECT_THROW(load_checkpoint(path), checkpoint_error);
  fs::remove(path);
}

TEST(Checkpoint, BadMagicIsStructuredError) {
  const auto path = temp_file("magic.bin");
  {
    std::ofstream out(path, std::ios::binary);
    out << "garbage that is not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint(path), checkpoint_error);
  fs::remove(path);
}

TEST(Checkpoint, MissingFileIsStructuredError) {
  EXPECT_THROW(load_checkpoint(temp_file("missing.bin")), checkpoint_error);
}

TEST(Checkpoint, NoTempFileLeftBehind) {
  const auto path = temp_file("atomic.bin");
  save_checkpoint(path, sample_checkpoint());
  EXPECT_FALSE(fs::exists(path.string() + ".tmp"));
  fs::remove(path);
}
