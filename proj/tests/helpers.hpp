#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>

#include "polarcast/netcore.hpp"

namespace testutil {

// Removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("polarcast-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& s) const { return path / s; }
};

inline polarcast::ArchConfig tiny_arch(bool dropout = false) {
  return {.window_len = 32,
          .conv_channels = {2, 2, 2, 2, 2},
          .kernel_size = 3,
          .pool_every_block = false,
          .dense_widths = {4, 1},
          .dropout_enabled = dropout};
}

}  // namespace testutil
