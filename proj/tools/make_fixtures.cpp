// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0
//
// Regenerates the planted-circuit fixtures: make_fixtures <dir>

#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "patchwork/error.hpp"
#include "patchwork/fixtures.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write every planted-circuit fixture under a directory"};
  std::string out;
  app.add_option("dir", out, "Output directory (one subdirectory per fixture)")->required();
  CLI11_PARSE(app, argc, argv);
  try {
    for (const auto& spec : patchwork::fixture_catalog()) {
      const auto dir = std::filesystem::path(out) / spec.name;
      patchwork::save_fixture(patchwork::build_planted_model(spec), dir);
      std::cout << dir.string() << '\n';
    }
  } catch (const patchwork::Error& e) {
    std::cerr << "make_fixtures: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
