#define DOCTEST_CONFIG_IMPLEMENT
#include <filesystem>

#include "doctest.h"

// Fixture files are written with relative paths; run everything from a
// scratch directory so invoking the binary never litters the caller's cwd.
int main(int argc, char** argv) {
  namespace fs = std::filesystem;
  const fs::path scratch = fs::temp_directory_path() / "simic-test-scratch";
  std::error_code ec;
  fs::remove_all(scratch, ec);
  fs::create_directories(scratch);
  fs::current_path(scratch);
  return doctest::Context(argc, argv).run();
}
