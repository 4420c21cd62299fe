#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "splitsense/labels.hpp"
#include "splitsense/preprocess.hpp"

namespace splitsense::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

// Runs one invocation; args excludes the program name. Artifacts go to files,
// summaries to `out`, diagnostics and usage to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// rois.json, written by extract-roi and read by train/score/report.
struct RoiEntry {
  std::string id;
  std::string cube_path;  // relative to the index file
  std::optional<Label> label;
};

std::vector<RoiEntry> read_roi_index(const std::filesystem::path& path);
void write_roi_index(const std::vector<RoiEntry>& entries, const std::filesystem::path& path);

struct LoadedRoi {
  std::string id;
  std::optional<Label> label;
  preprocess::RoiTensor roi;
};

std::vector<LoadedRoi> load_rois(const std::filesystem::path& index_path);

}  // namespace splitsense::cli
