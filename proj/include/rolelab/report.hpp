#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace rolelab {

struct ReportBundle {
  std::vector<std::filesystem::path> written;
  // Inputs that were expected but absent or unreadable; the rest of the
  // report is still written.
  std::vector<std::string> missing;
  std::size_t runs = 0;
};

// Reads a grid directory (cells/, controls/, optional results.json) or a
// single run directory and writes into out_dir:
//   delta_vs_base.csv     one row per run
//   ip_vs_sp.csv          matched SP/IP pairs
//   residuals.csv         MA peak minus matched SA peak, in points
//   training_dynamics.csv every logged metric point
//   amplitude.csv         max chi2, max grad norm, entropy collapse depth
//   role_dynamics.csv     peak-over-first ratios; SP runs give one "shared policy" row
//   signatures.csv        behavioral signatures of the logged trajectories
//   summary.txt
// Every CSV gets its header even with no rows.
ReportBundle emit_report(const std::filesystem::path& dir, const std::filesystem::path& out_dir);

}  // namespace rolelab
