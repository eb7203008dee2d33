#pragma once

// Line-delimited dataset files: one header record, then one demonstration
// per line. Shared by the privileged collector, the teleop recorder and
// rollout trajectory export.

#include <filesystem>
#include <string>
#include <vector>

#include "furrow/demonstrator.hpp"

namespace furrow {

inline constexpr int kDatasetSchemaVersion = 1;

std::string dataset_header_line(const DatasetHeader& header);
std::string demonstration_line(const Demonstration& demo);

/// Writes header + demos. Throws RuntimeFailure when the path is unwritable.
void write_dataset(const std::filesystem::path& path, const Dataset& ds);

/// Parses and validates a dataset file. Schema violations throw
/// ValidationError naming the file and line; softer anomalies (actions
/// outside the recorded robot limits, replay drift) are appended to
/// `warnings` when given.
Dataset read_dataset(const std::filesystem::path& path,
                     std::vector<std::string>* warnings = nullptr);

/// Concatenates datasets with identical observation layouts.
Dataset merge_datasets(std::vector<Dataset> parts);

}  // namespace furrow
