#pragma once

#include <filesystem>
#include <string>

#include "virtview/confidence.hpp"
#include "virtview/estimator.hpp"

namespace virtview {

// JSON container: {"format": "virtview-checkpoint", "version": 1, "kind",
// "seed", "config", "tensors": [{"name", "dims": [rows, cols], "data"}]}.
// Doubles are written with round-trip precision, so loading is lossless.
// Loaders throw FormatError on a wrong kind, version or tensor layout.

std::string to_checkpoint(const EstimatorParams& params);
std::string to_checkpoint(const TeacherParams& params);
std::string to_checkpoint(const StudentParams& params);

EstimatorParams estimator_from_checkpoint(const std::string& text);
TeacherParams teacher_from_checkpoint(const std::string& text);
StudentParams student_from_checkpoint(const std::string& text);

// Throws IoError.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace virtview
