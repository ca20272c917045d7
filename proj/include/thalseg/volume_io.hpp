/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "thalseg/core_types.hpp"

namespace thalseg {

// ---------------------------------------------------------------------------
// NIfTI-1 single-file (.nii / .nii.gz) reader and writer.
//
// Supported datatypes: uint8, int16, int32, float32, float64. Read then write
// is the identity on (data, spacing, affine, datatype). When both sform and
// qform are present the sform wins and a warning is recorded.
// ---------------------------------------------------------------------------

Volume read_volume(const std::filesystem::path& path,
                   std::vector<std::string>* warnings = nullptr);
LabelMap read_labelmap(const std::filesystem::path& path, const Taxonomy& tax,
                       std::vector<std::string>* warnings = nullptr);

/// Loads either kind: integer files whose intent name marks them as labels
/// come back as LabelMap (nuclei taxonomy), everything else as Volume.
std::variant<Volume, LabelMap> read_nifti(const std::filesystem::path& path,
                                          std::vector<std::string>* warnings = nullptr);

void write_nifti(const Volume& v, const std::filesystem::path& path);
void write_nifti(const LabelMap& m, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Dataset manifest: one TSV row per subject.
// Columns: subject_id  image  labels  cohort  field  contrast
// ("-" marks a missing label path; image/label paths are resolved relative to
// the manifest's directory).
// ---------------------------------------------------------------------------

enum class Cohort { CONTROL, MS, ET, SYNTHETIC };
enum class FieldStrength { T3, T7, NA };

std::string to_string(Cohort c);
Cohort cohort_from_string(std::string_view s);
std::string to_string(FieldStrength f);
FieldStrength field_from_string(std::string_view s);

struct ManifestEntry {
  std::string subject_id;
  std::filesystem::path image_path;          // absolute after load
  std::optional<std::filesystem::path> label_path;
  Cohort cohort = Cohort::SYNTHETIC;
  FieldStrength field = FieldStrength::NA;
  Contrast contrast = Contrast::SYNTHETIC;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  size_t size() const { return entries.size(); }
  size_t cohort_count(Cohort c) const;
};

/// Loads and validates a manifest; throws Error(Validation) with an itemized
/// report (duplicate ids, missing files, unknown tags) on failure.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

}  // namespace thalseg
