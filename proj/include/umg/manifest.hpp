#pragma once

#include <string>
#include <vector>

#include "umg/common.hpp"

namespace umg {

enum class Label { live, spoof };

struct ManifestRecord {
    std::string path;  // relative to the manifest's directory
    Label label = Label::live;
    std::string material;  // empty for live records
    std::string sensor;
    std::string subject;
    std::string split;  // "train" | "test"
    bool synthetic = false;
};

// Dataset index. The on-disk form is CSV with header
// path,label,material,sensor,subject,split and an optional trailing
// `synthetic` column (emitted only when a record carries the flag).
struct DatasetManifest {
    std::string base_dir;
    std::vector<ManifestRecord> records;

    /// Field validity, spoof-has-material, train/test subject disjointness,
    /// synthetic-records-train-only. Throws ValueError with the row number.
    void validate() const;

    std::string resolve(const ManifestRecord& r) const;
    std::vector<std::string> materials() const;  // sorted unique, spoof records
    std::vector<std::string> sensors() const;    // sorted unique
};

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& m, const std::string& path);

}  // namespace umg
