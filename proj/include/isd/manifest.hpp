#pragma once

#include <filesystem>
#include <string>
#include <vector>

// Dataset manifests: a "#isdm v1 task=<seg|cls>" header followed by
// tab-separated rows `relative_path<TAB>label_or_mask_path<TAB>split`.
// For task=seg the middle field is a mask path; for task=cls it is a 0/1
// label.

namespace isd::io {

struct ManifestEntry {
    std::string path;
    std::string label_or_mask;
    std::string split;  // "train" or "test"
};

struct Manifest {
    std::string task;  // "seg" or "cls"
    std::vector<ManifestEntry> entries;
    std::filesystem::path base_dir;  // directory the relative paths resolve against

    std::vector<ManifestEntry> split(const std::string& which) const {
        std::vector<ManifestEntry> out;
        for (const auto& e : entries)
            if (e.split == which) out.push_back(e);
        return out;
    }

    std::filesystem::path resolve(const std::string& rel) const { return base_dir / rel; }
};

// Parses and validates: header, splits, referenced files must exist.
Manifest read_manifest(const std::filesystem::path& path);

void write_manifest(const std::filesystem::path& path, const Manifest& m);

}  // namespace isd::io
