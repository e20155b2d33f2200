#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lmk/image.hpp"

namespace lmk {

// Tab-separated manifest with a header row and '#key=value' pragma lines.
// Columns: id, image, split, seg, class (seg and class may be empty).
struct ManifestRecord {
    std::string id;
    std::string image_path;  // relative to the manifest directory
    std::string split;       // train | val | test
    std::string seg_path;    // optional
    std::string cls;         // optional class label
};

struct Manifest {
    std::vector<ManifestRecord> records;
    int image_size = 0;
    std::string dir;  // directory the manifest was loaded from
};

Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& manifest, const std::string& path);

struct DatasetEntry {
    std::string id;
    std::string split;
    std::string cls;
    Image image;
    std::optional<Image> seg;
};

struct Dataset {
    std::vector<DatasetEntry> entries;
    int image_size = 0;

    std::vector<int> split_indices(const std::string& split) const;
    // entries matching split and, when non-empty, the class label
    std::vector<int> select(const std::string& split,
                            const std::string& cls = "") const;
    int find(const std::string& id) const;  // -1 when absent
};

// Loads every referenced image (and segmentation when present), normalized
// to [0,1]. Validates unique ids and the manifest image size.
Dataset load_dataset(const Manifest& manifest, bool load_segs = true);

}  // namespace lmk
