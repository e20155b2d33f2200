#include "lmk/manifest.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace lmk {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == '\t') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open manifest: " + path);
    Manifest m;
    m.dir = fs::path(path).parent_path().string();
    std::string line;
    bool header_seen = false;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto eq = line.find('=');
            if (eq != std::string::npos) {
                const std::string key = line.substr(1, eq - 1);
                const std::string val = line.substr(eq + 1);
                if (key == "image_size") m.image_size = std::stoi(val);
            }
            continue;
        }
        const auto cols = split_tabs(line);
        if (!header_seen) {
            header = cols;
            require(header.size() >= 3 && header[0] == "id" &&
                        header[1] == "image" && header[2] == "split",
                    "manifest header must start with id, image, split");
            header_seen = true;
            continue;
        }
        require(cols.size() >= 3, "manifest row with fewer than 3 columns");
        ManifestRecord rec;
        rec.id = cols[0];
        rec.image_path = cols[1];
        rec.split = cols[2];
        if (cols.size() > 3) rec.seg_path = cols[3];
        if (cols.size() > 4) rec.cls = cols[4];
        require(rec.split == "train" || rec.split == "val" ||
                    rec.split == "test",
                "unknown split '" + rec.split + "' for id " + rec.id);
        m.records.push_back(std::move(rec));
    }
    require(header_seen, "manifest has no header row");
    require(!m.records.empty(), "manifest has no records");
    return m;
}

void save_manifest(const Manifest& manifest, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        require(out.good(), "cannot write manifest: " + path);
        if (manifest.image_size > 0)
            out << "#image_size=" << manifest.image_size << "\n";
        out << "id\timage\tsplit\tseg\tclass\n";
        for (const auto& r : manifest.records)
            out << r.id << '\t' << r.image_path << '\t' << r.split << '\t'
                << r.seg_path << '\t' << r.cls << '\n';
        require(out.good(), "manifest write failure: " + path);
    }
    fs::rename(tmp, path);
}

std::vector<int> Dataset::split_indices(const std::string& split) const {
    std::vector<int> out;
    for (size_t i = 0; i < entries.size(); ++i)
        if (entries[i].split == split) out.push_back(int(i));
    return out;
}

std::vector<int> Dataset::select(const std::string& split,
                                 const std::string& cls) const {
    std::vector<int> out;
    for (size_t i = 0; i < entries.size(); ++i)
        if (entries[i].split == split && (cls.empty() || entries[i].cls == cls))
            out.push_back(int(i));
    return out;
}

int Dataset::find(const std::string& id) const {
    for (size_t i = 0; i < entries.size(); ++i)
        if (entries[i].id == id) return int(i);
    return -1;
}

Dataset load_dataset(const Manifest& manifest, bool load_segs) {
    Dataset ds;
    ds.image_size = manifest.image_size;
    std::set<std::string> seen;
    for (const auto& rec : manifest.records) {
        require(seen.insert(rec.id).second, "duplicate manifest id: " + rec.id);
        DatasetEntry e;
        e.id = rec.id;
        e.split = rec.split;
        e.cls = rec.cls;
        const fs::path img_path = fs::path(manifest.dir) / rec.image_path;
        e.image = load_image(img_path.string());
        if (manifest.image_size > 0) {
            require(e.image.width == manifest.image_size &&
                        e.image.height == manifest.image_size,
                    "image size of " + rec.id +
                        " does not match the manifest image_size");
        }
        if (load_segs && !rec.seg_path.empty()) {
            const fs::path seg_path = fs::path(manifest.dir) / rec.seg_path;
            e.seg = load_image(seg_path.string());
            require(e.seg->same_extent(e.image),
                    "segmentation extent mismatch for id " + rec.id);
        }
        ds.entries.push_back(std::move(e));
    }
    return ds;
}

}  // namespace lmk
