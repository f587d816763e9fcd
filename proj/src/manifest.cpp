#include "isd/manifest.hpp"

#include <fstream>
#include <sstream>

#include "isd/isdt_io.hpp"

namespace isd::io {

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest " + path.string());
    Manifest m;
    m.base_dir = path.parent_path();

    std::string line;
    if (!std::getline(f, line)) throw FormatError("manifest is empty: " + path.string());
    if (line.rfind("#isdm v1 task=", 0) != 0)
        throw FormatError("manifest header must be '#isdm v1 task=<seg|cls>'");
    m.task = line.substr(std::string("#isdm v1 task=").size());
    if (m.task != "seg" && m.task != "cls") throw FormatError("manifest task must be seg or cls");

    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream row(line);
        ManifestEntry e;
        if (!std::getline(row, e.path, '\t') || !std::getline(row, e.label_or_mask, '\t') ||
            !std::getline(row, e.split))
            throw FormatError("manifest line " + std::to_string(lineno) + ": expected 3 tab-separated fields");
        if (e.split != "train" && e.split != "test")
            throw FormatError("manifest line " + std::to_string(lineno) + ": split must be train or test");
        if (!std::filesystem::exists(m.resolve(e.path)))
            throw FormatError("manifest references missing file " + e.path);
        if (m.task == "seg") {
            if (!std::filesystem::exists(m.resolve(e.label_or_mask)))
                throw FormatError("manifest references missing mask " + e.label_or_mask);
        } else {
            if (e.label_or_mask != "0" && e.label_or_mask != "1")
                throw FormatError("manifest line " + std::to_string(lineno) + ": cls label must be 0 or 1");
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
    std::string buf = "#isdm v1 task=" + m.task + "\n";
    for (const auto& e : m.entries) buf += e.path + "\t" + e.label_or_mask + "\t" + e.split + "\n";
    atomic_write(path, buf);
}

}  // namespace isd::io
