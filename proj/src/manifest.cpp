#include "umg/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace umg {

namespace {

constexpr const char* kHeader = "path,label,material,sensor,subject,split";
constexpr const char* kHeaderSynthetic = "path,label,material,sensor,subject,split,synthetic";

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

void DatasetManifest::validate() const {
    std::set<std::string> train_subjects, test_subjects;
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        const std::string row = "manifest row " + std::to_string(i + 2);  // 1-based + header
        if (r.path.empty()) throw ValueError(row + ": empty path");
        if (r.split != "train" && r.split != "test") {
            throw ValueError(row + ": split must be train or test, got '" + r.split + "'");
        }
        if (r.label == Label::spoof && r.material.empty()) {
            throw ValueError(row + ": spoof record without material id");
        }
        if (r.synthetic && r.split == "test") {
            throw ValueError(row + ": synthetic record assigned to test split");
        }
        (r.split == "train" ? train_subjects : test_subjects).insert(r.subject);
    }
    for (const auto& s : train_subjects) {
        if (test_subjects.count(s)) {
            throw ValueError("manifest: subject '" + s + "' appears in both train and test splits");
        }
    }
}

std::string DatasetManifest::resolve(const ManifestRecord& r) const {
    if (base_dir.empty() || r.path.starts_with('/')) return r.path;
    return base_dir + "/" + r.path;
}

std::vector<std::string> DatasetManifest::materials() const {
    std::set<std::string> s;
    for (const auto& r : records) {
        if (r.label == Label::spoof) s.insert(r.material);
    }
    return {s.begin(), s.end()};
}

std::vector<std::string> DatasetManifest::sensors() const {
    std::set<std::string> s;
    for (const auto& r : records) s.insert(r.sensor);
    return {s.begin(), s.end()};
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is.good()) throw IoError("manifest: cannot open: " + path);
    std::string header;
    if (!std::getline(is, header)) throw IoError("manifest: empty file: " + path);
    while (!header.empty() && (header.back() == '\r' || header.back() == '\n')) header.pop_back();
    bool has_synth_col;
    if (header == kHeader) {
        has_synth_col = false;
    } else if (header == kHeaderSynthetic) {
        has_synth_col = true;
    } else {
        throw IoError("manifest: unexpected header '" + header + "' in " + path);
    }
    DatasetManifest m;
    auto slash = path.find_last_of('/');
    m.base_dir = slash == std::string::npos ? std::string() : path.substr(0, slash);
    std::string line;
    size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto f = split_csv(line);
        const size_t want = has_synth_col ? 7u : 6u;
        if (f.size() != want) {
            throw IoError("manifest: line " + std::to_string(lineno) + ": expected " +
                          std::to_string(want) + " fields, got " + std::to_string(f.size()));
        }
        ManifestRecord r;
        r.path = f[0];
        if (f[1] == "live") {
            r.label = Label::live;
        } else if (f[1] == "spoof") {
            r.label = Label::spoof;
        } else {
            throw IoError("manifest: line " + std::to_string(lineno) + ": bad label '" + f[1] + "'");
        }
        r.material = f[2];
        r.sensor = f[3];
        r.subject = f[4];
        r.split = f[5];
        if (has_synth_col) r.synthetic = f[6] == "1";
        m.records.push_back(std::move(r));
    }
    if (m.records.empty()) throw IoError("manifest: no records in " + path);
    m.validate();
    return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    m.validate();
    const bool any_synth =
        std::any_of(m.records.begin(), m.records.end(), [](const auto& r) { return r.synthetic; });
    std::ofstream os(path, std::ios::trunc);
    if (!os.good()) throw IoError("manifest: cannot open for writing: " + path);
    os << (any_synth ? kHeaderSynthetic : kHeader) << "\n";
    for (const auto& r : m.records) {
        os << r.path << ',' << (r.label == Label::live ? "live" : "spoof") << ',' << r.material
           << ',' << r.sensor << ',' << r.subject << ',' << r.split;
        if (any_synth) os << ',' << (r.synthetic ? '1' : '0');
        os << "\n";
    }
    if (!os.good()) throw IoError("manifest: write failed: " + path);
}

}  // namespace umg
