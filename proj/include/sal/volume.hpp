#pragma once
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sal/common.hpp"
#include "sal/tensor.hpp"

namespace sal {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Volume: a 3D scalar image (V slices of H x W) with optional label volume.
// Label access is counted so the pre-training path can be audited for label
// leakage.
// ---------------------------------------------------------------------------
class Volume {
public:
    Volume() = default;

    Volume(std::string subject_id, Tensor<float> voxels,
           std::array<double, 3> spacing = {1.0, 1.0, 1.0})
        : subject_id_(std::move(subject_id)), voxels_(std::move(voxels)), spacing_(spacing) {
        validate();
    }

    const std::string& subject_id() const { return subject_id_; }
    int V() const { return voxels_.dim(0); }
    int H() const { return voxels_.dim(1); }
    int W() const { return voxels_.dim(2); }
    const std::array<double, 3>& spacing() const { return spacing_; }

    const Tensor<float>& voxels() const { return voxels_; }
    Tensor<float>& voxels() { return voxels_; }

    bool has_labels() const { return labels_.has_value(); }

    void set_labels(Tensor<std::int32_t> labels, int num_classes) {
        require(labels.shape() == voxels_.shape(),
                "Volume ", subject_id_, ": label shape does not match voxel shape");
        for (long long i = 0; i < labels.numel(); ++i)
            require(labels[i] >= 0 && labels[i] < num_classes,
                    "Volume ", subject_id_, ": label ", labels[i], " outside [0, ", num_classes, ")");
        labels_ = std::move(labels);
    }

    // Counted accessor; pretrain must never trip this (see training tests).
    const Tensor<std::int32_t>& labels() const {
        require(labels_.has_value(), "Volume ", subject_id_, ": no labels present");
        label_read_count().fetch_add(1, std::memory_order_relaxed);
        return *labels_;
    }

    static std::atomic<std::uint64_t>& label_read_count() {
        static std::atomic<std::uint64_t> count{0};
        return count;
    }

    void validate() const {
        require(voxels_.ndim() == 3, "Volume ", subject_id_, ": voxels must be rank 3");
        require(V() >= 2, "Volume ", subject_id_, ": V=", V(), " < 2");
        require(H() >= 8 && W() >= 8, "Volume ", subject_id_, ": H,W=", H(), ",", W(), " below minimum 8");
        for (double s : spacing_) require(s > 0.0, "Volume ", subject_id_, ": nonpositive spacing");
        require(voxels_.all_finite(), "Volume ", subject_id_, ": non-finite intensity");
    }

private:
    std::string subject_id_;
    Tensor<float> voxels_;
    std::array<double, 3> spacing_{1.0, 1.0, 1.0};
    std::optional<Tensor<std::int32_t>> labels_;
};

// One 2D plane of a volume plus the metadata the losses need.
struct SliceRecord {
    std::string subject_id;
    int slice_index = 0;
    int V = 0;
    Tensor<float> pixels; // (H, W)
};

inline SliceRecord get_slice(const Volume& volume, int index) {
    require(index >= 0 && index < volume.V(),
            "get_slice: index ", index, " out of range [0, ", volume.V(), ") for subject ",
            volume.subject_id());
    const int H = volume.H(), W = volume.W();
    SliceRecord rec{volume.subject_id(), index, volume.V(), Tensor<float>({H, W})};
    const float* src = volume.voxels().data() + static_cast<std::size_t>(index) * H * W;
    std::memcpy(rec.pixels.data(), src, sizeof(float) * static_cast<std::size_t>(H) * W);
    return rec;
}

// Per-volume z-score with a variance floor so constant volumes map to zeros.
inline void normalize_volume(Volume& volume, double variance_floor = 1e-6) {
    Tensor<float>& vox = volume.voxels();
    const long long n = vox.numel();
    double mean = 0.0;
    for (long long i = 0; i < n; ++i) mean += vox[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (long long i = 0; i < n; ++i) {
        const double d = vox[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv_std = 1.0 / std::sqrt(std::max(var, variance_floor));
    for (long long i = 0; i < n; ++i)
        vox[i] = static_cast<float>((vox[i] - mean) * inv_std);
}

// ---------------------------------------------------------------------------
// On-disk format: raw little-endian payload + JSON sidecar header.
// <name>.json  {shape, dtype, spacing, subject_id, data}
// <name>.raw   C-order payload
// ---------------------------------------------------------------------------

namespace detail {

inline void write_file_bytes(const fs::path& path, const void* data, std::size_t bytes) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot open for write: ", path.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    require(out.good(), "write failed: ", path.string());
}

inline std::vector<char> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    require(in.good(), "cannot open: ", path.string());
    const auto size = in.tellg();
    in.seekg(0);
    std::vector<char> buf(static_cast<std::size_t>(size));
    in.read(buf.data(), size);
    require(in.good(), "read failed: ", path.string());
    return buf;
}

inline json load_json_file(const fs::path& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open: ", path.string());
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        fail("malformed JSON in ", path.string(), ": ", e.what());
    }
    return j;
}

} // namespace detail

// Writes header to `header_path` (must end in .json) and the payload next to it.
inline void save_array(const fs::path& header_path, const std::vector<int>& shape,
                       const std::string& dtype, const std::array<double, 3>& spacing,
                       const std::string& subject_id, const void* payload, std::size_t bytes) {
    require(header_path.extension() == ".json", "volume header must end in .json: ", header_path.string());
    fs::path raw = header_path;
    raw.replace_extension(".raw");
    detail::write_file_bytes(raw, payload, bytes);
    json j{{"shape", shape},
           {"dtype", dtype},
           {"spacing", spacing},
           {"subject_id", subject_id},
           {"data", raw.filename().string()}};
    std::ofstream out(header_path);
    require(out.good(), "cannot open for write: ", header_path.string());
    out << j.dump(2) << "\n";
}

inline void save_volume(const Volume& volume, const fs::path& header_path) {
    save_array(header_path, volume.voxels().shape(), "float32", volume.spacing(),
               volume.subject_id(), volume.voxels().data(),
               sizeof(float) * static_cast<std::size_t>(volume.voxels().numel()));
}

inline void save_labels(const Volume& volume, const fs::path& header_path) {
    const Tensor<std::int32_t>& lab = volume.labels();
    save_array(header_path, lab.shape(), "int32", volume.spacing(), volume.subject_id(),
               lab.data(), sizeof(std::int32_t) * static_cast<std::size_t>(lab.numel()));
}

struct RawArray {
    std::vector<int> shape;
    std::string dtype;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::string subject_id;
    std::vector<char> payload;
};

inline RawArray load_array(const fs::path& header_path) {
    require(fs::exists(header_path), "volume header does not exist: ", header_path.string());
    json j = detail::load_json_file(header_path);
    for (const char* key : {"shape", "dtype", "subject_id", "data"})
        require(j.contains(key), header_path.string(), ": missing header field '", key, "'");
    RawArray arr;
    arr.shape = j["shape"].get<std::vector<int>>();
    arr.dtype = j["dtype"].get<std::string>();
    arr.subject_id = j["subject_id"].get<std::string>();
    if (j.contains("spacing")) arr.spacing = j["spacing"].get<std::array<double, 3>>();
    require(arr.shape.size() == 3, header_path.string(), ": header shape must be [V,H,W]");
    require(arr.dtype == "float32" || arr.dtype == "int32",
            header_path.string(), ": unsupported dtype '", arr.dtype, "'");

    const fs::path raw = header_path.parent_path() / j["data"].get<std::string>();
    arr.payload = detail::read_file_bytes(raw);

    long long expect = 4;
    for (int d : arr.shape) expect *= d;
    require(static_cast<long long>(arr.payload.size()) == expect,
            header_path.string(), ": payload holds ", arr.payload.size() / 4,
            " elements but header declares ", expect / 4);
    return arr;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::string subject_id;
    fs::path volume_path;
    std::optional<fs::path> label_path;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    int num_classes = 0;
};

inline DatasetManifest load_manifest(const fs::path& path) {
    require(fs::exists(path), "manifest does not exist: ", path.string());
    json j = detail::load_json_file(path);
    require(j.contains("num_classes") && j.contains("entries"),
            path.string(), ": manifest needs 'num_classes' and 'entries'");
    DatasetManifest m;
    m.num_classes = j["num_classes"].get<int>();
    require(m.num_classes > 0, path.string(), ": num_classes must be positive");

    const fs::path base = path.parent_path();
    std::vector<std::string> seen;
    for (const auto& e : j["entries"]) {
        ManifestEntry entry;
        entry.subject_id = e.at("subject_id").get<std::string>();
        for (const auto& s : seen)
            require(s != entry.subject_id, path.string(), ": duplicate subject_id \"",
                    entry.subject_id, "\"");
        seen.push_back(entry.subject_id);
        entry.volume_path = base / e.at("volume").get<std::string>();
        require(fs::exists(entry.volume_path), path.string(), ": entry \"", entry.subject_id,
                "\" references nonexistent file ", entry.volume_path.string());
        if (e.contains("labels")) {
            entry.label_path = base / e["labels"].get<std::string>();
            require(fs::exists(*entry.label_path), path.string(), ": entry \"", entry.subject_id,
                    "\" references nonexistent label file ", entry.label_path->string());
        }
        // Eager readability check: header must parse and match its payload.
        try {
            load_array(entry.volume_path);
        } catch (const std::exception& ex) {
            fail(path.string(), ": entry \"", entry.subject_id, "\" is unreadable: ", ex.what());
        }
        m.entries.push_back(std::move(entry));
    }
    return m;
}

inline void save_manifest(const DatasetManifest& m, const fs::path& path) {
    json entries = json::array();
    const fs::path base = path.parent_path();
    for (const auto& e : m.entries) {
        json je{{"subject_id", e.subject_id},
                {"volume", fs::relative(e.volume_path, base).string()}};
        if (e.label_path) je["labels"] = fs::relative(*e.label_path, base).string();
        entries.push_back(je);
    }
    json j{{"num_classes", m.num_classes}, {"entries", entries}};
    std::ofstream out(path);
    require(out.good(), "cannot open for write: ", path.string());
    out << j.dump(2) << "\n";
}

// normalize=false gives the bit-exact payload (round-trip tests, re-saving);
// the default applies the per-volume z-score the training stack expects.
inline Volume load_volume(const ManifestEntry& entry, bool normalize = true,
                          int num_classes = 0) {
    RawArray arr = load_array(entry.volume_path);
    require(arr.dtype == "float32", entry.volume_path.string(), ": volume dtype must be float32");

    Tensor<float> vox(arr.shape);
    std::memcpy(vox.data(), arr.payload.data(), arr.payload.size());
    require(vox.all_finite(), entry.volume_path.string(), ": NaN or Inf intensity in subject \"",
            arr.subject_id.empty() ? entry.subject_id : arr.subject_id, "\"");

    const std::string sid = arr.subject_id.empty() ? entry.subject_id : arr.subject_id;
    Volume vol(sid, std::move(vox), arr.spacing);

    if (entry.label_path) {
        RawArray lab = load_array(*entry.label_path);
        require(lab.dtype == "int32", entry.label_path->string(), ": label dtype must be int32");
        Tensor<std::int32_t> labels(lab.shape);
        std::memcpy(labels.data(), lab.payload.data(), lab.payload.size());
        int nc = num_classes;
        if (nc <= 0) {
            std::int32_t mx = 0;
            for (long long i = 0; i < labels.numel(); ++i) mx = std::max(mx, labels[i]);
            nc = mx + 1;
        }
        vol.set_labels(std::move(labels), nc);
    }
    if (normalize) normalize_volume(vol);
    return vol;
}

// In-memory dataset: all volumes of a manifest, loaded and normalized.
struct Dataset {
    std::vector<Volume> volumes;
    int num_classes = 0;

    const Volume& by_subject(const std::string& id) const {
        for (const auto& v : volumes)
            if (v.subject_id() == id) return v;
        fail("dataset has no subject \"", id, "\"");
    }

    std::vector<std::string> subject_ids() const {
        std::vector<std::string> out;
        out.reserve(volumes.size());
        for (const auto& v : volumes) out.push_back(v.subject_id());
        return out;
    }
};

inline Dataset load_dataset(const fs::path& manifest_path, bool normalize = true) {
    DatasetManifest m = load_manifest(manifest_path);
    Dataset ds;
    ds.num_classes = m.num_classes;
    for (const auto& e : m.entries)
        ds.volumes.push_back(load_volume(e, normalize, m.num_classes));
    return ds;
}

} // namespace sal
