#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "voxdiff/volume.hpp"

namespace voxdiff {

enum class V3dKind : std::uint8_t { Intensity = 0, Labels = 1 };

// V3D, little-endian: magic "V3D1", 4 x u32 (channels, width, height, depth),
// u8 dtype (1 = f32), u8 kind, 2 reserved zero bytes, then the payload in
// canonical ordering.
void write_v3d(const Volume& v, const std::string& path, V3dKind kind = V3dKind::Intensity);
Volume read_v3d(const std::string& path, V3dKind* kind_out = nullptr);

void write_labels_v3d(const LabelVolume& labels, const std::string& path);
LabelVolume read_labels_v3d(const std::string& path);

struct PhantomParams {
    Dims grid{16, 16, 16};
    // semi-axis fractions of the half-extent per axis
    double head_axis_lo = 0.55, head_axis_hi = 0.8;
    double tumor_radius_lo = 0.12, tumor_radius_hi = 0.22;  // fraction of grid extent
    int tumor_count_lo = 1, tumor_count_hi = 1;
    double texture_amplitude = 0.08;
    double ring_contrast = 0.35;  // extra brightness of the tumor rim
    std::uint64_t seed = 0;

    void check() const;
};

struct Case {
    Volume image;        // [-1,1]
    LabelVolume labels;  // 0 background, 1 head, 2 tumor
    std::string id;
};

// Deterministic in (params.seed, index): ellipsoidal head with smooth falloff
// and texture noise, bright ring-enhanced tumor sphere(s), background at -1.
Case generate_phantom(const PhantomParams& params, int index);

// crop/pad -> resize (trilinear image, nearest labels) -> robust-percentile
// rescale onto [-1,1].
Case preprocess(const Volume& image, const LabelVolume& labels, Dims target,
                const std::string& id = "");

struct BrainThreshold {
    int source_channel = 0;
    float threshold = 0.0f;
    int brain_label = 3;
    int tumor_label = 2;
};

LabelVolume remap_labels(const LabelVolume& labels, const std::map<int, int>& mapping,
                         const std::optional<BrainThreshold>& brain = std::nullopt,
                         const Volume* reference = nullptr);

// Dataset directory: case_<id>_img.v3d / case_<id>_lbl.v3d + manifest.txt.
std::vector<std::string> read_manifest(const std::string& dir);
void write_manifest(const std::string& dir, const std::vector<std::string>& ids);
Case load_case(const std::string& dir, const std::string& id);
void save_case(const std::string& dir, const Case& c);

}  // namespace voxdiff
