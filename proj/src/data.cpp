#include "voxdiff/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "voxdiff/rng.hpp"

namespace voxdiff {

namespace {

constexpr char kMagic[4] = {'V', '3', 'D', '1'};
constexpr std::uint8_t kDtypeF32 = 1;

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<char*>(&v), 4); }

std::uint32_t read_u32(std::istream& is, const std::string& path, const char* what) {
    std::uint32_t v;
    if (!is.read(reinterpret_cast<char*>(&v), 4))
        throw DataError("v3d: truncated " + std::string(what) + " in " + path);
    return v;
}

}  // namespace

void write_v3d(const Volume& v, const std::string& path, V3dKind kind) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("v3d: cannot open for write: " + path);
    os.write(kMagic, 4);
    write_u32(os, static_cast<std::uint32_t>(v.channels()));
    write_u32(os, static_cast<std::uint32_t>(v.width()));
    write_u32(os, static_cast<std::uint32_t>(v.height()));
    write_u32(os, static_cast<std::uint32_t>(v.depth()));
    const std::uint8_t meta[4] = {kDtypeF32, static_cast<std::uint8_t>(kind), 0, 0};
    os.write(reinterpret_cast<const char*>(meta), 4);
    os.write(reinterpret_cast<const char*>(v.data().data()),
             static_cast<std::streamsize>(v.size() * sizeof(float)));
    if (!os) throw DataError("v3d: write failed: " + path);
}

Volume read_v3d(const std::string& path, V3dKind* kind_out) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("v3d: cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("v3d: bad magic in " + path);
    const std::uint32_t channels = read_u32(is, path, "channels");
    const std::uint32_t width = read_u32(is, path, "width");
    const std::uint32_t height = read_u32(is, path, "height");
    const std::uint32_t depth = read_u32(is, path, "depth");
    constexpr std::uint32_t kMaxDim = 1u << 14;
    if (channels == 0 || width == 0 || height == 0 || depth == 0)
        throw DataError("v3d: zero dimension in header of " + path);
    if (channels > kMaxDim || width > kMaxDim || height > kMaxDim || depth > kMaxDim)
        throw DataError("v3d: dimension overflow in header of " + path);
    std::uint8_t meta[4];
    if (!is.read(reinterpret_cast<char*>(meta), 4)) throw DataError("v3d: truncated header in " + path);
    if (meta[0] != kDtypeF32)
        throw DataError("v3d: unsupported dtype code " + std::to_string(meta[0]) + " in " + path);
    if (kind_out) *kind_out = static_cast<V3dKind>(meta[1]);
    Volume v(static_cast<int>(channels),
             Dims{static_cast<int>(width), static_cast<int>(height), static_cast<int>(depth)});
    if (!is.read(reinterpret_cast<char*>(v.data().data()),
                 static_cast<std::streamsize>(v.size() * sizeof(float))))
        throw DataError("v3d: truncated payload in " + path);
    return v;
}

void write_labels_v3d(const LabelVolume& labels, const std::string& path) {
    Volume v(1, labels.dims());
    for (std::size_t i = 0; i < labels.size(); ++i)
        v.data()[i] = static_cast<float>(labels.labels()[i]);
    write_v3d(v, path, V3dKind::Labels);
}

LabelVolume read_labels_v3d(const std::string& path) {
    V3dKind kind;
    const Volume v = read_v3d(path, &kind);
    if (kind != V3dKind::Labels) throw DataError("v3d: expected label volume: " + path);
    if (v.channels() != 1) throw DataError("v3d: label volume must be single-channel: " + path);
    LabelVolume labels(v.dims());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const float f = v.data()[i];
        const int l = static_cast<int>(std::lround(f));
        if (f != static_cast<float>(l) || l < 0)
            throw DataError("v3d: non-integer label value in " + path);
        labels.labels()[i] = l;
    }
    return labels;
}

void PhantomParams::check() const {
    if (grid.width < 8 || grid.height < 8 || grid.depth < 8)
        throw ConfigError("phantom: grid must be at least 8 per axis");
    if (!(head_axis_lo > 0.0 && head_axis_lo <= head_axis_hi && head_axis_hi <= 0.95))
        throw ConfigError("phantom: head axis range invalid");
    if (!(tumor_radius_lo > 0.0 && tumor_radius_lo <= tumor_radius_hi && tumor_radius_hi < 0.5))
        throw ConfigError("phantom: tumor radius range invalid");
    if (tumor_count_lo < 1 || tumor_count_lo > tumor_count_hi)
        throw ConfigError("phantom: tumor count range invalid");
    if (texture_amplitude < 0.0 || ring_contrast < 0.0)
        throw ConfigError("phantom: negative amplitude");
}

Case generate_phantom(const PhantomParams& params, int index) {
    params.check();
    Rng rng = Rng::derive(params.seed, static_cast<std::uint64_t>(index));
    const Dims g = params.grid;
    const double cx0 = (g.width - 1) / 2.0, cy0 = (g.height - 1) / 2.0, cz0 = (g.depth - 1) / 2.0;

    const double ax = (params.head_axis_lo +
                       rng.uniform() * (params.head_axis_hi - params.head_axis_lo)) *
                      g.width / 2.0;
    const double ay = (params.head_axis_lo +
                       rng.uniform() * (params.head_axis_hi - params.head_axis_lo)) *
                      g.height / 2.0;
    const double az = (params.head_axis_lo +
                       rng.uniform() * (params.head_axis_hi - params.head_axis_lo)) *
                      g.depth / 2.0;
    const double cx = cx0 + (rng.uniform() - 0.5) * 0.08 * g.width;
    const double cy = cy0 + (rng.uniform() - 0.5) * 0.08 * g.height;
    const double cz = cz0 + (rng.uniform() - 0.5) * 0.08 * g.depth;
    const double min_axis = std::min({ax, ay, az});
    const int min_extent = std::min({g.width, g.height, g.depth});

    const int n_tumors = rng.uniform_int(params.tumor_count_lo, params.tumor_count_hi);
    struct Tumor {
        double x, y, z, r;
    };
    std::vector<Tumor> tumors;
    for (int i = 0; i < n_tumors; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            const double r = (params.tumor_radius_lo +
                              rng.uniform() * (params.tumor_radius_hi - params.tumor_radius_lo)) *
                             min_extent;
            // center in normalized ellipsoid coordinates, kept inside so the
            // whole sphere (plus one voxel of slack) stays in the head
            const double max_rn = 1.0 - (r + 1.0) / min_axis;
            if (max_rn <= 0.0) continue;
            const double u = std::cbrt(rng.uniform()) * max_rn;
            const double theta = std::acos(2.0 * rng.uniform() - 1.0);
            const double phi = 2.0 * 3.14159265358979323846 * rng.uniform();
            tumors.push_back({cx + u * std::sin(theta) * std::cos(phi) * ax,
                              cy + u * std::sin(theta) * std::sin(phi) * ay,
                              cz + u * std::cos(theta) * az, r});
            placed = true;
        }
        if (!placed)
            throw DataError("phantom: infeasible tumor geometry for grid " + g.str() +
                            " with radius range [" + std::to_string(params.tumor_radius_lo) +
                            ", " + std::to_string(params.tumor_radius_hi) + "]");
    }

    // smooth texture: white noise + one box-filter pass
    std::vector<float> noise(static_cast<std::size_t>(g.width) * g.height * g.depth);
    for (auto& x : noise) x = static_cast<float>(rng.normal());
    auto noise_at = [&](int x, int y, int z) {
        x = std::clamp(x, 0, g.width - 1);
        y = std::clamp(y, 0, g.height - 1);
        z = std::clamp(z, 0, g.depth - 1);
        return noise[(static_cast<std::size_t>(z) * g.height + y) * g.width + x];
    };

    Case c;
    c.image = Volume(1, g, -1.0f);
    c.labels = LabelVolume(g, 0);
    c.id = std::to_string(index);
    for (int z = 0; z < g.depth; ++z)
        for (int y = 0; y < g.height; ++y)
            for (int x = 0; x < g.width; ++x) {
                const double nx = (x - cx) / ax, ny = (y - cy) / ay, nz = (z - cz) / az;
                const double rn2 = nx * nx + ny * ny + nz * nz;
                if (rn2 > 1.0) continue;

                double smooth = 0.0;
                for (int dz = -1; dz <= 1; ++dz)
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx)
                            smooth += noise_at(x + dx, y + dy, z + dz);
                smooth /= 27.0;

                double intensity = 0.1 + 0.3 * (1.0 - rn2) + params.texture_amplitude * smooth;
                int label = 1;
                for (const auto& t : tumors) {
                    const double d = std::sqrt((x - t.x) * (x - t.x) + (y - t.y) * (y - t.y) +
                                               (z - t.z) * (z - t.z));
                    if (d <= t.r) {
                        label = 2;
                        intensity = 0.55 + params.texture_amplitude * smooth;
                        if (d >= 0.7 * t.r) intensity += params.ring_contrast;  // ring enhancement
                        break;
                    }
                    if (d <= 1.4 * t.r) intensity -= 0.2;  // peritumoral darkening
                }
                c.labels.at(x, y, z) = label;
                c.image.at(0, x, y, z) = static_cast<float>(std::clamp(intensity, -1.0, 1.0));
            }
    return c;
}

namespace {

std::pair<float, float> percentile_bounds(const std::vector<float>& data, double lo_q,
                                          double hi_q) {
    std::vector<float> sorted = data;
    std::sort(sorted.begin(), sorted.end());
    auto at_q = [&](double q) {
        const std::size_t i =
            std::min(sorted.size() - 1, static_cast<std::size_t>(q * (sorted.size() - 1) + 0.5));
        return sorted[i];
    };
    float lo = at_q(lo_q), hi = at_q(hi_q);
    if (!(lo < hi)) {
        lo = sorted.front();
        hi = sorted.back();
    }
    if (!(lo < hi)) hi = lo + 1.0f;
    return {lo, hi};
}

}  // namespace

Case preprocess(const Volume& image, const LabelVolume& labels, Dims target,
                const std::string& id) {
    if (!(image.dims() == labels.dims()))
        throw DataError("preprocess: image dims " + image.dims().str() + " vs labels " +
                        labels.dims().str());
    const int side = std::max({image.width(), image.height(), image.depth()});
    const Dims cube{side, side, side};

    Volume img = crop_or_pad(image, cube, -1.0f);
    LabelVolume lbl = crop_or_pad(labels, cube, 0);
    img = resize(img, target, ResizeMode::Trilinear);
    lbl = resize_labels(lbl, target);

    const auto [lo, hi] = percentile_bounds(img.data(), 0.005, 0.995);
    Case c;
    c.image = rescale_intensity(img, lo, hi);
    c.labels = std::move(lbl);
    c.id = id;
    return c;
}

LabelVolume remap_labels(const LabelVolume& labels, const std::map<int, int>& mapping,
                         const std::optional<BrainThreshold>& brain, const Volume* reference) {
    LabelVolume out(labels.dims());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int l = labels.labels()[i];
        const auto it = mapping.find(l);
        if (it == mapping.end())
            throw DataError("remap_labels: unmapped label " + std::to_string(l) + " at voxel " +
                            std::to_string(i));
        out.labels()[i] = it->second;
    }
    if (brain) {
        if (!reference) throw DataError("remap_labels: brain threshold needs a reference volume");
        if (!(reference->dims() == labels.dims()))
            throw DataError("remap_labels: reference dims mismatch");
        if (brain->source_channel < 0 || brain->source_channel >= reference->channels())
            throw DataError("remap_labels: reference channel out of range");
        const std::size_t n = labels.size();
        const float* ref = reference->data().data() + brain->source_channel * n;
        for (std::size_t i = 0; i < n; ++i)
            if (ref[i] > brain->threshold && out.labels()[i] != brain->tumor_label &&
                out.labels()[i] != 0)
                out.labels()[i] = brain->brain_label;
    }
    return out;
}

std::vector<std::string> read_manifest(const std::string& dir) {
    const std::string path = dir + "/manifest.txt";
    std::ifstream is(path);
    if (!is) throw DataError("manifest: cannot open " + path);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        ids.push_back(line);
    }
    return ids;
}

void write_manifest(const std::string& dir, const std::vector<std::string>& ids) {
    std::filesystem::create_directories(dir);
    std::ofstream os(dir + "/manifest.txt");
    if (!os) throw DataError("manifest: cannot write in " + dir);
    for (const auto& id : ids) os << id << "\n";
}

Case load_case(const std::string& dir, const std::string& id) {
    Case c;
    c.image = read_v3d(dir + "/case_" + id + "_img.v3d");
    c.labels = read_labels_v3d(dir + "/case_" + id + "_lbl.v3d");
    c.id = id;
    return c;
}

void save_case(const std::string& dir, const Case& c) {
    std::filesystem::create_directories(dir);
    write_v3d(c.image, dir + "/case_" + c.id + "_img.v3d");
    write_labels_v3d(c.labels, dir + "/case_" + c.id + "_lbl.v3d");
}

}  // namespace voxdiff
