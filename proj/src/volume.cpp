#include "voxdiff/volume.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace voxdiff {

namespace {

void require_positive(Dims d, const char* what) {
    if (d.width <= 0 || d.height <= 0 || d.depth <= 0)
        throw DataError(std::string(what) + ": non-positive dims " + d.str());
}

std::size_t linear_index(Dims d, int c, int x, int y, int z) {
    return ((static_cast<std::size_t>(c) * d.depth + z) * d.height + y) * d.width + x;
}

}  // namespace

std::string Dims::str() const {
    std::ostringstream os;
    os << width << "x" << height << "x" << depth;
    return os.str();
}

Volume::Volume(int channels, Dims dims, float fill) : channels_(channels), dims_(dims) {
    if (channels <= 0) throw DataError("Volume: non-positive channel count");
    require_positive(dims, "Volume");
    data_.assign(static_cast<std::size_t>(channels) * dims.width * dims.height * dims.depth, fill);
}

std::size_t Volume::voxels_per_channel() const {
    return static_cast<std::size_t>(dims_.width) * dims_.height * dims_.depth;
}

float& Volume::at(int c, int x, int y, int z) { return data_[linear_index(dims_, c, x, y, z)]; }
float Volume::at(int c, int x, int y, int z) const { return data_[linear_index(dims_, c, x, y, z)]; }

void Volume::check_finite(const std::string& context) const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(data_[i]))
            throw NumericError(context + ": non-finite voxel at flat index " + std::to_string(i));
    }
}

LabelVolume::LabelVolume(Dims dims, int fill) : dims_(dims) {
    require_positive(dims, "LabelVolume");
    labels_.assign(static_cast<std::size_t>(dims.width) * dims.height * dims.depth, fill);
}

int& LabelVolume::at(int x, int y, int z) { return labels_[linear_index(dims_, 0, x, y, z)]; }
int LabelVolume::at(int x, int y, int z) const { return labels_[linear_index(dims_, 0, x, y, z)]; }

Volume one_hot_encode(const LabelVolume& labels, int num_classes, bool exclude_background) {
    if (num_classes < 2) throw DataError("one_hot_encode: num_classes must be >= 2");
    const int out_channels = exclude_background ? num_classes - 1 : num_classes;
    Volume out(out_channels, labels.dims(), 0.0f);
    const std::size_t n = labels.size();
    for (std::size_t i = 0; i < n; ++i) {
        const int label = labels.labels()[i];
        if (label < 0 || label >= num_classes)
            throw DataError("one_hot_encode: label " + std::to_string(label) +
                            " out of range at voxel " + std::to_string(i));
        const int channel = exclude_background ? label - 1 : label;
        if (channel >= 0) out.data()[channel * n + i] = 1.0f;
    }
    return out;
}

LabelVolume decode_one_hot(const Volume& mask) {
    LabelVolume out(mask.dims(), 0);
    const std::size_t n = mask.voxels_per_channel();
    for (std::size_t i = 0; i < n; ++i) {
        int hot = -1;
        for (int c = 0; c < mask.channels(); ++c) {
            const float value = mask.data()[c * n + i];
            if (value == 1.0f) {
                if (hot >= 0)
                    throw DataError("decode_one_hot: multiple hot channels at voxel " +
                                    std::to_string(i));
                hot = c;
            } else if (value != 0.0f) {
                throw DataError("decode_one_hot: non-{0,1} value at voxel " + std::to_string(i));
            }
        }
        out.labels()[i] = hot + 1;  // background when no channel is hot
    }
    return out;
}

Volume concat_channels(const Volume& a, const Volume& b) {
    if (!(a.dims() == b.dims()))
        throw DataError("concat_channels: spatial mismatch " + a.dims().str() + " vs " +
                        b.dims().str());
    Volume out(a.channels() + b.channels(), a.dims());
    std::copy(a.data().begin(), a.data().end(), out.data().begin());
    std::copy(b.data().begin(), b.data().end(), out.data().begin() + a.data().size());
    return out;
}

Volume slice_channels(const Volume& v, int first, int count) {
    if (first < 0 || count <= 0 || first + count > v.channels())
        throw DataError("slice_channels: range [" + std::to_string(first) + ", " +
                        std::to_string(first + count) + ") out of " +
                        std::to_string(v.channels()) + " channels");
    Volume out(count, v.dims());
    const std::size_t n = v.voxels_per_channel();
    std::copy(v.data().begin() + first * n, v.data().begin() + (first + count) * n,
              out.data().begin());
    return out;
}

Volume rescale_intensity(const Volume& v, float src_lo, float src_hi) {
    if (!(src_lo < src_hi)) throw DataError("rescale_intensity: degenerate source range");
    Volume out(v.channels(), v.dims());
    const double scale = 2.0 / (static_cast<double>(src_hi) - src_lo);
    for (std::size_t i = 0; i < v.size(); ++i) {
        double y = (static_cast<double>(v.data()[i]) - src_lo) * scale - 1.0;
        out.data()[i] = static_cast<float>(std::clamp(y, -1.0, 1.0));
    }
    return out;
}

namespace {

// Start offset of the copied region along one axis: non-negative for the
// source when cropping, for the destination when padding.
void axis_copy_range(int src, int dst, int& src_start, int& dst_start, int& count) {
    if (src >= dst) {
        src_start = (src - dst) / 2;
        dst_start = 0;
        count = dst;
    } else {
        src_start = 0;
        dst_start = (dst - src) / 2;
        count = src;
    }
}

template <typename VolT, typename Scalar>
VolT crop_or_pad_impl(const VolT& v, int channels, Dims target, Scalar pad_value) {
    int sx, dx, nx, sy, dy, ny, sz, dz, nz;
    axis_copy_range(v.width(), target.width, sx, dx, nx);
    axis_copy_range(v.height(), target.height, sy, dy, ny);
    axis_copy_range(v.depth(), target.depth, sz, dz, nz);

    VolT out = [&] {
        if constexpr (std::is_same_v<VolT, Volume>)
            return Volume(channels, target, pad_value);
        else
            return LabelVolume(target, pad_value);
    }();
    for (int c = 0; c < channels; ++c)
        for (int z = 0; z < nz; ++z)
            for (int y = 0; y < ny; ++y)
                for (int x = 0; x < nx; ++x) {
                    if constexpr (std::is_same_v<VolT, Volume>)
                        out.at(c, dx + x, dy + y, dz + z) = v.at(c, sx + x, sy + y, sz + z);
                    else
                        out.at(dx + x, dy + y, dz + z) = v.at(sx + x, sy + y, sz + z);
                }
    return out;
}

}  // namespace

Volume crop_or_pad(const Volume& v, Dims target, float pad_value) {
    require_positive(target, "crop_or_pad");
    return crop_or_pad_impl<Volume, float>(v, v.channels(), target, pad_value);
}

LabelVolume crop_or_pad(const LabelVolume& v, Dims target, int pad_value) {
    require_positive(target, "crop_or_pad");
    return crop_or_pad_impl<LabelVolume, int>(v, 1, target, pad_value);
}

namespace {

// Align-corners-false source coordinate for output index i.
double src_coord(int i, int dst_n, int src_n) {
    return (i + 0.5) * static_cast<double>(src_n) / dst_n - 0.5;
}

}  // namespace

Volume resize(const Volume& v, Dims target, ResizeMode mode) {
    require_positive(target, "resize");
    if (target == v.dims()) return v;
    Volume out(v.channels(), target);
    for (int c = 0; c < v.channels(); ++c)
        for (int z = 0; z < target.depth; ++z)
            for (int y = 0; y < target.height; ++y)
                for (int x = 0; x < target.width; ++x) {
                    const double fx = src_coord(x, target.width, v.width());
                    const double fy = src_coord(y, target.height, v.height());
                    const double fz = src_coord(z, target.depth, v.depth());
                    if (mode == ResizeMode::Nearest) {
                        const int nx = std::clamp(static_cast<int>(std::lround(fx)), 0, v.width() - 1);
                        const int ny = std::clamp(static_cast<int>(std::lround(fy)), 0, v.height() - 1);
                        const int nz = std::clamp(static_cast<int>(std::lround(fz)), 0, v.depth() - 1);
                        out.at(c, x, y, z) = v.at(c, nx, ny, nz);
                        continue;
                    }
                    const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, v.width() - 1);
                    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, v.height() - 1);
                    const int z0 = std::clamp(static_cast<int>(std::floor(fz)), 0, v.depth() - 1);
                    const int x1 = std::min(x0 + 1, v.width() - 1);
                    const int y1 = std::min(y0 + 1, v.height() - 1);
                    const int z1 = std::min(z0 + 1, v.depth() - 1);
                    const double wx = std::clamp(fx - x0, 0.0, 1.0);
                    const double wy = std::clamp(fy - y0, 0.0, 1.0);
                    const double wz = std::clamp(fz - z0, 0.0, 1.0);
                    double acc = 0.0;
                    for (int dz2 = 0; dz2 <= 1; ++dz2)
                        for (int dy2 = 0; dy2 <= 1; ++dy2)
                            for (int dx2 = 0; dx2 <= 1; ++dx2) {
                                const double w = (dx2 ? wx : 1.0 - wx) * (dy2 ? wy : 1.0 - wy) *
                                                 (dz2 ? wz : 1.0 - wz);
                                acc += w * v.at(c, dx2 ? x1 : x0, dy2 ? y1 : y0, dz2 ? z1 : z0);
                            }
                    out.at(c, x, y, z) = static_cast<float>(acc);
                }
    return out;
}

LabelVolume resize_labels(const LabelVolume& v, Dims target) {
    require_positive(target, "resize_labels");
    if (target == v.dims()) return v;
    LabelVolume out(target);
    for (int z = 0; z < target.depth; ++z)
        for (int y = 0; y < target.height; ++y)
            for (int x = 0; x < target.width; ++x) {
                const int nx = std::clamp(
                    static_cast<int>(std::lround(src_coord(x, target.width, v.width()))), 0,
                    v.width() - 1);
                const int ny = std::clamp(
                    static_cast<int>(std::lround(src_coord(y, target.height, v.height()))), 0,
                    v.height() - 1);
                const int nz = std::clamp(
                    static_cast<int>(std::lround(src_coord(z, target.depth, v.depth()))), 0,
                    v.depth() - 1);
                out.at(x, y, z) = v.at(nx, ny, nz);
            }
    return out;
}

}  // namespace voxdiff
