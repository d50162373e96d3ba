#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxdiff/errors.hpp"

namespace voxdiff {

struct Dims {
    int width = 0;
    int height = 0;
    int depth = 0;

    bool operator==(const Dims&) const = default;
    std::string str() const;
};

// Dense C-channel voxel grid. Canonical layout: channel-major, x fastest,
// index = ((c*depth + z)*height + y)*width + x.
class Volume {
  public:
    Volume() = default;
    Volume(int channels, Dims dims, float fill = 0.0f);

    int channels() const { return channels_; }
    Dims dims() const { return dims_; }
    int width() const { return dims_.width; }
    int height() const { return dims_.height; }
    int depth() const { return dims_.depth; }
    std::size_t voxels_per_channel() const;
    std::size_t size() const { return data_.size(); }

    float& at(int c, int x, int y, int z);
    float at(int c, int x, int y, int z) const;

    std::vector<float>& data() { return data_; }
    const std::vector<float>& data() const { return data_; }

    // Throws NumericError naming the first non-finite voxel.
    void check_finite(const std::string& context) const;

    bool same_shape(const Volume& other) const {
        return channels_ == other.channels_ && dims_ == other.dims_;
    }

  private:
    int channels_ = 0;
    Dims dims_;
    std::vector<float> data_;
};

// Integer class labels over the same grid layout (single channel).
class LabelVolume {
  public:
    LabelVolume() = default;
    LabelVolume(Dims dims, int fill = 0);

    Dims dims() const { return dims_; }
    int width() const { return dims_.width; }
    int height() const { return dims_.height; }
    int depth() const { return dims_.depth; }
    std::size_t size() const { return labels_.size(); }

    int& at(int x, int y, int z);
    int at(int x, int y, int z) const;

    std::vector<int>& labels() { return labels_; }
    const std::vector<int>& labels() const { return labels_; }
    std::vector<int>& data() { return labels_; }
    const std::vector<int>& data() const { return labels_; }

    bool operator==(const LabelVolume&) const = default;

  private:
    Dims dims_;
    std::vector<int> labels_;
};

enum class ResizeMode { Trilinear, Nearest };

// Mask encoding. With exclude_background, channel k marks label k+1.
Volume one_hot_encode(const LabelVolume& labels, int num_classes, bool exclude_background);
LabelVolume decode_one_hot(const Volume& mask);

// Channel-wise concatenation, a's channels first.
Volume concat_channels(const Volume& a, const Volume& b);

// Returns channels [first, first+count) as a new volume.
Volume slice_channels(const Volume& v, int first, int count);

// Affine map of [src_lo, src_hi] onto [-1, 1]; out-of-range inputs clamp.
Volume rescale_intensity(const Volume& v, float src_lo, float src_hi);

// Center crop/pad per axis; pad regions filled with pad_value.
Volume crop_or_pad(const Volume& v, Dims target, float pad_value);
LabelVolume crop_or_pad(const LabelVolume& v, Dims target, int pad_value);

Volume resize(const Volume& v, Dims target, ResizeMode mode);
LabelVolume resize_labels(const LabelVolume& v, Dims target);

}  // namespace voxdiff
