#include "voxdiff/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace voxdiff {

double mse(const Volume& a, const Volume& b) {
    if (!a.same_shape(b)) throw DataError("mse: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - b.data()[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

namespace {

double sq_dist(const Volume& a, const Volume& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - b.data()[i];
        acc += d * d;
    }
    return acc;
}

}  // namespace

double mmd(const std::vector<Volume>& set_a, const std::vector<Volume>& set_b,
           const MmdOptions& opts) {
    if (set_a.empty() || set_b.empty()) throw DataError("mmd: empty sample set");
    const std::size_t m = set_a.size(), n = set_b.size();
    std::vector<const Volume*> pooled;
    for (const auto& v : set_a) pooled.push_back(&v);
    for (const auto& v : set_b) pooled.push_back(&v);
    for (const auto* v : pooled)
        if (!v->same_shape(*pooled[0])) throw DataError("mmd: inconsistent volume shapes");

    double h = opts.bandwidth;
    if (h <= 0.0) {
        std::vector<double> dists;
        for (std::size_t i = 0; i < pooled.size(); ++i)
            for (std::size_t j = i + 1; j < pooled.size(); ++j)
                dists.push_back(std::sqrt(sq_dist(*pooled[i], *pooled[j])));
        std::sort(dists.begin(), dists.end());
        h = dists.empty() ? 0.0
                          : (dists.size() % 2 ? dists[dists.size() / 2]
                                              : 0.5 * (dists[dists.size() / 2 - 1] +
                                                       dists[dists.size() / 2]));
        if (h <= 0.0) {
            std::cerr << "mmd: degenerate pooled set, falling back to bandwidth 1\n";
            h = 1.0;
        }
    }
    const double gamma = 1.0 / (2.0 * h * h);
    auto kernel = [&](const Volume& a, const Volume& b) { return std::exp(-gamma * sq_dist(a, b)); };

    double kaa = 0.0, kbb = 0.0, kab = 0.0;
    if (opts.biased) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) kaa += kernel(set_a[i], set_a[j]);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) kbb += kernel(set_b[i], set_b[j]);
        kaa /= static_cast<double>(m) * m;
        kbb /= static_cast<double>(n) * n;
    } else {
        if (m < 2 || n < 2) throw DataError("mmd: unbiased estimator needs >= 2 samples per set");
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j)
                if (i != j) kaa += kernel(set_a[i], set_a[j]);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) kbb += kernel(set_b[i], set_b[j]);
        kaa /= static_cast<double>(m) * (m - 1);
        kbb /= static_cast<double>(n) * (n - 1);
    }
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) kab += kernel(set_a[i], set_b[j]);
    kab /= static_cast<double>(m) * n;
    return kaa + kbb - 2.0 * kab;
}

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(size);
    const double center = (size - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        w[i] = std::exp(-0.5 * std::pow((i - center) / sigma, 2));
        sum += w[i];
    }
    for (auto& x : w) x /= sum;
    return w;
}

// Separable Gaussian filter with border renormalization (single channel).
struct Field {
    Dims dims;
    std::vector<double> data;
    double& at(int x, int y, int z) {
        return data[(static_cast<std::size_t>(z) * dims.height + y) * dims.width + x];
    }
    double at(int x, int y, int z) const {
        return data[(static_cast<std::size_t>(z) * dims.height + y) * dims.width + x];
    }
};

Field filter_axis(const Field& f, const std::vector<double>& w, int axis) {
    const int r = static_cast<int>(w.size()) / 2;
    Field out{f.dims, std::vector<double>(f.data.size(), 0.0)};
    const int nx = f.dims.width, ny = f.dims.height, nz = f.dims.depth;
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                double acc = 0.0, wsum = 0.0;
                for (int k = -r; k <= r; ++k) {
                    int xx = x, yy = y, zz = z;
                    (axis == 0 ? xx : axis == 1 ? yy : zz) += k;
                    if (xx < 0 || xx >= nx || yy < 0 || yy >= ny || zz < 0 || zz >= nz) continue;
                    const double wk = w[k + r];
                    acc += wk * f.at(xx, yy, zz);
                    wsum += wk;
                }
                out.at(x, y, z) = acc / wsum;
            }
    return out;
}

Field gauss_filter(const Field& f, const std::vector<double>& w) {
    return filter_axis(filter_axis(filter_axis(f, w, 0), w, 1), w, 2);
}

Field downsample2(const Field& f) {
    Dims d{f.dims.width / 2, f.dims.height / 2, f.dims.depth / 2};
    Field out{d, std::vector<double>(static_cast<std::size_t>(d.width) * d.height * d.depth)};
    for (int z = 0; z < d.depth; ++z)
        for (int y = 0; y < d.height; ++y)
            for (int x = 0; x < d.width; ++x) {
                double acc = 0.0;
                for (int dz = 0; dz < 2; ++dz)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            acc += f.at(2 * x + dx, 2 * y + dy, 2 * z + dz);
                out.at(x, y, z) = acc / 8.0;
            }
    return out;
}

struct SsimTerms {
    double luminance_cs;  // full SSIM mean (luminance * contrast-structure)
    double cs;            // contrast-structure mean only
};

SsimTerms ssim_scale(const Field& a, const Field& b, const std::vector<double>& w) {
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    Field mu_a = gauss_filter(a, w), mu_b = gauss_filter(b, w);
    Field aa = a, bb = b, ab = a;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        aa.data[i] = a.data[i] * a.data[i];
        bb.data[i] = b.data[i] * b.data[i];
        ab.data[i] = a.data[i] * b.data[i];
    }
    Field s_aa = gauss_filter(aa, w), s_bb = gauss_filter(bb, w), s_ab = gauss_filter(ab, w);
    double ssim_sum = 0.0, cs_sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double ma = mu_a.data[i], mb = mu_b.data[i];
        const double va = s_aa.data[i] - ma * ma;
        const double vb = s_bb.data[i] - mb * mb;
        const double cov = s_ab.data[i] - ma * mb;
        const double lum = (2.0 * ma * mb + kC1) / (ma * ma + mb * mb + kC1);
        const double cs = (2.0 * cov + kC2) / (va + vb + kC2);
        ssim_sum += lum * cs;
        cs_sum += cs;
    }
    const double n = static_cast<double>(a.data.size());
    return {ssim_sum / n, cs_sum / n};
}

}  // namespace

double ms_ssim_3d(const Volume& a, const Volume& b, const MsSsimOptions& opts) {
    if (a.channels() != 1 || b.channels() != 1)
        throw DataError("ms_ssim_3d: single-channel volumes only");
    if (!a.same_shape(b)) throw DataError("ms_ssim_3d: shape mismatch");
    if (!(opts.data_lo < opts.data_hi)) throw DataError("ms_ssim_3d: bad data range");

    const int min_dim = std::min({a.width(), a.height(), a.depth()});
    int scales = std::min(opts.max_scales, 5);
    while (scales > 1 && (min_dim >> (scales - 1)) < opts.window) --scales;
    if (min_dim < opts.window)
        throw DataError("ms_ssim_3d: volume " + a.dims().str() + " too small for window " +
                        std::to_string(opts.window));
    if (opts.scales_used) *opts.scales_used = scales;

    static constexpr double kWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    double weight_sum = 0.0;
    for (int i = 0; i < scales; ++i) weight_sum += kWeights[i];

    auto to_field = [&](const Volume& v) {
        Field f{v.dims(), std::vector<double>(v.size())};
        const double scale = 1.0 / (opts.data_hi - opts.data_lo);
        for (std::size_t i = 0; i < v.size(); ++i)
            f.data[i] = std::clamp((v.data()[i] - opts.data_lo) * scale, 0.0, 1.0);
        return f;
    };
    Field fa = to_field(a), fb = to_field(b);
    const std::vector<double> w = gaussian_window(opts.window, opts.window_sigma);

    double score = 1.0;
    for (int sc = 0; sc < scales; ++sc) {
        const SsimTerms terms = ssim_scale(fa, fb, w);
        const double weight = kWeights[sc] / weight_sum;
        // clamp to avoid NaN from pow on slightly negative cs means
        const double cs = std::max(terms.cs, 0.0);
        score *= std::pow(sc == scales - 1 ? std::max(terms.luminance_cs, 0.0) : cs, weight);
        if (sc < scales - 1) {
            fa = downsample2(fa);
            fb = downsample2(fb);
        }
    }
    return score;
}

Volume histogram_equalize(const Volume& v, int bins) {
    if (bins < 2) throw DataError("histogram_equalize: bins must be >= 2");
    const auto [lo_it, hi_it] = std::minmax_element(v.data().begin(), v.data().end());
    const double lo = *lo_it, hi = *hi_it;
    Volume out(v.channels(), v.dims());
    if (hi <= lo) {
        std::fill(out.data().begin(), out.data().end(), 1.0f);
        return out;
    }
    std::vector<double> counts(bins, 0.0);
    const double scale = bins / (hi - lo);
    auto bin_of = [&](float x) {
        return std::min(bins - 1, static_cast<int>((x - lo) * scale));
    };
    for (float x : v.data()) counts[bin_of(x)] += 1.0;
    std::vector<double> cdf(bins);
    double acc = 0.0;
    for (int i = 0; i < bins; ++i) {
        acc += counts[i];
        cdf[i] = acc / static_cast<double>(v.size());
    }
    for (std::size_t i = 0; i < v.size(); ++i)
        out.data()[i] = static_cast<float>(cdf[bin_of(v.data()[i])]);
    return out;
}

std::string RandomProjectionExtractor::name() const {
    return "random-projection-v1-seed" + std::to_string(seed_) + "-d" + std::to_string(out_dim_);
}

std::vector<double> RandomProjectionExtractor::extract(const Volume& v) const {
    std::vector<double> out(out_dim_, 0.0);
    const double norm = 1.0 / std::sqrt(static_cast<double>(v.size()));
    for (int d = 0; d < out_dim_; ++d) {
        // one deterministic stream per output row, independent of call order
        Rng row_rng = Rng::derive(seed_, (static_cast<std::uint64_t>(d) << 32) ^ v.size());
        double acc = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) acc += row_rng.normal() * v.data()[i];
        out[d] = acc * norm;
    }
    return out;
}

double frechet_distance(const std::vector<std::vector<double>>& feats_a,
                        const std::vector<std::vector<double>>& feats_b, double* clamp_total) {
    if (feats_a.size() < 2 || feats_b.size() < 2)
        throw DataError("frechet_distance: need >= 2 feature vectors per side");
    const int dim = static_cast<int>(feats_a[0].size());
    for (const auto* side : {&feats_a, &feats_b})
        for (const auto& f : *side)
            if (static_cast<int>(f.size()) != dim)
                throw DataError("frechet_distance: feature dimension mismatch");

    auto stats = [&](const std::vector<std::vector<double>>& feats) {
        const int n = static_cast<int>(feats.size());
        Eigen::MatrixXd x(n, dim);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < dim; ++j) x(i, j) = feats[i][j];
        Eigen::VectorXd mu = x.colwise().mean();
        Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
        Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
        return std::make_pair(mu, cov);
    };
    auto [mu_a, cov_a] = stats(feats_a);
    auto [mu_b, cov_b] = stats(feats_b);

    double clamped = 0.0;
    auto psd_sqrt = [&](const Eigen::MatrixXd& m) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
        Eigen::VectorXd ev = es.eigenvalues();
        for (int i = 0; i < ev.size(); ++i)
            if (ev(i) < 0.0) {
                clamped += -ev(i);
                ev(i) = 0.0;
            }
        return Eigen::MatrixXd(es.eigenvectors() * ev.cwiseSqrt().asDiagonal() *
                               es.eigenvectors().transpose());
    };

    // tr((Ca Cb)^(1/2)) = tr(sqrt(sqrt(Ca) Cb sqrt(Ca))), symmetric route
    const Eigen::MatrixXd root_a = psd_sqrt(cov_a);
    const Eigen::MatrixXd inner = root_a * cov_b * root_a;
    const Eigen::MatrixXd sym_inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym_inner);
    double tr_sqrt = 0.0;
    for (int i = 0; i < es.eigenvalues().size(); ++i) {
        const double ev = es.eigenvalues()(i);
        if (ev < 0.0)
            clamped += -ev;
        else
            tr_sqrt += std::sqrt(ev);
    }
    if (clamp_total) *clamp_total = clamped;

    const double mean_term = (mu_a - mu_b).squaredNorm();
    return mean_term + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
}

SegScores seg_metrics(const LabelVolume& pred, const LabelVolume& truth) {
    if (!(pred.dims() == truth.dims())) throw DataError("seg_metrics: shape mismatch");
    long tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const int p = pred.labels()[i], t = truth.labels()[i];
        if ((p != 0 && p != 1) || (t != 0 && t != 1))
            throw DataError("seg_metrics: non-binary label at voxel " + std::to_string(i));
        if (p && t)
            ++tp;
        else if (p && !t)
            ++fp;
        else if (!p && t)
            ++fn;
        else
            ++tn;
    }
    SegScores s{};
    s.accuracy = static_cast<double>(tp + tn) / static_cast<double>(tp + tn + fp + fn);
    if (tp + fp + fn == 0) {  // empty vs empty
        s.dice = s.iou = s.recall = s.precision = 1.0;
        return s;
    }
    s.dice = 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
    s.iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    s.recall = tp + fn ? static_cast<double>(tp) / (tp + fn) : 1.0;
    s.precision = tp + fp ? static_cast<double>(tp) / (tp + fp) : 1.0;
    return s;
}

double MetricReport::mean(const std::string& metric) const {
    const auto& v = values_.at(metric);
    if (v.empty()) throw DataError("report: no values for " + metric);
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
}

double MetricReport::stddev(const std::string& metric) const {
    const auto& v = values_.at(metric);
    const double m = mean(metric);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size()));
}

std::string MetricReport::table_text() const {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    os << "case";
    for (const auto& [metric, _] : values_) os << "\t" << metric;
    os << "\n";
    for (std::size_t i = 0; i < case_ids_.size(); ++i) {
        os << case_ids_[i];
        for (const auto& [metric, vals] : values_)
            os << "\t" << (i < vals.size() ? std::to_string(vals[i]) : "-");
        os << "\n";
    }
    os << "mean±std";
    for (const auto& [metric, _] : values_)
        os << "\t" << mean(metric) << "±" << stddev(metric);
    os << "\n";
    for (const auto& [metric, value] : scalars_) os << metric << "\t" << value << "\n";
    for (const auto& [key, value] : notes_) os << "# " << key << " = " << value << "\n";
    return os.str();
}

std::string MetricReport::kv_text() const {
    std::ostringstream os;
    os.precision(17);
    for (const auto& [metric, vals] : values_) {
        for (std::size_t i = 0; i < vals.size(); ++i)
            os << metric << ".case." << case_ids_[i] << "=" << vals[i] << "\n";
        os << metric << ".mean=" << mean(metric) << "\n";
        os << metric << ".std=" << stddev(metric) << "\n";
    }
    for (const auto& [metric, value] : scalars_) os << metric << "=" << value << "\n";
    for (const auto& [key, value] : notes_) os << "note." << key << "=" << value << "\n";
    return os.str();
}

void MetricReport::write(const std::string& table_path, const std::string& kv_path) const {
    std::ofstream table(table_path);
    if (!table) throw DataError("report: cannot write " + table_path);
    table << table_text();
    std::ofstream kv(kv_path);
    if (!kv) throw DataError("report: cannot write " + kv_path);
    kv << kv_text();
}

}  // namespace voxdiff
