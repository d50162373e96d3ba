#include "voxdiff/config.hpp"

#include <fstream>
#include <sstream>

namespace voxdiff {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ','))
        if (!trim(tok).empty()) out.push_back(std::stoi(trim(tok)));
    return out;
}

std::string fmt_int_list(const std::vector<int>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
    return s;
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::string fmt_lr_stages(const std::vector<std::pair<long, double>>& stages) {
    std::string s;
    for (std::size_t i = 0; i < stages.size(); ++i)
        s += (i ? "," : "") + std::to_string(stages[i].first) + ":" + fmt_double(stages[i].second);
    return s;
}

std::vector<std::pair<long, double>> parse_lr_stages(const std::string& s) {
    std::vector<std::pair<long, double>> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        const auto colon = tok.find(':');
        if (colon == std::string::npos)
            throw ConfigError("config: lr stage must be threshold:rate, got " + tok);
        out.emplace_back(std::stol(tok.substr(0, colon)), std::stod(tok.substr(colon + 1)));
    }
    return out;
}

}  // namespace

RunConfig RunConfig::preset(const std::string& name) {
    RunConfig cfg;
    if (name == "desk" || name.empty()) {
        // defaults are the desk preset: 16^3, base 8, attention at the
        // coarsest level, short schedule-preserving training budget
        cfg.model.input_size = Dims{16, 16, 16};
        cfg.phantom.grid = Dims{16, 16, 16};
        cfg.seg.input = Dims{16, 16, 16};
        cfg.train.total_steps = 3000;
        cfg.train.lr_stages = {{0, 3e-4}};
        return cfg;
    }
    if (name == "paper") {
        // documentation-grade record of the paper-scale hyperparameters;
        // not sized for desktop CPU runs
        cfg.model.image_channels = 1;
        cfg.model.mask_channels = 2;
        cfg.model.base_channels = 64;
        cfg.model.channel_multipliers = {1, 2, 4, 8};
        cfg.model.attention_levels = {3};  // resolution 16 for 128^3 input
        cfg.model.input_size = Dims{128, 128, 128};
        cfg.model.num_res_blocks = 2;
        cfg.phantom.grid = Dims{128, 128, 128};
        cfg.seg.input = Dims{128, 128, 128};
        cfg.seg.base_channels = 16;
        cfg.train.total_steps = 100000;
        cfg.train.lr_stages = {{0, 1e-5}, {50000, 1e-6}};
        cfg.train.schedule_T = 250;
        cfg.train.schedule_s = 0.008;
        cfg.train.batch_size = 1;
        return cfg;
    }
    throw ConfigError("config: unknown preset '" + name + "' (expected desk or paper)");
}

void RunConfig::apply_line(const std::string& section, const std::string& key,
                           const std::string& value) {
    const std::string full = section + "." + key;
    try {
        if (full == "run.seed") {
            seed = std::stoull(value);
            train.seed = seed;
            phantom.seed = seed;
            seg.seed = seed;
        } else if (full == "schedule.T")
            train.schedule_T = std::stoi(value);
        else if (full == "schedule.s")
            train.schedule_s = std::stod(value);
        else if (full == "model.image_channels")
            model.image_channels = std::stoi(value);
        else if (full == "model.mask_channels")
            model.mask_channels = std::stoi(value);
        else if (full == "model.base_channels")
            model.base_channels = std::stoi(value);
        else if (full == "model.channel_multipliers")
            model.channel_multipliers = parse_int_list(value);
        else if (full == "model.attention_levels") {
            auto levels = parse_int_list(value);
            model.attention_levels = std::set<int>(levels.begin(), levels.end());
        } else if (full == "model.attention_heads")
            model.attention_heads = std::stoi(value);
        else if (full == "model.groupnorm_groups")
            model.groupnorm_groups = std::stoi(value);
        else if (full == "model.time_embed_dim")
            model.time_embed_dim = std::stoi(value);
        else if (full == "model.num_res_blocks")
            model.num_res_blocks = std::stoi(value);
        else if (full == "model.input_size") {
            const auto d = parse_int_list(value);
            if (d.size() != 3) throw ConfigError("model.input_size needs 3 values");
            model.input_size = Dims{d[0], d[1], d[2]};
        } else if (full == "train.total_steps")
            train.total_steps = std::stol(value);
        else if (full == "train.batch_size")
            train.batch_size = std::stoi(value);
        else if (full == "train.lr_stages")
            train.lr_stages = parse_lr_stages(value);
        else if (full == "train.beta1")
            train.beta1 = std::stod(value);
        else if (full == "train.beta2")
            train.beta2 = std::stod(value);
        else if (full == "train.adam_eps")
            train.adam_eps = std::stod(value);
        else if (full == "train.loss") {
            if (value != "l1" && value != "l2") throw ConfigError("train.loss must be l1 or l2");
            train.loss = value == "l2" ? LossKind::L2 : LossKind::L1;
        } else if (full == "train.checkpoint_every")
            train.checkpoint_every = std::stol(value);
        else if (full == "train.grad_clip")
            train.grad_clip = std::stod(value);
        else if (full == "sample.clamp_output")
            sample.clamp_output = value == "true" || value == "1";
        else if (full == "sample.clamp_x0")
            sample.clamp_x0 = value == "true" || value == "1";
        else if (full == "phantom.grid") {
            const auto d = parse_int_list(value);
            if (d.size() != 3) throw ConfigError("phantom.grid needs 3 values");
            phantom.grid = Dims{d[0], d[1], d[2]};
        } else if (full == "phantom.head_axis_lo")
            phantom.head_axis_lo = std::stod(value);
        else if (full == "phantom.head_axis_hi")
            phantom.head_axis_hi = std::stod(value);
        else if (full == "phantom.tumor_radius_lo")
            phantom.tumor_radius_lo = std::stod(value);
        else if (full == "phantom.tumor_radius_hi")
            phantom.tumor_radius_hi = std::stod(value);
        else if (full == "phantom.tumor_count_lo")
            phantom.tumor_count_lo = std::stoi(value);
        else if (full == "phantom.tumor_count_hi")
            phantom.tumor_count_hi = std::stoi(value);
        else if (full == "phantom.texture_amplitude")
            phantom.texture_amplitude = std::stod(value);
        else if (full == "phantom.ring_contrast")
            phantom.ring_contrast = std::stod(value);
        else if (full == "seg.total_steps")
            seg.total_steps = std::stol(value);
        else if (full == "seg.batch_size")
            seg.batch_size = std::stoi(value);
        else if (full == "seg.learning_rate")
            seg.learning_rate = std::stod(value);
        else if (full == "seg.threshold")
            seg.threshold = std::stod(value);
        else if (full == "seg.base_channels")
            seg.base_channels = std::stoi(value);
        else if (full == "seg.channel_multipliers")
            seg.channel_multipliers = parse_int_list(value);
        else if (full == "seg.input_size") {
            const auto d = parse_int_list(value);
            if (d.size() != 3) throw ConfigError("seg.input_size needs 3 values");
            seg.input = Dims{d[0], d[1], d[2]};
        } else if (full == "metrics.extractor_seed")
            extractor_seed = std::stoull(value);
        else if (full == "metrics.extractor_dim")
            extractor_dim = std::stoi(value);
        else if (full == "metrics.msssim_window")
            msssim_window = std::stoi(value);
        else if (full == "metrics.msssim_data_lo")
            msssim_data_lo = std::stod(value);
        else if (full == "metrics.msssim_data_hi")
            msssim_data_hi = std::stod(value);
        else if (full == "metrics.equalize_bins")
            equalize_bins = std::stoi(value);
        else
            throw ConfigError("config: unknown key '" + full + "'");
    } catch (const std::invalid_argument&) {
        throw ConfigError("config: bad value for '" + full + "': " + value);
    } catch (const std::out_of_range&) {
        throw ConfigError("config: value out of range for '" + full + "': " + value);
    }
}

RunConfig RunConfig::load(const std::string& path, const std::string& preset_name) {
    RunConfig cfg = preset(preset_name);
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    std::string line, section = "run";
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                              ": expected key = value");
        try {
            cfg.apply_line(section, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(std::string(e.what()) + " at " + path + ":" +
                              std::to_string(lineno));
        }
    }
    return cfg;
}

std::string RunConfig::canonical_text() const {
    std::ostringstream os;
    os << "[run]\n";
    os << "seed = " << seed << "\n";
    os << "\n[schedule]\n";
    os << "T = " << train.schedule_T << "\n";
    os << "s = " << fmt_double(train.schedule_s) << "\n";
    os << "\n[model]\n";
    os << "image_channels = " << model.image_channels << "\n";
    os << "mask_channels = " << model.mask_channels << "\n";
    os << "base_channels = " << model.base_channels << "\n";
    os << "channel_multipliers = " << fmt_int_list(model.channel_multipliers) << "\n";
    os << "attention_levels = "
       << fmt_int_list(std::vector<int>(model.attention_levels.begin(),
                                        model.attention_levels.end()))
       << "\n";
    os << "attention_heads = " << model.attention_heads << "\n";
    os << "groupnorm_groups = " << model.groupnorm_groups << "\n";
    os << "time_embed_dim = " << model.time_embed_dim << "\n";
    os << "num_res_blocks = " << model.num_res_blocks << "\n";
    os << "input_size = " << model.input_size.width << "," << model.input_size.height << ","
       << model.input_size.depth << "\n";
    os << "\n[train]\n";
    os << "total_steps = " << train.total_steps << "\n";
    os << "batch_size = " << train.batch_size << "\n";
    os << "lr_stages = " << fmt_lr_stages(train.lr_stages) << "\n";
    os << "beta1 = " << fmt_double(train.beta1) << "\n";
    os << "beta2 = " << fmt_double(train.beta2) << "\n";
    os << "adam_eps = " << fmt_double(train.adam_eps) << "\n";
    os << "loss = " << (train.loss == LossKind::L2 ? "l2" : "l1") << "\n";
    os << "checkpoint_every = " << train.checkpoint_every << "\n";
    os << "grad_clip = " << fmt_double(train.grad_clip) << "\n";
    os << "\n[sample]\n";
    os << "clamp_output = " << (sample.clamp_output ? "true" : "false") << "\n";
    os << "clamp_x0 = " << (sample.clamp_x0 ? "true" : "false") << "\n";
    os << "\n[phantom]\n";
    os << "grid = " << phantom.grid.width << "," << phantom.grid.height << ","
       << phantom.grid.depth << "\n";
    os << "head_axis_lo = " << fmt_double(phantom.head_axis_lo) << "\n";
    os << "head_axis_hi = " << fmt_double(phantom.head_axis_hi) << "\n";
    os << "tumor_radius_lo = " << fmt_double(phantom.tumor_radius_lo) << "\n";
    os << "tumor_radius_hi = " << fmt_double(phantom.tumor_radius_hi) << "\n";
    os << "tumor_count_lo = " << phantom.tumor_count_lo << "\n";
    os << "tumor_count_hi = " << phantom.tumor_count_hi << "\n";
    os << "texture_amplitude = " << fmt_double(phantom.texture_amplitude) << "\n";
    os << "ring_contrast = " << fmt_double(phantom.ring_contrast) << "\n";
    os << "\n[seg]\n";
    os << "total_steps = " << seg.total_steps << "\n";
    os << "batch_size = " << seg.batch_size << "\n";
    os << "learning_rate = " << fmt_double(seg.learning_rate) << "\n";
    os << "threshold = " << fmt_double(seg.threshold) << "\n";
    os << "base_channels = " << seg.base_channels << "\n";
    os << "channel_multipliers = " << fmt_int_list(seg.channel_multipliers) << "\n";
    os << "input_size = " << seg.input.width << "," << seg.input.height << "," << seg.input.depth
       << "\n";
    os << "\n[metrics]\n";
    os << "extractor_seed = " << extractor_seed << "\n";
    os << "extractor_dim = " << extractor_dim << "\n";
    os << "msssim_window = " << msssim_window << "\n";
    os << "msssim_data_lo = " << fmt_double(msssim_data_lo) << "\n";
    os << "msssim_data_hi = " << fmt_double(msssim_data_hi) << "\n";
    os << "equalize_bins = " << equalize_bins << "\n";
    return os.str();
}

void RunConfig::write(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw ConfigError("config: cannot write " + path);
    os << canonical_text();
}

}  // namespace voxdiff
