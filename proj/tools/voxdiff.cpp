// voxdiff: mask-conditioned 3D diffusion synthesis pipeline.
// Subcommands: gen-phantoms, train, sample, evaluate, seg-train, seg-eval,
// validate-schedule. Exit codes: 0 ok, 2 config error, 3 data error,
// 4 numeric failure, 1 anything else.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "voxdiff/config.hpp"
#include "voxdiff/data.hpp"
#include "voxdiff/diffusion.hpp"
#include "voxdiff/metrics.hpp"
#include "voxdiff/seg.hpp"
#include "voxdiff/training.hpp"

namespace fs = std::filesystem;
using namespace voxdiff;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::string preset = "desk";
    std::uint64_t seed = 0;
    bool seed_set = false;
};

RunConfig resolve_config(const GlobalOpts& g) {
    RunConfig cfg = g.config_path.empty() ? RunConfig::preset(g.preset)
                                          : RunConfig::load(g.config_path, g.preset);
    if (g.seed_set) {
        cfg.seed = g.seed;
        cfg.train.seed = g.seed;
        cfg.phantom.seed = g.seed;
        cfg.seg.seed = g.seed;
    }
    return cfg;
}

std::vector<Case> load_dataset(const std::string& dir) {
    std::vector<Case> cases;
    for (const auto& id : read_manifest(dir)) cases.push_back(load_case(dir, id));
    return cases;
}

int cmd_gen_phantoms(const GlobalOpts& g, int count, const std::string& out_dir) {
    const RunConfig cfg = resolve_config(g);
    fs::create_directories(out_dir);
    std::vector<std::string> ids;
    for (int i = 0; i < count; ++i) {
        const Case c = generate_phantom(cfg.phantom, i);
        save_case(out_dir, c);
        ids.push_back(c.id);
    }
    write_manifest(out_dir, ids);
    cfg.write(out_dir + "/resolved_config.cfg");
    std::cout << "wrote " << count << " phantom case(s) to " << out_dir << "\n";
    return 0;
}

int cmd_train(const GlobalOpts& g, const std::string& data_dir, const std::string& out_dir,
              const std::string& resume) {
    const RunConfig cfg = resolve_config(g);
    std::vector<TrainCase> dataset;
    for (const auto& c : load_dataset(data_dir)) {
        TrainCase tc;
        tc.image = c.image;
        tc.mask = one_hot_encode(c.labels, 3, /*exclude_background=*/true);
        tc.id = c.id;
        dataset.push_back(std::move(tc));
    }
    fs::create_directories(out_dir);
    cfg.write(out_dir + "/resolved_config.cfg");
    std::string final_path;
    if (resume.empty()) {
        final_path = train(cfg.model, cfg.train, dataset, out_dir);
    } else {
        TrainState state = TrainState::load(resume);
        final_path = continue_train(state, dataset, out_dir);
    }
    std::ifstream curve(out_dir + "/loss_curve.tsv");
    std::string line, last;
    while (std::getline(curve, line))
        if (!line.empty()) last = line;
    std::cout << "final checkpoint: " << final_path << "\n";
    if (!last.empty()) std::cout << "final step\tloss: " << last << "\n";
    return 0;
}

int cmd_sample(const GlobalOpts& g, const std::string& checkpoint, const std::string& mask_dir,
               int count, const std::string& out_dir) {
    const RunConfig cfg = resolve_config(g);
    TrainState state = TrainState::load(checkpoint);
    Denoiser& denoiser = state.denoiser();
    const int num_classes = denoiser.config().mask_channels + 1;

    fs::create_directories(out_dir);
    cfg.write(out_dir + "/resolved_config.cfg");
    std::ofstream seeds(out_dir + "/sample_seeds.tsv");
    std::ofstream sources(out_dir + "/mask_sources.txt");
    std::vector<std::string> ids;
    std::uint64_t draw = 0;
    for (const auto& mask_id : read_manifest(mask_dir)) {
        const Case mc = load_case(mask_dir, mask_id);
        const Volume mask = one_hot_encode(mc.labels, num_classes, /*exclude_background=*/true);
        sources << mask_dir << "\t" << mask_id << "\n";
        for (int k = 0; k < count; ++k, ++draw) {
            const std::uint64_t sample_seed = Rng::splitmix64(cfg.seed ^ (draw + 1));
            Rng rng(sample_seed);
            const Volume x0 = sample(denoiser, mask, state.schedule(), rng, cfg.sample);
            Case out;
            out.image = x0;
            out.labels = mc.labels;
            out.id = mask_id + "_" + std::to_string(k);
            save_case(out_dir, out);
            ids.push_back(out.id);
            seeds << out.id << "\t" << sample_seed << "\n";
        }
    }
    write_manifest(out_dir, ids);
    std::cout << "wrote " << ids.size() << " sample(s) to " << out_dir << "\n";
    return 0;
}

// Intra-set diversity: mean MS-SSIM over seeded random pairs.
double intra_set_ms_ssim(const std::vector<Case>& set, const RunConfig& cfg, std::uint64_t seed) {
    if (set.size() < 2) throw DataError("evaluate: need >= 2 volumes for intra-set MS-SSIM");
    MsSsimOptions opts;
    opts.window = cfg.msssim_window;
    opts.data_lo = cfg.msssim_data_lo;
    opts.data_hi = cfg.msssim_data_hi;
    Rng rng(seed);
    const std::size_t max_pairs = set.size() * (set.size() - 1) / 2;
    const std::size_t n_pairs = std::min<std::size_t>(50, max_pairs);
    std::set<std::pair<int, int>> seen;
    double acc = 0.0;
    for (std::size_t p = 0; p < n_pairs; ++p) {
        int i, j;
        do {
            i = rng.uniform_int(0, static_cast<int>(set.size()) - 1);
            j = rng.uniform_int(0, static_cast<int>(set.size()) - 1);
            if (i > j) std::swap(i, j);
        } while (i == j || seen.count({i, j}));
        seen.insert({i, j});
        acc += ms_ssim_3d(set[i].image, set[j].image, opts);
    }
    return acc / static_cast<double>(n_pairs);
}

int cmd_evaluate(const GlobalOpts& g, const std::string& real_dir, const std::string& synth_dir,
                 const std::string& out_dir) {
    const RunConfig cfg = resolve_config(g);
    const std::vector<Case> real = load_dataset(real_dir);
    const std::vector<Case> synth = load_dataset(synth_dir);
    if (real.empty() || synth.empty()) throw DataError("evaluate: empty dataset");

    MetricReport report;
    report.set_note("mmd_kernel", "gaussian-median-heuristic");
    RandomProjectionExtractor extractor(cfg.extractor_seed, cfg.extractor_dim);
    report.set_note("frechet_extractor", extractor.name());

    // paired MSE / MS-SSIM where ids align
    std::map<std::string, const Case*> by_id;
    for (const auto& c : real) by_id[c.id] = &c;
    MsSsimOptions ssim_opts;
    ssim_opts.window = cfg.msssim_window;
    ssim_opts.data_lo = cfg.msssim_data_lo;
    ssim_opts.data_hi = cfg.msssim_data_hi;
    for (const auto& c : synth) {
        const std::string base_id = c.id.substr(0, c.id.find('_'));
        const auto it = by_id.count(c.id) ? by_id.find(c.id) : by_id.find(base_id);
        if (it == by_id.end()) continue;
        report.add_case(c.id);
        report.add_value("mse", mse(c.image, it->second->image));
        report.add_value("ms_ssim_paired", ms_ssim_3d(c.image, it->second->image, ssim_opts));
    }

    std::vector<Volume> real_vols, synth_vols;
    for (const auto& c : real) real_vols.push_back(c.image);
    for (const auto& c : synth) synth_vols.push_back(c.image);
    report.set_scalar("mmd", mmd(real_vols, synth_vols));

    std::vector<std::vector<double>> feats_real, feats_synth;
    for (const auto& c : real)
        feats_real.push_back(extractor.extract(histogram_equalize(c.image, cfg.equalize_bins)));
    for (const auto& c : synth)
        feats_synth.push_back(extractor.extract(histogram_equalize(c.image, cfg.equalize_bins)));
    double clamp_total = 0.0;
    report.set_scalar("frechet", frechet_distance(feats_real, feats_synth, &clamp_total));
    report.set_note("frechet_eig_clamp_total", std::to_string(clamp_total));

    if (real.size() > 1)
        report.set_scalar("ms_ssim_intra_real", intra_set_ms_ssim(real, cfg, 17));
    if (synth.size() > 1)
        report.set_scalar("ms_ssim_intra_synth", intra_set_ms_ssim(synth, cfg, 17));

    fs::create_directories(out_dir);
    cfg.write(out_dir + "/resolved_config.cfg");
    report.write(out_dir + "/report.txt", out_dir + "/report.kv");
    std::cout << report.table_text();
    return 0;
}

struct SegExperiment {
    SegConfig cfg;
    std::string test_dir;
    // name -> list of (dir, count)
    std::map<std::string, std::vector<std::pair<std::string, int>>> mixtures;
};

SegExperiment load_experiment_spec(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("seg spec: cannot open " + path);
    SegExperiment exp;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
        };
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("seg spec: " + path + ":" + std::to_string(lineno) +
                              ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key == "test_dir")
            exp.test_dir = value;
        else if (key == "seed")
            exp.cfg.seed = std::stoull(value);
        else if (key == "total_steps")
            exp.cfg.total_steps = std::stol(value);
        else if (key == "batch_size")
            exp.cfg.batch_size = std::stoi(value);
        else if (key == "learning_rate")
            exp.cfg.learning_rate = std::stod(value);
        else if (key == "threshold")
            exp.cfg.threshold = std::stod(value);
        else if (key == "base_channels")
            exp.cfg.base_channels = std::stoi(value);
        else if (key == "input_size") {
            std::istringstream vs(value);
            std::string tok;
            std::vector<int> d;
            while (std::getline(vs, tok, ',')) d.push_back(std::stoi(tok));
            if (d.size() != 3) throw ConfigError("seg spec: input_size needs 3 values");
            exp.cfg.input = Dims{d[0], d[1], d[2]};
        } else if (key.rfind("mixture.", 0) == 0) {
            const std::string name = key.substr(8);
            std::istringstream vs(value);
            std::string tok;
            while (std::getline(vs, tok, ',')) {
                const auto colon = tok.rfind(':');
                if (colon == std::string::npos)
                    throw ConfigError("seg spec: mixture entry must be dir:count, got " + tok);
                exp.mixtures[name].emplace_back(trim(tok.substr(0, colon)),
                                                std::stoi(tok.substr(colon + 1)));
            }
        } else {
            throw ConfigError("seg spec: unknown key '" + key + "'");
        }
    }
    if (exp.test_dir.empty()) throw ConfigError("seg spec: test_dir is required");
    if (exp.mixtures.empty()) throw ConfigError("seg spec: no mixtures defined");
    return exp;
}

// Test cases must never appear in a training mixture, directly or as the
// conditioning masks behind a synthetic set.
void check_disjoint(const SegExperiment& exp) {
    const auto canon = [](const std::string& p) {
        return fs::weakly_canonical(fs::path(p)).string();
    };
    const std::string test_dir = canon(exp.test_dir);
    for (const auto& [name, parts] : exp.mixtures)
        for (const auto& [dir, count] : parts) {
            if (canon(dir) == test_dir)
                throw DataError("seg spec: mixture '" + name +
                                "' uses the test set directory " + dir);
            const std::string sources_path = dir + "/mask_sources.txt";
            if (fs::exists(sources_path)) {
                std::ifstream src(sources_path);
                std::string line;
                while (std::getline(src, line)) {
                    const auto tab = line.find('\t');
                    if (tab == std::string::npos) continue;
                    if (canon(line.substr(0, tab)) == test_dir)
                        throw DataError("seg spec: synthetic set '" + dir +
                                        "' was conditioned on masks from the test set");
                }
            }
        }
}

std::vector<Case> load_mixture(const std::vector<std::pair<std::string, int>>& parts) {
    std::vector<Case> cases;
    for (const auto& [dir, count] : parts) {
        const auto ids = read_manifest(dir);
        if (count > static_cast<int>(ids.size()))
            throw DataError("seg spec: mixture wants " + std::to_string(count) + " cases, " +
                            dir + " has " + std::to_string(ids.size()));
        for (int i = 0; i < count; ++i) {
            Case c = load_case(dir, ids[i]);
            c.id = dir + "/" + c.id;
            cases.push_back(std::move(c));
        }
    }
    return cases;
}

int cmd_seg_train(const std::string& spec_path, const std::string& out_dir) {
    const SegExperiment exp = load_experiment_spec(spec_path);
    check_disjoint(exp);
    fs::create_directories(out_dir);
    fs::copy_file(spec_path, out_dir + "/experiment_spec.cfg",
                  fs::copy_options::overwrite_existing);
    for (const auto& [name, parts] : exp.mixtures) {
        const std::vector<Case> dataset = load_mixture(parts);
        const std::string path = seg_train(exp.cfg, dataset, out_dir + "/" + name);
        std::cout << "mixture " << name << ": " << dataset.size() << " case(s) -> " << path
                  << "\n";
    }
    return 0;
}

int cmd_seg_eval(const std::string& spec_path, const std::string& models_dir,
                 const std::string& out_dir) {
    const SegExperiment exp = load_experiment_spec(spec_path);
    check_disjoint(exp);
    const std::vector<Case> test_set = load_dataset(exp.test_dir);
    fs::create_directories(out_dir);

    std::ostringstream table;
    table << "mixture\tdice\tiou\taccuracy\trecall\tprecision\n";
    table.precision(4);
    table << std::fixed;
    for (const auto& [name, parts] : exp.mixtures) {
        const std::string ckpt = models_dir + "/" + name + "/seg_final.ckpt";
        const MetricReport report = seg_evaluate(ckpt, test_set, exp.cfg.threshold);
        report.write(out_dir + "/" + name + "_report.txt", out_dir + "/" + name + "_report.kv");
        table << name;
        for (const char* metric : {"dice", "iou", "accuracy", "recall", "precision"})
            table << "\t" << report.mean(metric) << "±" << report.stddev(metric);
        table << "\n";
    }
    std::ofstream out(out_dir + "/comparison_table.txt");
    out << table.str();
    std::cout << table.str();
    return 0;
}

int cmd_validate_schedule(const GlobalOpts& g) {
    const RunConfig cfg = resolve_config(g);
    const Schedule sch = cosine_schedule(cfg.train.schedule_T, cfg.train.schedule_s);
    const ScheduleReport report = validate(sch);
    if (report.ok) {
        std::cout << "schedule ok: T=" << sch.T << " s=" << sch.s
                  << " alpha_bar[T]=" << sch.alpha_bar[sch.T] << "\n";
        return 0;
    }
    std::cout << "schedule INVALID: " << report.first_violation << "\n";
    return 4;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"voxdiff: mask-conditioned 3D diffusion synthesis"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOpts g;
    app.add_option("--config", g.config_path, "run config file")->capture_default_str();
    app.add_option("--preset", g.preset, "base preset: desk or paper")->capture_default_str();
    auto* seed_opt = app.add_option("--seed", g.seed, "run seed");

    int count = 10;
    std::string out_dir = "out", data_dir, checkpoint, mask_dir, resume;
    std::string real_dir, synth_dir, spec_path, models_dir;

    auto* gen = app.add_subcommand("gen-phantoms", "generate a phantom dataset");
    gen->add_option("--count", count)->capture_default_str();
    gen->add_option("--out", out_dir)->required();

    auto* tr = app.add_subcommand("train", "train the diffusion denoiser");
    tr->add_option("--data", data_dir)->required();
    tr->add_option("--out", out_dir)->required();
    tr->add_option("--resume", resume, "checkpoint to continue from");

    auto* sa = app.add_subcommand("sample", "sample volumes conditioned on masks");
    sa->add_option("--checkpoint", checkpoint)->required();
    sa->add_option("--masks", mask_dir, "dataset dir providing conditioning masks")->required();
    sa->add_option("--count", count, "samples per mask")->capture_default_str();
    sa->add_option("--out", out_dir)->required();

    auto* ev = app.add_subcommand("evaluate", "synthesis quality metric suite");
    ev->add_option("--real", real_dir)->required();
    ev->add_option("--synth", synth_dir)->required();
    ev->add_option("--out", out_dir)->required();

    auto* st = app.add_subcommand("seg-train", "train segmentation mixtures");
    st->add_option("--spec", spec_path)->required();
    st->add_option("--out", out_dir)->required();

    auto* se = app.add_subcommand("seg-eval", "evaluate segmentation mixtures");
    se->add_option("--spec", spec_path)->required();
    se->add_option("--models", models_dir)->required();
    se->add_option("--out", out_dir)->required();

    auto* vs = app.add_subcommand("validate-schedule", "check schedule invariants");

    CLI11_PARSE(app, argc, argv);
    g.seed_set = seed_opt->count() > 0;

    try {
        if (gen->parsed()) return cmd_gen_phantoms(g, count, out_dir);
        if (tr->parsed()) return cmd_train(g, data_dir, out_dir, resume);
        if (sa->parsed()) return cmd_sample(g, checkpoint, mask_dir, count, out_dir);
        if (ev->parsed()) return cmd_evaluate(g, real_dir, synth_dir, out_dir);
        if (st->parsed()) return cmd_seg_train(spec_path, out_dir);
        if (se->parsed()) return cmd_seg_eval(spec_path, models_dir, out_dir);
        if (vs->parsed()) return cmd_validate_schedule(g);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
