// Command-line front end: gen, train, eval, infer, plot-pr.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "hrt/io.hpp"
#include "hrt/training.hpp"

using namespace hrt;
namespace fs = std::filesystem;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNonFinite = 3;

struct Options {
    std::string config, out, ckpt, modality, pred_dir, gt_dir, image;
    std::vector<std::string> supp, pr;
    std::optional<std::uint64_t> seed;
    int steps = -1, count = 8;
};

struct Settings {
    ModelConfig model = ModelConfig::toy();
    TrainConfig train;
    int eval_samples = 16;
    std::uint64_t eval_first_seed = 1000000;
    int checkpoint_every = 0;
};

// Config file, then command-line overrides. Unknown keys are an error.
Settings load_settings(const Options& o) {
    Settings s;
    const TextConfig doc = o.config.empty() ? TextConfig::parse("") : TextConfig::load(o.config);
    apply_model_section(doc, "model", s.model);
    if (!o.modality.empty()) s.model.modality = modality_from_string(o.modality);
    s.model.validate();
    apply_train_sections(doc, s.train, s.model);
    s.eval_samples = doc.get_int("eval.samples", s.eval_samples);
    s.eval_first_seed = static_cast<std::uint64_t>(doc.get_int("eval.first_seed", static_cast<int>(s.eval_first_seed)));
    s.checkpoint_every = doc.get_int("train.checkpoint_every", s.checkpoint_every);
    if (s.eval_samples <= 0) throw ConfigError("eval.samples must be positive");
    if (s.checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be non-negative");
    const auto unused = doc.unused_keys();
    if (!unused.empty()) {
        std::string keys;
        for (const auto& k : unused) keys += (keys.empty() ? "" : ", ") + k;
        throw ConfigError("unknown config keys: " + keys);
    }
    if (o.seed) s.train.seed = *o.seed;
    if (o.steps >= 0) s.train.steps = o.steps;
    return s;
}

// Training scenes for a run seed; evaluation scenes use a disjoint range.
std::uint64_t train_data_seed(std::uint64_t seed) { return seed * 100000; }

fs::path out_dir(const Options& o) {
    if (o.out.empty()) throw ConfigError("--out is required");
    fs::create_directories(o.out);
    return o.out;
}

std::string row_of(const std::string& name, const metrics::EvalResult& r) {
    return io::csv_row({name, io::fmt(r.s), io::fmt(r.f_beta), io::fmt(r.e_xi), io::fmt(r.mae)});
}

void write_eval(const fs::path& dir, const std::vector<std::string>& names, const std::vector<metrics::EvalResult>& rs) {
    std::string csv = io::csv_row({"sample", "S", "F_beta", "E_xi", "MAE"});
    for (std::size_t i = 0; i < rs.size(); ++i) csv += row_of(names[i], rs[i]);
    const auto mean = metrics::mean_of(rs);
    csv += row_of("mean", mean);
    io::write_file((dir / "eval.csv").string(), csv);
    std::string pr = io::csv_row({"threshold", "precision", "recall"});
    for (int t = 0; t < metrics::kPrThresholds; ++t) {
        pr += io::csv_row({std::to_string(t), io::fmt(mean.pr[t].precision), io::fmt(mean.pr[t].recall)});
    }
    io::write_file((dir / "pr.csv").string(), pr);
    std::printf("S %.4f  F_beta %.4f  E_xi %.4f  MAE %.4f  (%zu samples)\n", mean.s, mean.f_beta, mean.e_xi, mean.mae,
                rs.size());
}

std::vector<metrics::EvalResult> evaluate_all(const std::vector<metrics::Map>& preds, const std::vector<metrics::Map>& gts) {
    std::vector<metrics::EvalResult> rs(preds.size());
    const std::size_t workers = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), 8u));
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < preds.size(); i += workers) rs[i] = metrics::evaluate(preds[i], gts[i]);
        });
    }
    for (auto& t : pool) t.join();
    return rs;
}

std::string sample_name(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04zu", i);
    return buf;
}

int cmd_gen(const Options& o) {
    const Settings s = load_settings(o);
    const fs::path dir = out_dir(o);
    const auto samples = make_dataset(s.train.scene, o.count, train_data_seed(s.train.seed));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const std::string n = sample_name(i);
        io::write_png((dir / ("image_" + n + ".png")).string(), io::to_image(samples[i].image));
        io::write_png((dir / ("gt_" + n + ".png")).string(), io::to_image(samples[i].gt));
        const Tensor& supp = samples[i].supp.data;
        if (samples[i].supp.kind == Modality::focal_stack) {
            for (int k = 0; k < s.train.scene.focal_slices; ++k) {
                io::write_png((dir / ("supp_" + n + "_s" + sample_name(k).substr(2) + ".png")).string(),
                              io::to_image(ops::slice(supp, 1, 3 * k, 3)));
            }
        } else {
            io::write_png((dir / ("supp_" + n + ".png")).string(), io::to_image(supp));
        }
    }
    std::printf("wrote %d %s scenes to %s\n", o.count, to_string(s.model.modality).c_str(), dir.c_str());
    return 0;
}

int cmd_train(const Options& o) {
    const Settings s = load_settings(o);
    const fs::path dir = out_dir(o);
    const auto data = make_dataset(s.train.scene, s.train.n_train, train_data_seed(s.train.seed));
    Model model(s.model, s.train.seed);
    std::string loss_csv = io::csv_row({"step", "loss"});
    std::printf("training %d steps on %d %s scenes, %lld parameters\n", s.train.steps, s.train.n_train,
                to_string(s.model.modality).c_str(), static_cast<long long>(model.params().count()));
    try {
        train(model, data, s.train, [&](int step, double loss) {
            loss_csv += io::csv_row({std::to_string(step + 1), io::fmt(loss)});
            if ((step + 1) % 50 == 0) std::printf("step %d loss %.5f\n", step + 1, loss);
            if (s.checkpoint_every > 0 && (step + 1) % s.checkpoint_every == 0) {
                save_checkpoint(model, (dir / ("step_" + std::to_string(step + 1) + ".ckpt")).string());
            }
        });
    } catch (const NonFiniteError& e) {
        io::write_file((dir / "loss.csv").string(), loss_csv);
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNonFinite;
    }
    io::write_file((dir / "loss.csv").string(), loss_csv);
    save_checkpoint(model, (dir / "model.ckpt").string());
    const auto preds = predict(model, data, s.train.zero_supplementary);
    std::vector<metrics::Map> gts;
    std::vector<std::string> names;
    for (std::size_t i = 0; i < data.size(); ++i) {
        gts.push_back(to_map(data[i].gt));
        names.push_back(sample_name(i));
    }
    write_eval(dir, names, evaluate_all(preds, gts));
    return 0;
}

std::unique_ptr<Model> load_model(const std::string& path) {
    const ModelState st = load_checkpoint(path);
    auto model = std::make_unique<Model>(st.config, 0);
    apply_state(*model, st);
    return model;
}

int cmd_eval(const Options& o) {
    const fs::path dir = out_dir(o);
    std::vector<metrics::Map> preds, gts;
    std::vector<std::string> names;
    if (!o.pred_dir.empty() || !o.gt_dir.empty()) {
        if (o.pred_dir.empty() || o.gt_dir.empty()) throw ConfigError("--pred-dir and --gt-dir go together");
        std::map<std::string, fs::path> pred_files;
        for (const auto& e : fs::directory_iterator(o.pred_dir)) pred_files[e.path().stem().string()] = e.path();
        std::vector<fs::path> gt_files;
        for (const auto& e : fs::directory_iterator(o.gt_dir)) gt_files.push_back(e.path());
        std::sort(gt_files.begin(), gt_files.end());
        for (const auto& g : gt_files) {
            const auto it = pred_files.find(g.stem().string());
            if (it == pred_files.end()) throw io::IoError("no prediction for " + g.filename().string());
            const io::Image8 gi = io::read_image(g.string(), 1), pi = io::read_image(it->second.string(), 1);
            if (gi.h != pi.h || gi.w != pi.w) throw io::IoError("size mismatch for " + g.filename().string());
            gts.push_back(metrics::from_u8_gt(gi.h, gi.w, gi.px));
            preds.push_back(metrics::normalize(metrics::from_u8_pred(pi.h, pi.w, pi.px)));
            names.push_back(g.stem().string());
        }
        if (gts.empty()) throw io::IoError("no ground-truth maps in " + o.gt_dir);
    } else {
        if (o.ckpt.empty()) throw ConfigError("eval needs --ckpt or --pred-dir/--gt-dir");
        const auto model = load_model(o.ckpt);
        const Settings s = load_settings(o);
        SyntheticSceneSpec scene = s.train.scene;
        scene.image_h = model->config().input_h;
        scene.image_w = model->config().input_w;
        scene.modality = model->config().modality;
        const auto data = make_dataset(scene, s.eval_samples, s.eval_first_seed + s.train.seed * 100000);
        preds = predict(*model, data, s.train.zero_supplementary);
        for (std::size_t i = 0; i < data.size(); ++i) {
            gts.push_back(to_map(data[i].gt));
            names.push_back(sample_name(i));
        }
    }
    write_eval(dir, names, evaluate_all(preds, gts));
    return 0;
}

int cmd_infer(const Options& o) {
    if (o.ckpt.empty() || o.image.empty() || o.supp.empty() || o.out.empty()) {
        throw ConfigError("infer needs --ckpt, --image, --supp and --out");
    }
    const auto model = load_model(o.ckpt);
    const Tensor image = io::to_tensor(io::read_image(o.image, 3));
    SupplementaryInput supp;
    if (model->config().modality == Modality::focal_stack) {
        std::vector<Tensor> slices;
        for (const auto& p : o.supp) slices.push_back(io::to_tensor(io::read_image(p, 3)));
        supp = SupplementaryInput::focal(slices);
    } else {
        if (o.supp.size() != 1) throw ConfigError("depth and thermal models take exactly one --supp map");
        supp = SupplementaryInput::single(model->config().modality, io::to_tensor(io::read_image(o.supp[0], 1)));
    }
    NoGradGuard no_grad;
    const SaliencyMap out = model->forward(image, supp);
    io::write_png(o.out, io::to_image(out.prob));
    return 0;
}

int cmd_plot_pr(const Options& o) {
    if (o.pr.empty() || o.out.empty()) throw ConfigError("plot-pr needs --pr and --out");
    std::vector<io::LabelledCurve> curves;
    for (const auto& path : o.pr) {
        const auto rows = io::parse_csv(io::read_file(path));
        if (rows.empty() || rows[0].size() < 3 || rows[0][1] != "precision" || rows[0][2] != "recall") {
            throw io::IoError(path + ": expected a threshold,precision,recall header");
        }
        io::LabelledCurve c;
        c.label = fs::path(path).parent_path().filename().string();
        if (c.label.empty()) c.label = fs::path(path).stem().string();
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (rows[i].size() < 3) throw io::IoError(path + ": short row " + std::to_string(i + 1));
            c.precision.push_back(std::stod(rows[i][1]));
            c.recall.push_back(std::stod(rows[i][2]));
        }
        curves.push_back(std::move(c));
    }
    io::write_file(o.out, io::pr_svg(curves));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-modality salient object detection: data, training, evaluation"};
    app.require_subcommand(1);
    Options o;
    const auto common = [&](CLI::App* sub, bool ckpt) {
        sub->add_option("--config", o.config, "Config file (key = value with [sections])");
        sub->add_option("--seed", o.seed, "Seed for every random choice (overrides train.seed)");
        sub->add_option("--out", o.out, "Output directory (file for infer and plot-pr)");
        if (ckpt) sub->add_option("--ckpt", o.ckpt, "Checkpoint file");
    };
    auto* gen = app.add_subcommand("gen", "Write synthetic scenes as PNG files");
    common(gen, false);
    gen->add_option("--modality", o.modality, "depth, thermal or focal_stack");
    gen->add_option("--count", o.count, "Number of scenes")->check(CLI::PositiveNumber);
    auto* train_cmd = app.add_subcommand("train", "Train on synthetic scenes");
    common(train_cmd, false);
    train_cmd->add_option("--steps", o.steps, "Override train.steps")->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--modality", o.modality, "depth, thermal or focal_stack");
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on synthetic scenes, or map directories");
    common(eval, true);
    eval->add_option("--pred-dir", o.pred_dir, "Directory of predicted maps");
    eval->add_option("--gt-dir", o.gt_dir, "Directory of ground-truth maps (same file stems)");
    auto* infer = app.add_subcommand("infer", "Predict one saliency map");
    common(infer, true);
    infer->add_option("--image", o.image, "Primary RGB image");
    infer->add_option("--supp", o.supp, "Supplementary map, or focal slices in order");
    auto* plot = app.add_subcommand("plot-pr", "Render PR curves to SVG");
    plot->add_option("--pr", o.pr, "pr.csv files")->required();
    plot->add_option("--out", o.out, "SVG file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }
    try {
        if (*gen) return cmd_gen(o);
        if (*train_cmd) return cmd_train(o);
        if (*eval) return cmd_eval(o);
        if (*infer) return cmd_infer(o);
        if (*plot) return cmd_plot_pr(o);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const CheckpointError& e) {
        std::fprintf(stderr, "checkpoint error: %s\n", e.what());
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitRuntime;
}
