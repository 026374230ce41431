// Command-line front end: synth, sample, train, register, evaluate, landmarks,
// diffimg, replay.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <thread>

#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "invgan/invgan.hpp"
#include "png_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace invgan;

namespace {

constexpr const char* kArtifactVersion = "1.0.0";

enum Exit : int { ok = 0, usage = 1, data = 2, numerical = 3 };

/// Options bound to a config struct; only flags that were actually given
/// (on the command line or through the environment) are applied.
template <class Cfg>
class Binder {
public:
    explicit Binder(CLI::App* app) : app_(app) {}

    template <class Get>
    CLI::Option* add(const std::string& name, Get get, const std::string& help)
    {
        using V = std::remove_reference_t<decltype(get(std::declval<Cfg&>()))>;
        auto value = std::make_shared<V>(get(defaults_));
        auto* opt = app_->add_option(name, *value, help)->capture_default_str();
        appliers_.push_back([opt, value, get](Cfg& c) {
            if (opt->count() > 0)
                get(c) = *value;
        });
        return opt;
    }

    template <class Get>
    CLI::Option* flag(const std::string& name, Get get, bool when_set, const std::string& help)
    {
        auto* opt = app_->add_flag(name, help);
        appliers_.push_back([opt, get, when_set](Cfg& c) {
            if (opt->count() > 0)
                get(c) = when_set;
        });
        return opt;
    }

    void apply(Cfg& c) const
    {
        for (const auto& f : appliers_)
            f(c);
    }

private:
    CLI::App* app_;
    Cfg defaults_{};
    std::vector<std::function<void(Cfg&)>> appliers_;
};

struct Common {
    int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    bool deterministic = false;
    bool quiet = false;
};

void say(const Common& common, const std::string& line)
{
    if (!common.quiet)
        std::cout << line << '\n';
}

std::string upper_env(const std::string& long_name)
{
    std::string out = "INVGAN_";
    for (char c : long_name)
        out += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

/// Every long option gets an INVGAN_<NAME> environment override.
void attach_env(CLI::App& app)
{
    for (auto* opt : app.get_options()) {
        if (opt->get_lnames().empty() || opt->get_lnames().front() == "help" || opt->get_lnames().front() == "version")
            continue;
        if (opt->get_envname().empty())
            opt->envname(upper_env(opt->get_lnames().front()));
    }
    for (auto* sub : app.get_subcommands([](CLI::App*) { return true; }))
        attach_env(*sub);
}

void write_json(const json& j, const fs::path& path)
{
    const std::string text = j.dump(2) + "\n";
    invgan::detail::spit(path, std::vector<unsigned char>(text.begin(), text.end()));
}

void write_text(const std::string& text, const fs::path& path)
{
    invgan::detail::spit(path, std::vector<unsigned char>(text.begin(), text.end()));
}

json invgan_environment()
{
    json env = json::object();
    for (char** e = environ; e && *e; ++e) {
        const std::string kv = *e;
        const auto eq = kv.find('=');
        if (kv.rfind("INVGAN_", 0) == 0 && eq != std::string::npos)
            env[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    return env;
}

struct Manifest {
    std::string subcommand;
    json config = json::object();
    json inputs = json::object();
    json outputs = json::object();
    std::uint64_t seed = 0;
};

void write_manifest(const Manifest& m, const std::vector<std::string>& argv, const Common& common,
                    const fs::path& path, double wall_seconds)
{
    json j;
    j["artifact_version"] = kArtifactVersion;
    j["subcommand"] = m.subcommand;
    j["config"] = m.config;
    j["inputs"] = m.inputs;
    j["outputs"] = m.outputs;
    j["seed"] = m.seed;
    j["threads"] = thread_count();
    j["deterministic"] = common.deterministic;
    j["argv"] = argv;
    j["environment"] = invgan_environment();
    j["wall_seconds"] = wall_seconds;
    write_json(j, path);
}

Spacing spacing_from(const std::vector<float>& v, Spacing fallback)
{
    if (v.empty())
        return fallback;
    if (v.size() != 3)
        throw ConfigError("--spacing takes three values (mm)");
    return {v[0], v[1], v[2]};
}

json registration_json(const RegistrationMetrics& m)
{
    return {{"cc_before", m.cc_before},       {"cc_after", m.cc_after},
            {"cc_after_backward", m.cc_after_backward}, {"mi_before", m.mi_before},
            {"mi_after", m.mi_after},         {"mi_after_backward", m.mi_after_backward}};
}

json landmark_json(const LandmarkReport& r)
{
    json per = json::array();
    for (std::size_t i = 0; i < r.names.size(); ++i)
        per.push_back({{"name", r.names[i]}, {"distance_mm", r.distances_mm[i]}, {"outside", bool(r.outside[i])}});
    return {{"mean_mm", r.mean}, {"std_mm", r.std}, {"points", per}};
}

// --- subcommands -------------------------------------------------------------

struct SynthArgs {
    std::vector<int> dims;
    std::vector<float> spacing;
    fs::path out;
};

Manifest run_synth(const SynthConfig& base, const SynthArgs& a, const Common& common)
{
    SynthConfig cfg = base;
    if (!a.dims.empty()) {
        if (a.dims.size() == 1)
            cfg.dims = {a.dims[0], a.dims[0], a.dims[0]};
        else if (a.dims.size() == 3)
            cfg.dims = {a.dims[0], a.dims[1], a.dims[2]};
        else
            throw ConfigError("--dims takes one or three values");
    }
    cfg.spacing = spacing_from(a.spacing, cfg.spacing);
    const auto pair = make_pair(cfg);
    write_volume(pair.source, a.out / "source.ivl");
    write_volume(pair.target, a.out / "target.ivl");
    write_field(pair.truth, a.out / "truth.ivf");
    write_landmarks(pair.landmarks_source, a.out / "landmarks.csv");
    write_landmarks(pair.landmarks_target, a.out / "landmarks_target.csv");
    say(common, "synth: " + cfg.dims.str() + ", global cc " + std::to_string(global_cc(pair.source, pair.target)) +
                    ", " + std::to_string(pair.landmarks_source.size()) + " landmarks -> " + a.out.string());
    Manifest m{"synth", cfg, json::object(), json::object(), cfg.seed};
    m.outputs = {{"source", (a.out / "source.ivl").string()},
                 {"target", (a.out / "target.ivl").string()},
                 {"truth", (a.out / "truth.ivf").string()},
                 {"landmarks_source", (a.out / "landmarks.csv").string()},
                 {"landmarks_target", (a.out / "landmarks_target.csv").string()}};
    return m;
}

struct SampleArgs {
    fs::path source, target, out, csv;
    std::size_t count = 1000;
};

Manifest run_sample(const SamplerConfig& cfg, const SampleArgs& a, const Common& common)
{
    const auto s = read_volume(a.source), t = read_volume(a.target);
    const auto r = sample_patches_with_stats(s, t, a.count, cfg);
    write_patch_archive(s, t, r.patches, a.out);
    if (!a.csv.empty())
        write_text(format_patch_csv(r.patches), a.csv);
    say(common, "sample: " + std::to_string(r.patches.size()) + " patches from " + std::to_string(r.draws) +
                    " draws -> " + a.out.string());
    Manifest m{"sample", cfg, {{"source", a.source.string()}, {"target", a.target.string()}},
               {{"archive", a.out.string()}, {"draws", r.draws}}, cfg.seed};
    if (!a.csv.empty())
        m.outputs["windows"] = a.csv.string();
    return m;
}

struct TrainArgs {
    std::vector<fs::path> volumes;
    fs::path archive, out = "invgan.ckpt", resume, log, config;
    int report_every = 50;
};

Manifest run_train(const TrainConfig& cfg, const std::function<void(TrainConfig&)>& apply_flags, const TrainArgs& a,
                   const Common& common)
{
    TrainState state;
    if (!a.resume.empty()) {
        state = load_checkpoint(a.resume);
        TrainConfig updated = state.config;
        apply_flags(updated);
        TrainConfig probe = updated.resolved();
        probe.iterations = state.config.iterations;
        if (probe != state.config)
            throw ConfigError("resume: only --iterations may change when resuming");
        state.config.iterations = updated.iterations;
    } else {
        state = TrainState::create(cfg);
    }

    std::unique_ptr<PatchProvider> provider;
    if (!a.archive.empty()) {
        if (!a.volumes.empty())
            throw ConfigError("give either --archive or --volume, not both");
        auto archive = std::make_unique<PatchArchive>(a.archive);
        if (archive->patch_size() != state.config.model.patch_size)
            throw DataError("archive patch size " + std::to_string(archive->patch_size()) +
                            " differs from model patch size " + std::to_string(state.config.model.patch_size));
        provider = std::move(archive);
    } else {
        if (a.volumes.size() < 2)
            throw ConfigError("train needs at least two --volume inputs (or --archive)");
        std::vector<Volume> vols;
        for (const auto& p : a.volumes)
            vols.push_back(read_volume(p));
        provider = std::make_unique<VolumePairProvider>(std::move(vols), state.config.sampler,
                                                        state.config.patches_per_pair);
    }

    const fs::path log = a.log.empty() ? fs::path(a.out.string() + ".log.csv") : a.log;
    if (log.has_parent_path())
        fs::create_directories(log.parent_path());
    std::ofstream log_out(log, a.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log_out)
        throw FormatError("cannot write " + log.string());
    if (a.resume.empty())
        log_out << "iteration,similarity,cycle,adversarial,total,d_target,d_source,grad_norm\n";
    log_out.precision(8);

    TrainOptions opt;
    opt.checkpoint_path = a.out;
    opt.on_step = [&](const StepMetrics& m) {
        log_out << m.iteration << ',' << m.similarity << ',' << m.cycle << ',' << m.adversarial << ',' << m.total
                << ',' << m.d_target_loss << ',' << m.d_source_loss << ',' << m.generator_grad_norm << '\n';
        if (a.report_every > 0 && m.iteration % a.report_every == 0)
            say(common, "iter " + std::to_string(m.iteration) + "  sim " + std::to_string(m.similarity) + "  cycle " +
                            std::to_string(m.cycle) + "  adv " + std::to_string(m.adversarial) + "  d_t " +
                            std::to_string(m.d_target_loss) + "  d_s " + std::to_string(m.d_source_loss));
    };
    train(state, *provider, opt);
    say(common, "train: checkpoint at iteration " + std::to_string(state.iteration) + " -> " + a.out.string());

    Manifest m{"train", state.config, json::object(), {{"checkpoint", a.out.string()}, {"log", log.string()}},
               state.config.seed};
    json vols = json::array();
    for (const auto& v : a.volumes)
        vols.push_back(v.string());
    m.inputs = {{"volumes", vols}};
    if (!a.archive.empty())
        m.inputs["archive"] = a.archive.string();
    if (!a.resume.empty())
        m.inputs["resume"] = a.resume.string();
    return m;
}

struct RegisterArgs {
    fs::path checkpoint, source, target, out;
    int overlap = -1;
    int mi_bins = 32;
};

Manifest run_register(const RegisterArgs& a, const Common& common)
{
    const auto state = load_checkpoint(a.checkpoint);
    const auto s = read_volume(a.source), t = read_volume(a.target);
    require_same_dims(s.dims, t.dims, "register: source and target");
    const int P = state.config.model.patch_size;
    const int O = a.overlap >= 0 ? a.overlap : P / 4;
    const auto plan = plan_tiling(s.dims, P, O);
    const auto r = register_volumes(state.generator, s, t, plan, a.mi_bins);
    write_volume(r.warped_source, a.out / "warped_source.ivl");
    write_volume(r.warped_target, a.out / "warped_target.ivl");
    write_field(r.flow_forward, a.out / "flow_forward.ivf");
    write_field(r.flow_backward, a.out / "flow_backward.ivf");
    json metrics = registration_json(r.metrics);
    metrics["tiles"] = plan.tiles.size();
    metrics["seam_score"] = seam_score(r.flow_forward, plan);
    write_json(metrics, a.out / "metrics.json");
    say(common, "register: cc " + std::to_string(r.metrics.cc_before) + " -> " + std::to_string(r.metrics.cc_after) +
                    " (" + std::to_string(plan.tiles.size()) + " tiles) -> " + a.out.string());
    Manifest m{"register",
               {{"patch_size", P}, {"overlap", O}, {"mi_bins", a.mi_bins}},
               {{"checkpoint", a.checkpoint.string()}, {"source", a.source.string()}, {"target", a.target.string()}},
               {{"warped_source", (a.out / "warped_source.ivl").string()},
                {"warped_target", (a.out / "warped_target.ivl").string()},
                {"flow_forward", (a.out / "flow_forward.ivf").string()},
                {"flow_backward", (a.out / "flow_backward.ivf").string()},
                {"metrics", (a.out / "metrics.json").string()}},
               state.config.seed};
    return m;
}

struct EvaluateArgs {
    fs::path source, target, registered, field, lm_fixed, lm_moving, out;
    std::vector<float> spacing;
    int mi_bins = 32;
};

Manifest run_evaluate(const EvaluateArgs& a, const Common& common)
{
    const auto s = read_volume(a.source), t = read_volume(a.target), reg = read_volume(a.registered);
    require_same_dims(s.dims, t.dims, "evaluate: source and target");
    require_same_dims(reg.dims, t.dims, "evaluate: registered and target");
    MetricReport rep;
    rep.cc_before = global_cc(s, t);
    rep.cc_after = global_cc(reg, t);
    rep.mi_before = mutual_information(s, t, a.mi_bins);
    rep.mi_after = mutual_information(reg, t, a.mi_bins);
    json metrics = {{"cc_before", rep.cc_before},
                    {"cc_after", rep.cc_after},
                    {"mi_before", rep.mi_before},
                    {"mi_after", rep.mi_after}};
    Manifest m{"evaluate", {{"mi_bins", a.mi_bins}}, {{"source", a.source.string()}, {"target", a.target.string()},
                                                       {"registered", a.registered.string()}},
               json::object(), 0};
    const bool landmarks = !a.lm_fixed.empty() || !a.lm_moving.empty() || !a.field.empty();
    if (landmarks) {
        if (a.lm_fixed.empty() || a.lm_moving.empty() || a.field.empty())
            throw ConfigError("landmark evaluation needs --field, --landmarks-fixed and --landmarks-moving");
        const auto field = read_field(a.field);
        const Spacing sp = spacing_from(a.spacing, field.spacing);
        rep.landmarks = landmark_report(read_landmarks(a.lm_fixed, field.dims), read_landmarks(a.lm_moving, field.dims),
                                        field, sp);
        metrics["landmarks"] = landmark_json(rep.landmarks);
        write_text(format_landmark_table(rep.landmarks), a.out / "landmarks.csv");
        m.inputs["field"] = a.field.string();
        m.inputs["landmarks_fixed"] = a.lm_fixed.string();
        m.inputs["landmarks_moving"] = a.lm_moving.string();
        m.outputs["landmarks"] = (a.out / "landmarks.csv").string();
    }
    write_json(metrics, a.out / "metrics.json");
    write_text(format_similarity_table({{"before", {rep.cc_before, rep.mi_before}}, {"after", {rep.cc_after, rep.mi_after}}}),
               a.out / "similarity.csv");
    m.outputs["metrics"] = (a.out / "metrics.json").string();
    m.outputs["similarity"] = (a.out / "similarity.csv").string();
    say(common, "evaluate: cc " + std::to_string(rep.cc_before) + " -> " + std::to_string(rep.cc_after) + ", mi " +
                    std::to_string(rep.mi_before) + " -> " + std::to_string(rep.mi_after) +
                    (landmarks ? ", landmark mean " + std::to_string(rep.landmarks.mean) + " mm" : std::string()));
    return m;
}

struct LandmarkArgs {
    fs::path fixed, moving, field, out;
    std::vector<float> spacing;
    bool nearest = false;
};

Manifest run_landmarks(const LandmarkArgs& a, const Common& common)
{
    const auto field = read_field(a.field);
    const Spacing sp = spacing_from(a.spacing, field.spacing);
    const auto r = landmark_report(read_landmarks(a.fixed, field.dims), read_landmarks(a.moving, field.dims), field, sp,
                                   a.nearest ? LandmarkSampling::nearest : LandmarkSampling::trilinear);
    const auto table = format_landmark_table(r);
    write_text(table, a.out);
    write_json(landmark_json(r), fs::path(a.out).replace_extension(".json"));
    if (!common.quiet)
        std::cout << table;
    return {"landmarks",
            {{"sampling", a.nearest ? "nearest" : "trilinear"}, {"spacing_mm", {sp.sx, sp.sy, sp.sz}}},
            {{"fixed", a.fixed.string()}, {"moving", a.moving.string()}, {"field", a.field.string()}},
            {{"table", a.out.string()}, {"json", fs::path(a.out).replace_extension(".json").string()}},
            0};
}

struct DiffArgs {
    fs::path a, b, out, overlay;
    int axis = 2;
    int index = -1;
};

Manifest run_diffimg(const DiffArgs& d, const Common& common)
{
    const auto a = read_volume(d.a), b = read_volume(d.b);
    require_same_dims(a.dims, b.dims, "diffimg");
    if (d.axis < 0 || d.axis > 2)
        throw ConfigError("--axis must be 0 (x), 1 (y) or 2 (z)");
    const int index = d.index >= 0 ? d.index : a.dims[d.axis] / 2;
    tools::write_png(slice(difference_image(a, b), d.axis, index), d.out);
    Manifest m{"diffimg", {{"axis", d.axis}, {"index", index}}, {{"a", d.a.string()}, {"b", d.b.string()}},
               {{"difference", d.out.string()}}, 0};
    if (!d.overlay.empty()) {
        tools::write_png(overlay_slice(a, b, d.axis, index), d.overlay);
        m.outputs["overlay"] = d.overlay.string();
    }
    say(common, "diffimg: slice " + std::to_string(index) + " on axis " + std::to_string(d.axis) + " -> " +
                    d.out.string());
    return m;
}

int dispatch(int argc, char** argv);

} // namespace

int main(int argc, char** argv)
{
    return dispatch(argc, argv);
}

namespace {

int dispatch(int argc, char** argv)
{
    std::vector<std::string> args(argv, argv + argc);
    CLI::App app{"Inverse-consistent adversarial deformable registration of 3D volumes."};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", kArtifactVersion);
    Common common;
    app.add_option("--threads", common.threads, "worker threads")->capture_default_str();
    app.add_flag("--deterministic", common.deterministic, "single-threaded, bit-reproducible run");
    app.add_flag("-q,--quiet", common.quiet, "suppress progress output");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a deformed synthetic volume pair with ground truth");
    Binder<SynthConfig> synth_cfg(synth);
    SynthArgs synth_args;
    synth->add_option("--dims", synth_args.dims, "volume size in voxels: N or NX NY NZ (default 64)")->expected(1, 3);
    synth->add_option("--spacing", synth_args.spacing, "voxel spacing sx sy sz in mm (default 1 1 1)")->expected(3);
    synth_cfg.add("--blobs", [](SynthConfig& c) -> int& { return c.blob_count; }, "number of Gaussian blobs");
    synth_cfg.add("--blob-sigma-min", [](SynthConfig& c) -> double& { return c.blob_sigma_range[0]; },
                  "smallest blob sigma (voxels)");
    synth_cfg.add("--blob-sigma-max", [](SynthConfig& c) -> double& { return c.blob_sigma_range[1]; },
                  "largest blob sigma (voxels)");
    synth_cfg.add("--amplitude", [](SynthConfig& c) -> double& { return c.field_amplitude; },
                  "max displacement magnitude (voxels)");
    synth_cfg.add("--smoothness", [](SynthConfig& c) -> double& { return c.field_smoothness; },
                  "field smoothing sigma (voxels)");
    synth_cfg.add("--landmarks", [](SynthConfig& c) -> int& { return c.landmark_count; }, "landmark pairs");
    synth_cfg.add("--taper", [](SynthConfig& c) -> int& { return c.taper_width; }, "boundary taper width (voxels)");
    synth_cfg.add("--seed", [](SynthConfig& c) -> std::uint64_t& { return c.seed; }, "random seed");
    synth->add_option("--out", synth_args.out, "output directory")->required();

    // sample
    auto* sample = app.add_subcommand("sample", "draw intensity-weighted patch windows into an archive");
    Binder<SamplerConfig> sampler_cfg(sample);
    SampleArgs sample_args;
    sample->add_option("--source", sample_args.source, "source volume (.ivl)")->required();
    sample->add_option("--target", sample_args.target, "target volume (.ivl)")->required();
    sample->add_option("--count", sample_args.count, "patches to keep")->capture_default_str();
    sample->add_option("--out", sample_args.out, "patch archive (.ivp)")->required();
    sample->add_option("--csv", sample_args.csv, "also write the windows as CSV");
    const auto add_sampler_flags = [](Binder<SamplerConfig>& b, bool with_patch) {
        if (with_patch)
            b.add("--patch-size", [](SamplerConfig& c) -> int& { return c.patch_size; }, "cubic patch edge (voxels)");
        b.add("--low", [](SamplerConfig& c) -> double& { return c.low; }, "lower end of the accepted mean intensity band");
        b.add("--high", [](SamplerConfig& c) -> double& { return c.high; }, "upper end of the accepted band");
        b.add("--decay", [](SamplerConfig& c) -> double& { return c.decay; }, "decay constant above the band");
        b.add("--scale", [](SamplerConfig& c) -> double& { return c.scale; }, "scale of the low-intensity branch");
        b.add("--max-draws", [](SamplerConfig& c) -> std::uint64_t& { return c.max_draws; }, "draw budget");
        b.add("--selection", [](SamplerConfig& c) -> SelectionMode& { return c.mode; }, "weighted or threshold")
            ->transform(CLI::CheckedTransformer(std::map<std::string, SelectionMode>{
                {"weighted", SelectionMode::weighted}, {"threshold", SelectionMode::threshold}}));
        b.add("--threshold", [](SamplerConfig& c) -> double& { return c.fixed_threshold; },
              "minimum mean intensity in threshold mode");
    };
    add_sampler_flags(sampler_cfg, true);
    sampler_cfg.add("--seed", [](SamplerConfig& c) -> std::uint64_t& { return c.seed; }, "random seed");

    // train
    auto* trainc = app.add_subcommand("train", "train the generator and both discriminators");
    Binder<TrainConfig> train_cfg(trainc);
    Binder<SamplerConfig> train_sampler(trainc);
    TrainArgs train_args;
    trainc->add_option("--volume", train_args.volumes, "training volume (.ivl); repeat, all ordered pairs are used");
    trainc->add_option("--archive", train_args.archive, "patch archive from `sample` instead of volumes");
    trainc->add_option("--config", train_args.config, "JSON training config; flags override its fields");
    trainc->add_option("--out", train_args.out, "checkpoint path")->capture_default_str();
    trainc->add_option("--resume", train_args.resume, "continue from a checkpoint");
    trainc->add_option("--log", train_args.log, "per-iteration CSV log (default <out>.log.csv)");
    trainc->add_option("--report-every", train_args.report_every, "progress line interval (0: off)")
        ->capture_default_str();
    train_cfg.add("--iterations", [](TrainConfig& c) -> std::int64_t& { return c.iterations; }, "total iterations");
    train_cfg.add("--batch-size", [](TrainConfig& c) -> int& { return c.batch_size; }, "patch pairs per step");
    train_cfg.add("--lr-generator", [](TrainConfig& c) -> double& { return c.lr_generator; }, "generator step size");
    train_cfg.add("--lr-discriminator", [](TrainConfig& c) -> double& { return c.lr_discriminator; },
                  "discriminator step size");
    train_cfg.add("--beta1", [](TrainConfig& c) -> double& { return c.beta1; }, "first moment decay");
    train_cfg.add("--beta2", [](TrainConfig& c) -> double& { return c.beta2; }, "second moment decay");
    train_cfg.add("--clip-norm", [](TrainConfig& c) -> double& { return c.clip_norm; }, "global gradient norm clip");
    train_cfg.add("--patches-per-pair", [](TrainConfig& c) -> int& { return c.patches_per_pair; },
                  "windows drawn per ordered volume pair");
    train_cfg.add("--lambda", [](TrainConfig& c) -> double& { return c.loss.lambda_adv; }, "adversarial weight");
    train_cfg.flag("--no-adversarial", [](TrainConfig& c) -> bool& { return c.adversarial_enabled; }, false,
                   "disable the discriminators");
    train_cfg.add("--checkpoint-every", [](TrainConfig& c) -> std::int64_t& { return c.checkpoint_every; },
                  "iterations between checkpoints (0: end only)");
    train_cfg.add("--seed", [](TrainConfig& c) -> std::uint64_t& { return c.seed; }, "random seed");
    train_cfg.add("--patch-size", [](TrainConfig& c) -> int& { return c.model.patch_size; },
                  "cubic patch edge (voxels, multiple of 16)");
    train_cfg.add("--base-channels", [](TrainConfig& c) -> int& { return c.model.base_channels; }, "encoder width");
    train_cfg.add("--fine-channels", [](TrainConfig& c) -> int& { return c.model.fine_channels; },
                  "width of the last fusion block and refinement conv");
    train_cfg.add("--leaky-slope", [](TrainConfig& c) -> double& { return c.model.leaky_slope; },
                  "LeakyReLU negative slope");
    train_cfg.add("--flow-init-std", [](TrainConfig& c) -> double& { return c.model.flow_init_std; },
                  "std of the flow head initialisation");
    train_cfg.add("--ncc-window", [](TrainConfig& c) -> int& { return c.loss.ncc_window; }, "NCC window (voxels, odd)");
    train_cfg.add("--ncc-epsilon", [](TrainConfig& c) -> double& { return c.loss.epsilon; }, "NCC variance floor");
    add_sampler_flags(train_sampler, false);

    // register
    auto* reg = app.add_subcommand("register", "register a volume pair with a trained checkpoint");
    RegisterArgs reg_args;
    reg->add_option("--checkpoint", reg_args.checkpoint, "trained checkpoint")->required();
    reg->add_option("--source", reg_args.source, "moving volume (.ivl)")->required();
    reg->add_option("--target", reg_args.target, "fixed volume (.ivl)")->required();
    reg->add_option("--overlap", reg_args.overlap, "tile overlap in voxels (default patch/4)");
    reg->add_option("--mi-bins", reg_args.mi_bins, "histogram bins for MI")->capture_default_str();
    reg->add_option("--out", reg_args.out, "output directory")->required();

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "similarity and landmark metrics of a registration");
    EvaluateArgs eval_args;
    eval->add_option("--source", eval_args.source, "moving volume before registration")->required();
    eval->add_option("--target", eval_args.target, "fixed volume")->required();
    eval->add_option("--registered", eval_args.registered, "moving volume after registration")->required();
    eval->add_option("--field", eval_args.field, "displacement field (.ivf, voxels) for landmark transport");
    eval->add_option("--landmarks-fixed", eval_args.lm_fixed, "reference landmarks CSV (voxels)");
    eval->add_option("--landmarks-moving", eval_args.lm_moving, "landmarks moved by --field (voxels)");
    eval->add_option("--spacing", eval_args.spacing, "override spacing sx sy sz (mm)")->expected(3);
    eval->add_option("--mi-bins", eval_args.mi_bins, "histogram bins for MI")->capture_default_str();
    eval->add_option("--out", eval_args.out, "output directory")->required();

    // landmarks
    auto* lms = app.add_subcommand("landmarks", "landmark distances (mm) after transport by a field");
    LandmarkArgs lm_args;
    lms->add_option("--fixed", lm_args.fixed, "reference landmarks CSV (voxels)")->required();
    lms->add_option("--moving", lm_args.moving, "landmarks moved by the field (voxels)")->required();
    lms->add_option("--field", lm_args.field, "displacement field (.ivf, voxels)")->required();
    lms->add_option("--spacing", lm_args.spacing, "override spacing sx sy sz (mm)")->expected(3);
    lms->add_flag("--nearest", lm_args.nearest, "nearest-voxel field lookup instead of trilinear");
    lms->add_option("--out", lm_args.out, "CSV table (a .json twin is written beside it)")->required();

    // diffimg
    auto* diff = app.add_subcommand("diffimg", "difference and overlay slice renders (PNG)");
    DiffArgs diff_args;
    diff->add_option("--a", diff_args.a, "first volume, e.g. the registered one")->required();
    diff->add_option("--b", diff_args.b, "second volume, e.g. the reference")->required();
    diff->add_option("--axis", diff_args.axis, "slice normal: 0 x, 1 y, 2 z")->capture_default_str();
    diff->add_option("--index", diff_args.index, "slice index in voxels (default middle)");
    diff->add_option("--out", diff_args.out, "difference PNG")->required();
    diff->add_option("--overlay", diff_args.overlay, "red/green overlay PNG (b red, a green)");

    // replay
    auto* replay = app.add_subcommand("replay", "re-run the command recorded in a manifest");
    fs::path replay_manifest;
    replay->add_option("manifest", replay_manifest, "manifest.json written by an earlier run")->required();

    attach_env(app);

    if (argc > 1 && argv[1][0] != '-') {
        bool known = false;
        for (const auto* sub : app.get_subcommands([](CLI::App*) { return true; }))
            known = known || sub->get_name() == argv[1];
        if (!known) {
            std::cerr << "unknown subcommand: " << argv[1] << "\nRun with --help for more information.\n";
            return Exit::usage;
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return Exit::usage;
    }

    if (replay->parsed()) {
        try {
            std::ifstream in(replay_manifest);
            if (!in)
                throw FormatError("cannot open " + replay_manifest.string());
            const auto manifest = json::parse(in);
            const auto recorded = manifest.at("argv").get<std::vector<std::string>>();
            for (const auto& [key, value] : manifest.value("environment", json::object()).items())
                ::setenv(key.c_str(), value.get<std::string>().c_str(), 1);
            if (recorded.size() < 2 || recorded[1] == "replay")
                throw DataError("manifest has no replayable command");
            std::vector<char*> ptrs;
            auto copy = recorded;
            for (auto& s : copy)
                ptrs.push_back(s.data());
            return dispatch(static_cast<int>(ptrs.size()), ptrs.data());
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            return Exit::data;
        }
    }

    set_thread_count(common.deterministic ? 1 : common.threads);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        Manifest m;
        fs::path manifest_path;
        if (synth->parsed()) {
            SynthConfig cfg;
            synth_cfg.apply(cfg);
            m = run_synth(cfg, synth_args, common);
            manifest_path = synth_args.out / "manifest.json";
        } else if (sample->parsed()) {
            SamplerConfig cfg;
            sampler_cfg.apply(cfg);
            m = run_sample(cfg, sample_args, common);
            manifest_path = sample_args.out.string() + ".manifest.json";
        } else if (trainc->parsed()) {
            TrainConfig cfg;
            if (!train_args.config.empty()) {
                std::ifstream in(train_args.config);
                if (!in)
                    throw FormatError("cannot open " + train_args.config.string());
                try {
                    cfg = json::parse(in).get<TrainConfig>();
                } catch (const json::exception& e) {
                    throw FormatError(train_args.config.string() + ": " + e.what());
                }
            }
            const auto apply_flags = [&](TrainConfig& c) {
                train_cfg.apply(c);
                train_sampler.apply(c.sampler);
            };
            apply_flags(cfg);
            m = run_train(cfg, apply_flags, train_args, common);
            manifest_path = train_args.out.string() + ".manifest.json";
        } else if (reg->parsed()) {
            m = run_register(reg_args, common);
            manifest_path = reg_args.out / "manifest.json";
        } else if (eval->parsed()) {
            m = run_evaluate(eval_args, common);
            manifest_path = eval_args.out / "manifest.json";
        } else if (lms->parsed()) {
            m = run_landmarks(lm_args, common);
            manifest_path = lm_args.out.string() + ".manifest.json";
        } else if (diff->parsed()) {
            m = run_diffimg(diff_args, common);
            manifest_path = diff_args.out.string() + ".manifest.json";
        }
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_manifest(m, args, common, manifest_path, wall);
        return Exit::ok;
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return Exit::usage;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return Exit::numerical;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << '\n';
        return Exit::data;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return Exit::data;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return Exit::data;
    }
}

} // namespace
