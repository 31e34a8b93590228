/**
 * chaintok command line: train-tokenizer, train-ar, encode, decode,
 * generate, shrink, probe, search, metrics.
 *
 * Every command takes --seed and --out and is reproducible from its persisted
 * config plus that seed. Dataset flags select either the synthetic corpus
 * (--synth-n/--min-len/--max-len/--data-seed) or explicit coordinate files.
 */
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "chaintok/pipeline.hpp"

using namespace chaintok;
namespace fs = std::filesystem;

namespace {

struct DatasetFlags {
    int synth_n = 256;
    int min_len = 24;
    int max_len = 64;
    uint64_t data_seed = 7;
    std::vector<std::string> files;

    void attach(CLI::App* cmd) {
        cmd->add_option("--synth-n", synth_n, "synthetic corpus size");
        cmd->add_option("--min-len", min_len, "minimum chain length");
        cmd->add_option("--max-len", max_len, "maximum chain length");
        cmd->add_option("--data-seed", data_seed, "corpus generator seed");
        cmd->add_option("--data", files, "coordinate files instead of synthetic data");
    }
    pipeline::DatasetSpec spec() const {
        pipeline::DatasetSpec s;
        s.n = synth_n;
        s.corpus.min_len = min_len;
        s.corpus.max_len = max_len;
        s.seed = data_seed;
        s.files = files;
        return s;
    }
};

ar::StopRule parse_stop(const std::string& text) {
    if (text.rfind("fixed:", 0) == 0) return ar::StopRule::fixed(std::stoi(text.substr(6)));
    if (text.rfind("finite:", 0) == 0) {
        return ar::StopRule::finite(std::stod(text.substr(7)));
    }
    if (text == "spline") return ar::StopRule::spline();
    if (text.rfind("spline:", 0) == 0) {
        return ar::StopRule::spline(std::stod(text.substr(7)));
    }
    throw CLI::ValidationError("--stop", "expected fixed:<n>, finite:<H>, or spline[:scale]");
}

ar::SampleRule parse_sampler(const std::string& text, double temperature) {
    if (text.rfind("nucleus:", 0) == 0) {
        return ar::SampleRule::nucleus(std::stod(text.substr(8)), temperature);
    }
    if (text.rfind("minp:", 0) == 0) {
        return ar::SampleRule::minp(std::stod(text.substr(5)), temperature);
    }
    throw CLI::ValidationError("--sampler", "expected nucleus:<p> or minp:<r>");
}

void apply_sampler_json(const nlohmann::json& j, sampler::SamplerConfig& cfg) {
    if (!j.is_object()) return;
    cfg.steps = j.value("steps", cfg.steps);
    cfg.eta = j.value("eta", cfg.eta);
    cfg.gamma = j.value("gamma", cfg.gamma);
    if (j.contains("alpha")) {
        cfg.alpha = j["alpha"];
        cfg.annealing = true;
    }
    if (j.value("mode", "") == std::string("sde")) cfg.mode = sampler::Mode::Sde;
}

void sampler_flags(CLI::App* cmd, sampler::SamplerConfig& cfg) {
    cmd->add_option("--steps", cfg.steps, "integration steps (default 40)");
    cmd->add_option("--eta", cfg.eta, "score annealing strength");
    cmd->add_option("--gamma", cfg.gamma, "SDE noise scale");
    cmd->add_option_function<double>(
        "--alpha",
        [&cfg](double a) {
            cfg.alpha = a;
            cfg.annealing = true;
        },
        "classifier annealing exponent (enables annealing)");
    cmd->add_option_function<std::string>(
        "--mode",
        [&cfg](const std::string& m) {
            if (m == "ode") {
                cfg.mode = sampler::Mode::Ode;
            } else if (m == "sde") {
                cfg.mode = sampler::Mode::Sde;
            } else {
                throw CLI::ValidationError("--mode", "ode or sde");
            }
        },
        "ode|sde");
}

void save_run_config(const std::string& out_dir, const nlohmann::json& j) {
    fs::create_directories(out_dir);
    std::ofstream f(out_dir + "/run_config.json");
    f << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive coarse-to-fine tokenization for 3D chain structures"};
    app.require_subcommand(1);

    uint64_t seed = 0;
    std::string out_dir = "out";
    std::string config_path;
    app.add_option("--seed", seed, "global seed")->capture_default_str();
    app.add_option("--out", out_dir, "output directory")->capture_default_str();
    app.add_option("--config", config_path,
                   "JSON config seeding defaults (flags still override)");

    // config defaults load before parsing so explicit flags win
    nlohmann::json file_cfg = nlohmann::json::object();
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") {
            std::ifstream f(argv[i + 1]);
            if (!f) {
                std::cerr << "error: cannot open config " << argv[i + 1] << "\n";
                return 1;
            }
            f >> file_cfg;
        }
    }

    // ---- train-tokenizer
    auto* tt = app.add_subcommand("train-tokenizer", "train the diffusion autoencoder");
    DatasetFlags tt_data;
    tt_data.attach(tt);
    pipeline::TokenizerTrainConfig tt_cfg;
    tt_cfg.model = model::desk_scale_config();
    if (file_cfg.contains("tokenizer_model")) {
        tt_cfg.model = model::config_from_json(file_cfg["tokenizer_model"]);
    }
    if (file_cfg.contains("train")) {
        const auto& t = file_cfg["train"];
        tt_cfg.steps = t.value("steps", tt_cfg.steps);
        tt_cfg.batch_size = t.value("batch", tt_cfg.batch_size);
        tt_cfg.adam.lr = t.value("lr", tt_cfg.adam.lr);
        tt_cfg.lr_min = t.value("lr_min", tt_cfg.lr_min);
    }
    double tt_heldout = 0.1;
    tt->add_option("--train-steps", tt_cfg.steps, "optimizer steps")->capture_default_str();
    tt->add_option("--batch", tt_cfg.batch_size, "chains per step")->capture_default_str();
    tt->add_option("--lr", tt_cfg.adam.lr, "learning rate")->capture_default_str();
    tt->add_option("--enc-layers", tt_cfg.model.encoder.layers);
    tt->add_option("--enc-channels", tt_cfg.model.encoder.channels);
    tt->add_option("--enc-heads", tt_cfg.model.encoder.heads);
    tt->add_option("--dec-layers", tt_cfg.model.decoder.layers);
    tt->add_option("--dec-channels", tt_cfg.model.decoder.channels);
    tt->add_option("--dec-heads", tt_cfg.model.decoder.heads);
    tt->add_option("--k-max", tt_cfg.model.quant.k_max, "max conditioning tokens");
    tt->add_option("--levels", tt_cfg.model.quant.levels, "FSQ levels per channel");
    tt->add_option("--lambda-size", tt_cfg.model.loss.lambda_size)->capture_default_str();
    tt->add_option("--eval-every", tt_cfg.eval_every)->capture_default_str();
    tt->add_option("--heldout", tt_heldout, "held-out fraction")->capture_default_str();
    tt->add_option("--resume", tt_cfg.resume_from, "resume from checkpoint");
    tt->add_option_function<std::string>(
        "--time-dist",
        [&](const std::string& d) {
            tt_cfg.model.train.time_dist = (d == "uniform") ? model::TimeDist::Uniform
                                                            : model::TimeDist::LogitNormal;
        },
        "logit_normal|uniform");

    // ---- train-ar
    auto* ta = app.add_subcommand("train-ar", "train the autoregressive prior");
    DatasetFlags ta_data;
    ta_data.attach(ta);
    pipeline::ArTrainConfig ta_cfg;
    if (file_cfg.contains("ar_model")) {
        ta_cfg.model = ar::ar_config_from_json(file_cfg["ar_model"]);
    }
    std::string ta_tok_ckpt;
    ta->add_option("--tokenizer", ta_tok_ckpt, "tokenizer checkpoint")->required();
    ta->add_option("--train-steps", ta_cfg.steps)->capture_default_str();
    ta->add_option("--batch", ta_cfg.batch_docs)->capture_default_str();
    ta->add_option("--lr", ta_cfg.adam.lr)->capture_default_str();
    ta->add_option("--layers", ta_cfg.model.layers)->capture_default_str();
    ta->add_option("--channels", ta_cfg.model.channels)->capture_default_str();
    ta->add_option("--heads", ta_cfg.model.heads)->capture_default_str();
    ta->add_flag_function(
        "--no-packing", [&](int64_t) { ta_cfg.packed = false; }, "one document per row");

    // ---- encode
    auto* en = app.add_subcommand("encode", "coordinates to token files");
    std::string en_ckpt;
    std::vector<std::string> en_files;
    en->add_option("--tokenizer", en_ckpt)->required();
    en->add_option("files", en_files, "coordinate files (.coords/.txt or .pdb)")->required();

    // ---- decode
    auto* de = app.add_subcommand("decode", "token files to coordinates");
    std::string de_ckpt, de_reference;
    std::vector<std::string> de_files;
    pipeline::DecodeOptions de_opt;
    std::vector<int> de_sweep;
    de->add_option("--tokenizer", de_ckpt)->required();
    de->add_option("files", de_files, "token files")->required();
    de->add_option("--k", de_opt.k, "prefix length (0 = all)");
    de->add_option("--force-size", de_opt.force_size, "decode length (0 = predicted)");
    de->add_option("--sweep", de_sweep, "prefix lengths for an RMSD/TM sweep");
    de->add_option("--reference", de_reference, "original coordinates for the sweep");
    sampler::SamplerConfig de_dec;
    apply_sampler_json(file_cfg.value("sampler", nlohmann::json()), de_dec);
    sampler_flags(de, de_dec);

    // ---- generate
    auto* ge = app.add_subcommand("generate", "sample structures from the prior");
    std::string ge_tok, ge_ar, ge_stop = "fixed:16", ge_sampler = "nucleus:0.9";
    pipeline::GenerateOptions ge_opt;
    double ge_temp = 1.0;
    bool ge_self = false;
    ge->add_option("--tokenizer", ge_tok)->required();
    ge->add_option("--ar", ge_ar)->required();
    ge->add_option("--n", ge_opt.n, "samples")->capture_default_str();
    ge->add_option("--stop", ge_stop, "fixed:<n> | finite:<H> | spline[:scale]")
        ->capture_default_str();
    ge->add_option("--sampler", ge_sampler, "nucleus:<p> | minp:<r>")->capture_default_str();
    ge->add_option("--temperature", ge_temp)->capture_default_str();
    ge->add_flag("--self-consistency", ge_self, "re-encode round trip metrics");
    bool ge_no_annealing = false;
    ge->add_flag("--no-annealing", ge_no_annealing, "pure conditional decoding");
    sampler::SamplerConfig ge_dec;
    ge_dec.annealing = true;  // generation default: linear ramp, alpha 1
    apply_sampler_json(file_cfg.value("sampler", nlohmann::json()), ge_dec);
    sampler_flags(ge, ge_dec);

    // ---- shrink
    auto* sh = app.add_subcommand("shrink", "forced-size decodes of one structure");
    std::string sh_tok, sh_file;
    std::vector<double> sh_fracs{1.0, 0.9, 0.8};
    sh->add_option("--tokenizer", sh_tok)->required();
    sh->add_option("--input", sh_file, "coordinate file")->required();
    sh->add_option("--fractions", sh_fracs, "target fractions of the input length")
        ->capture_default_str();
    sampler::SamplerConfig sh_dec;
    apply_sampler_json(file_cfg.value("sampler", nlohmann::json()), sh_dec);
    sampler_flags(sh, sh_dec);

    // ---- probe
    auto* pr = app.add_subcommand("probe", "class probes on token representations");
    DatasetFlags pr_data;
    pr_data.attach(pr);
    std::string pr_tok;
    pipeline::ProbeConfig pr_cfg;
    pr->add_option("--tokenizer", pr_tok)->required();
    pr->add_option("--probe-steps", pr_cfg.steps)->capture_default_str();
    pr->add_option("--hidden", pr_cfg.hidden)->capture_default_str();

    // ---- search
    auto* se = app.add_subcommand("search", "beam search with a global reward");
    std::string se_tok, se_ar, se_reward = "beta", se_prefill;
    pipeline::SearchOptions se_opt;
    DatasetFlags se_data;
    se_data.attach(se);
    se->add_option("--tokenizer", se_tok)->required();
    se->add_option("--ar", se_ar)->required();
    se->add_option("--reward", se_reward,
                   "beta | class:<label> | external:<command>")->capture_default_str();
    se->add_option("--beam", se_opt.beam.width)->capture_default_str();
    se->add_option("--fanout", se_opt.beam.fanout)->capture_default_str();
    se->add_option("--lambda", se_opt.beam.lambda)->capture_default_str();
    se->add_option("--beam-max-len", se_opt.beam.max_len)->capture_default_str();
    se->add_option("--rollout-steps", se_opt.mini_rollout_steps)->capture_default_str();
    se->add_option("--prefill", se_prefill, "<coords-file>:<n> frozen prefix");
    sampler::SamplerConfig se_dec;
    apply_sampler_json(file_cfg.value("sampler", nlohmann::json()), se_dec);
    sampler_flags(se, se_dec);

    // ---- metrics
    auto* me = app.add_subcommand("metrics", "pairwise RMSD/TM + Frechet distance");
    std::string me_tok;
    std::vector<std::string> me_a, me_b;
    me->add_option("--tokenizer", me_tok, "optional checkpoint for Frechet features");
    me->add_option("--set-a", me_a, "first file set")->required();
    me->add_option("--set-b", me_b, "second file set")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (tt->parsed()) {
            tt_cfg.seed = seed;
            save_run_config(out_dir, {{"command", "train-tokenizer"},
                                      {"seed", seed},
                                      {"steps", tt_cfg.steps},
                                      {"model", model::config_to_json(tt_cfg.model)}});
            const std::string ckpt =
                pipeline::cmd_train_tokenizer(tt_cfg, tt_data.spec(), tt_heldout, out_dir);
            std::cout << "checkpoint: " << ckpt << "\n";
        } else if (ta->parsed()) {
            ta_cfg.seed = seed;
            {
                model::TokenizerModel tok = model::TokenizerModel::load(ta_tok_ckpt);
                ta_cfg.model.codebook_size = tok.config().quant.codebook_size();
                ta_cfg.model.k_max = tok.config().quant.k_max;
            }
            save_run_config(out_dir, {{"command", "train-ar"},
                                      {"seed", seed},
                                      {"steps", ta_cfg.steps},
                                      {"model", ar::ar_config_to_json(ta_cfg.model)}});
            const std::string ckpt =
                pipeline::cmd_train_ar(ta_cfg, ta_data.spec(), ta_tok_ckpt, out_dir);
            std::cout << "checkpoint: " << ckpt << "\n";
        } else if (en->parsed()) {
            auto outs = pipeline::cmd_encode(en_ckpt, en_files, out_dir);
            for (const auto& o : outs) std::cout << o << "\n";
        } else if (de->parsed()) {
            de_opt.dec = de_dec;
            de_opt.dec.seed = seed;
            de_opt.sweep = de_sweep;
            de_opt.reference_file = de_reference;
            auto outs = pipeline::cmd_decode(de_ckpt, de_files, de_opt, out_dir);
            for (const auto& o : outs) std::cout << o << "\n";
        } else if (ge->parsed()) {
            ge_opt.stop = parse_stop(ge_stop);
            ge_opt.rule = parse_sampler(ge_sampler, ge_temp);
            ge_opt.dec = ge_dec;
            if (ge_no_annealing) ge_opt.dec.annealing = false;
            ge_opt.seed = seed;
            ge_opt.self_consistency = ge_self;
            save_run_config(out_dir, {{"command", "generate"},
                                      {"seed", seed},
                                      {"n", ge_opt.n},
                                      {"stop", ge_stop},
                                      {"sampler", ge_sampler}});
            pipeline::GenerateReport rep = pipeline::cmd_generate(ge_tok, ge_ar, ge_opt, out_dir);
            std::cout << "samples: " << rep.rows.size() << "\n";
            if (rep.rows.size() >= 2) {
                std::cout << "tokens: " << rep.token_stats.mean << " +- "
                          << rep.token_stats.stddev << "\n";
            }
            if (rep.mean_self_tm >= 0) {
                std::cout << "self-consistency TM: " << rep.mean_self_tm
                          << "  token agreement: " << rep.token_agreement << "\n";
            }
        } else if (sh->parsed()) {
            sh_dec.seed = seed;
            pipeline::ShrinkReport rep =
                pipeline::cmd_shrink(sh_tok, sh_file, sh_fracs, sh_dec, out_dir);
            for (size_t i = 0; i < rep.fractions.size(); ++i) {
                std::cout << rep.fractions[i] << " -> L=" << rep.sizes[i]
                          << " TM=" << rep.tm_to_original[i] << " helix=" << rep.helix_frac[i]
                          << "\n";
            }
        } else if (pr->parsed()) {
            pr_cfg.seed = seed;
            pipeline::ProbeReport rep =
                pipeline::cmd_probe(pr_tok, pr_data.spec(), pr_cfg, out_dir);
            std::cout << "feature dim: " << rep.feature_dim << "\n";
            std::cout << "mlp prefix: " << rep.mlp_prefix_acc
                      << "  mlp mean-pool: " << rep.mlp_meanpool_acc << "\n";
            std::cout << "linear prefix: " << rep.linear_prefix_acc
                      << "  linear mean-pool: " << rep.linear_meanpool_acc << "\n";
        } else if (se->parsed()) {
            se_opt.reward = se_reward;
            se_opt.classifier_data = se_data.spec();
            se_opt.prefill_file = se_prefill;
            se_opt.beam.seed = seed;
            se_opt.dec = se_dec;
            pipeline::SearchReport rep = pipeline::cmd_search(se_tok, se_ar, se_opt, out_dir);
            std::cout << "objective: " << rep.objective << "  reward: " << rep.reward << "\n";
            std::cout << "tokens:";
            for (int t : rep.tokens) std::cout << " " << t;
            std::cout << "\n";
            if (!rep.structure_file.empty()) {
                std::cout << "structure: " << rep.structure_file << "\n";
            }
        } else if (me->parsed()) {
            pipeline::MetricsReport rep = pipeline::cmd_metrics(me_tok, me_a, me_b, out_dir);
            std::cout << "pairs: " << rep.rows.size() << "\n";
            if (rep.frechet >= 0) std::cout << "frechet: " << rep.frechet << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
