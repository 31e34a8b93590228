#include "chaintok/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "nn_util.hpp"

namespace fs = std::filesystem;

namespace chaintok::pipeline {

using geometry::CoordSet;

namespace {

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

double now_s() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::vector<int> sample_batch(int pool, int want, Rng& rng) {
    std::vector<int> idx(pool);
    std::iota(idx.begin(), idx.end(), 0);
    if (want >= pool) return idx;
    // partial Fisher-Yates
    for (int i = 0; i < want; ++i) {
        int j = static_cast<int>(rng.uniform_int(i, pool - 1));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(want);
    return idx;
}

}  // namespace

std::vector<geometry::LabeledChain> load_dataset(const DatasetSpec& spec) {
    if (!spec.files.empty()) {
        std::vector<geometry::LabeledChain> out;
        for (const std::string& f : spec.files) {
            geometry::LabeledChain lc;
            lc.coords = fs::path(f).extension() == ".pdb" ? geometry::read_pdb_ca(f)
                                                          : geometry::read_coords(f);
            lc.coords = geometry::center(lc.coords);
            lc.label = 0;
            out.push_back(std::move(lc));
        }
        return out;
    }
    return geometry::synth_corpus(spec.n, spec.corpus, spec.seed);
}

// ---- tokenizer training ---------------------------------------------------------

model::TokenizerModel train_tokenizer(const TokenizerTrainConfig& cfg,
                                      const std::vector<CoordSet>& train,
                                      const std::vector<CoordSet>& heldout,
                                      TokenizerTrainResult* result, Adam* opt_out) {
    if (train.empty()) throw std::invalid_argument("train_tokenizer: empty dataset");
    Adam opt(cfg.adam);
    model::TokenizerModel tok =
        cfg.resume_from.empty()
            ? model::TokenizerModel(cfg.model, cfg.seed)
            : model::TokenizerModel::load(cfg.resume_from, &opt);

    Rng base(cfg.seed);
    TokenizerTrainResult local;
    TokenizerTrainResult& log = result ? *result : local;
    const int start_step = static_cast<int>(opt.step_count());
    for (int step = start_step; step < cfg.steps; ++step) {
        if (cfg.lr_min >= 0.0f) {
            const double frac = static_cast<double>(step) / std::max(cfg.steps - 1, 1);
            opt.set_lr(cfg.lr_min + 0.5f * (cfg.adam.lr - cfg.lr_min) *
                                       static_cast<float>(1.0 + std::cos(M_PI * frac)));
        }
        Rng srng = base.derive(static_cast<uint64_t>(step));
        std::vector<int> idx =
            sample_batch(static_cast<int>(train.size()), cfg.batch_size, srng);
        std::vector<CoordSet> batch;
        batch.reserve(idx.size());
        for (int i : idx) batch.push_back(train[i]);
        model::StepLosses l = tok.training_step(batch, opt, srng);

        TrainLogRow row;
        row.step = step + 1;
        row.flow = l.flow;
        row.size = l.size;
        if (cfg.eval_every > 0 && !heldout.empty() &&
            ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps)) {
            std::vector<CoordSet> ev(heldout.begin(),
                                     heldout.begin() +
                                         std::min<size_t>(heldout.size(), cfg.eval_chains));
            ReconStats rs = eval_reconstruction(tok, ev, 0, cfg.eval_ode_steps,
                                                cfg.seed ^ 0xe7a1ull);
            row.eval_rmsd_ang = rs.mean_rmsd_ang;
            row.eval_tm = rs.mean_tm;
        }
        log.log.push_back(row);
        if (step == start_step) log.first_flow = l.flow;
        log.last_flow = l.flow;
    }
    if (opt_out) *opt_out = opt;
    return tok;
}

// ---- AR training ------------------------------------------------------------------

ar::ArModel train_ar(const ArTrainConfig& cfg, const std::vector<std::vector<int>>& docs,
                     ArTrainResult* result, Adam* opt_out) {
    if (docs.empty()) throw std::invalid_argument("train_ar: empty token corpus");
    Adam opt(cfg.adam);
    ar::ArModel m(cfg.model, cfg.seed);
    Rng base(cfg.seed);
    for (int step = 0; step < cfg.steps; ++step) {
        if (cfg.lr_min >= 0.0f) {
            const double frac = static_cast<double>(step) / std::max(cfg.steps - 1, 1);
            opt.set_lr(cfg.lr_min + 0.5f * (cfg.adam.lr - cfg.lr_min) *
                                       static_cast<float>(1.0 + std::cos(M_PI * frac)));
        }
        Rng srng = base.derive(static_cast<uint64_t>(step));
        std::vector<int> idx = sample_batch(static_cast<int>(docs.size()), cfg.batch_docs, srng);
        std::vector<std::vector<int>> batch;
        batch.reserve(idx.size());
        for (int i : idx) batch.push_back(docs[i]);
        double loss = m.train_step(batch, opt, cfg.packed);
        if (result && (step % 10 == 0 || step + 1 == cfg.steps)) {
            result->loss_log.emplace_back(step + 1, loss);
        }
    }
    if (opt_out) *opt_out = opt;
    return m;
}

std::pair<std::vector<std::vector<int>>, int> tokenize_corpus(
    const model::TokenizerModel& tok, const std::vector<CoordSet>& chains,
    const std::string& cache_dir) {
    ensure_dir(cache_dir);
    std::vector<std::vector<int>> docs;
    docs.reserve(chains.size());
    int reused = 0;
    for (size_t i = 0; i < chains.size(); ++i) {
        const std::string path = cache_dir + "/chain_" + std::to_string(i) + ".tok";
        if (fs::exists(path)) {
            fsq::TokenFile tf = fsq::read_tokens(path);
            docs.push_back(tf.tokens.codes);
            ++reused;
            continue;
        }
        fsq::TokenSequence t = tok.encode(geometry::center(chains[i]));
        fsq::write_tokens(t, tok.config().quant, path);
        docs.push_back(t.codes);
    }
    return {docs, reused};
}

// ---- reconstruction ------------------------------------------------------------------

CoordSet reconstruct(const model::TokenizerModel& tok, const CoordSet& chain, int k,
                     const sampler::SamplerConfig& dec, bool force_true_size) {
    CoordSet centered = geometry::center(chain);
    fsq::TokenSequence tokens = tok.encode(centered);
    if (k > 0) tokens = fsq::nested_dropout(tokens, std::min(k, tokens.size()));
    return sampler::decode_structure(
        tok, tokens,
        force_true_size ? sampler::SizeSource::Forced : sampler::SizeSource::Predicted,
        force_true_size ? centered.length() : 0, dec);
}

ReconStats eval_reconstruction(const model::TokenizerModel& tok,
                               const std::vector<CoordSet>& chains, int k, int ode_steps,
                               uint64_t seed) {
    ReconStats out;
    Rng base(seed);
    for (size_t i = 0; i < chains.size(); ++i) {
        sampler::SamplerConfig dec;
        dec.steps = ode_steps;
        dec.mode = sampler::Mode::Ode;
        dec.seed = base.derive(static_cast<uint64_t>(i)).next_u64();
        CoordSet rec = reconstruct(tok, chains[i], k, dec, true);
        const double rmsd = 10.0 * geometry::kabsch_rmsd(chains[i], rec);
        const double tm = geometry::tm_score(chains[i], rec);
        out.rmsd_ang.push_back(rmsd);
        out.tm.push_back(tm);
        out.mean_rmsd_ang += rmsd;
        out.mean_tm += tm;
    }
    if (!chains.empty()) {
        out.mean_rmsd_ang /= static_cast<double>(chains.size());
        out.mean_tm /= static_cast<double>(chains.size());
    }
    return out;
}

// ---- CSV -------------------------------------------------------------------------------

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_metrics_csv: cannot open " + path);
    f << "# chaintok-csv v1 metrics\n";
    f << "id,length,rmsd_ang,tm,k,mean_entropy,final_entropy,helix_frac,sheet_frac,"
         "coil_frac,wall_s\n";
    f.precision(6);
    for (const MetricsRow& r : rows) {
        f << r.id << "," << r.length << "," << r.rmsd_ang << "," << r.tm << "," << r.k
          << "," << r.mean_entropy << "," << r.final_entropy << "," << r.helix_frac << ","
          << r.sheet_frac << "," << r.coil_frac << "," << r.wall_s << "\n";
    }
}

// ---- commands -----------------------------------------------------------------------

std::string cmd_train_tokenizer(const TokenizerTrainConfig& cfg, const DatasetSpec& data,
                                double heldout_fraction, const std::string& out_dir) {
    ensure_dir(out_dir);
    std::vector<geometry::LabeledChain> all = load_dataset(data);
    if (all.empty()) throw std::invalid_argument("cmd_train_tokenizer: empty dataset");
    const int n_held = std::min<int>(static_cast<int>(all.size() * heldout_fraction),
                                     static_cast<int>(all.size()) - 1);
    std::vector<CoordSet> train, held;
    for (size_t i = 0; i < all.size(); ++i) {
        (static_cast<int>(i) < n_held ? held : train).push_back(all[i].coords);
    }

    TokenizerTrainResult log;
    Adam opt(cfg.adam);
    model::TokenizerModel tok = train_tokenizer(cfg, train, held, &log, &opt);

    const std::string ckpt = out_dir + "/tokenizer.ckpt";
    nlohmann::json extra{{"dataset_seed", data.seed}, {"train_chains", train.size()}};
    tok.save(ckpt, &opt, extra);

    std::ofstream csv(out_dir + "/tokenizer_train.csv");
    csv << "# chaintok-csv v1 tokenizer-train\n";
    csv << "step,flow_loss,size_loss,eval_rmsd_ang,eval_tm\n";
    csv.precision(6);
    plot::Series flow_s{"flow", {}, {}}, rmsd_s{"rmsd", {}, {}};
    for (const TrainLogRow& r : log.log) {
        csv << r.step << "," << r.flow << "," << r.size << "," << r.eval_rmsd_ang << ","
            << r.eval_tm << "\n";
        flow_s.x.push_back(r.step);
        flow_s.y.push_back(r.flow);
        if (r.eval_rmsd_ang >= 0) {
            rmsd_s.x.push_back(r.step);
            rmsd_s.y.push_back(r.eval_rmsd_ang);
        }
    }
    plot::line_chart({flow_s}, "tokenizer flow loss", "step", "loss",
                     out_dir + "/tokenizer_flow.svg");
    if (!rmsd_s.x.empty()) {
        plot::line_chart({rmsd_s}, "held-out reconstruction", "step", "RMSD (A)",
                         out_dir + "/tokenizer_rmsd.svg");
    }
    return ckpt;
}

std::string cmd_train_ar(ArTrainConfig cfg, const DatasetSpec& data,
                         const std::string& tokenizer_ckpt, const std::string& out_dir) {
    ensure_dir(out_dir);
    model::TokenizerModel tok = model::TokenizerModel::load(tokenizer_ckpt);
    if (cfg.model.codebook_size != tok.config().quant.codebook_size()) {
        throw std::invalid_argument(
            "cmd_train_ar: AR codebook " + std::to_string(cfg.model.codebook_size) +
            " != tokenizer codebook " + std::to_string(tok.config().quant.codebook_size()));
    }
    if (cfg.model.k_max < tok.config().quant.k_max) {
        throw std::invalid_argument("cmd_train_ar: AR k_max smaller than tokenizer k_max");
    }
    std::vector<geometry::LabeledChain> all = load_dataset(data);
    std::vector<CoordSet> chains;
    for (auto& lc : all) chains.push_back(lc.coords);
    auto [docs, reused] = tokenize_corpus(tok, chains, out_dir + "/tokens");
    (void)reused;

    ArTrainResult log;
    Adam opt(cfg.adam);
    ar::ArModel m = train_ar(cfg, docs, &log, &opt);
    const std::string ckpt = out_dir + "/ar.ckpt";
    m.save(ckpt, &opt);

    std::ofstream csv(out_dir + "/ar_train.csv");
    csv << "# chaintok-csv v1 ar-train\n";
    csv << "step,loss\n";
    plot::Series s{"loss", {}, {}};
    for (auto [step, loss] : log.loss_log) {
        csv << step << "," << loss << "\n";
        s.x.push_back(step);
        s.y.push_back(loss);
    }
    plot::line_chart({s}, "ar cross-entropy", "step", "loss", out_dir + "/ar_loss.svg");
    return ckpt;
}

std::vector<std::string> cmd_encode(const std::string& tokenizer_ckpt,
                                    const std::vector<std::string>& coord_files,
                                    const std::string& out_dir) {
    ensure_dir(out_dir);
    model::TokenizerModel tok = model::TokenizerModel::load(tokenizer_ckpt);
    std::vector<std::string> outputs;
    for (const std::string& f : coord_files) {
        CoordSet c = fs::path(f).extension() == ".pdb" ? geometry::read_pdb_ca(f)
                                                       : geometry::read_coords(f);
        fsq::TokenSequence t = tok.encode(geometry::center(c));
        const std::string out = out_dir + "/" + stem_of(f) + ".tok";
        fsq::write_tokens(t, tok.config().quant, out);
        outputs.push_back(out);
    }
    return outputs;
}

std::vector<std::string> cmd_decode(const std::string& tokenizer_ckpt,
                                    const std::vector<std::string>& token_files,
                                    const DecodeOptions& opt, const std::string& out_dir) {
    ensure_dir(out_dir);
    model::TokenizerModel tok = model::TokenizerModel::load(tokenizer_ckpt);
    std::vector<std::string> outputs;
    for (const std::string& f : token_files) {
        fsq::TokenFile tf = fsq::read_tokens(f);
        if (tf.config.levels != tok.config().quant.levels) {
            throw std::runtime_error("cmd_decode: token levels of " + f +
                                     " do not match the checkpoint");
        }
        if (!opt.sweep.empty()) {
            if (opt.reference_file.empty()) {
                throw std::invalid_argument("cmd_decode: sweep needs a reference file");
            }
            CoordSet ref = geometry::read_coords(opt.reference_file);
            std::vector<MetricsRow> rows;
            plot::Series rmsd_s{"rmsd", {}, {}};
            for (int k : opt.sweep) {
                fsq::TokenSequence t =
                    fsq::nested_dropout(tf.tokens, std::min(k, tf.tokens.size()));
                const double t0 = now_s();
                CoordSet dec = sampler::decode_structure(
                    tok, t, sampler::SizeSource::Forced, ref.length(), opt.dec);
                MetricsRow r;
                r.id = stem_of(f) + "_k" + std::to_string(k);
                r.length = dec.length();
                r.k = t.size();
                r.rmsd_ang = 10.0 * geometry::kabsch_rmsd(ref, dec);
                r.tm = geometry::tm_score(ref, dec);
                auto sse = geometry::assign_sse(dec);
                r.helix_frac = geometry::sse_fraction(sse, geometry::Sse::Helix);
                r.sheet_frac = geometry::sse_fraction(sse, geometry::Sse::Sheet);
                r.coil_frac = geometry::sse_fraction(sse, geometry::Sse::Coil);
                r.wall_s = now_s() - t0;
                rows.push_back(r);
                rmsd_s.x.push_back(t.size());
                rmsd_s.y.push_back(r.rmsd_ang);
            }
            const std::string csv = out_dir + "/" + stem_of(f) + "_sweep.csv";
            write_metrics_csv(rows, csv);
            plot::line_chart({rmsd_s}, "reconstruction vs tokens", "tokens", "RMSD (A)",
                             out_dir + "/" + stem_of(f) + "_sweep.svg");
            outputs.push_back(csv);
            continue;
        }
        fsq::TokenSequence t = tf.tokens;
        if (opt.k > 0) t = fsq::nested_dropout(t, std::min(opt.k, t.size()));
        CoordSet dec = sampler::decode_structure(
            tok, t, opt.force_size > 0 ? sampler::SizeSource::Forced
                                       : sampler::SizeSource::Predicted,
            opt.force_size, opt.dec);
        const std::string out = out_dir + "/" + stem_of(f) + ".coords";
        geometry::write_coords(dec, out);
        outputs.push_back(out);
    }
    return outputs;
}

GenerateReport cmd_generate(const std::string& tokenizer_ckpt, const std::string& ar_ckpt,
                            const GenerateOptions& opt, const std::string& out_dir) {
    ensure_dir(out_dir);
    model::TokenizerModel tok = model::TokenizerModel::load(tokenizer_ckpt);
    ar::ArModel prior = ar::ArModel::load(ar_ckpt);
    GenerateReport report;
    std::vector<int> ks;
    std::vector<double> self_tms, agreements;
    Rng base(opt.seed);
    std::vector<plot::Series> entropy_series;

    for (int i = 0; i < opt.n; ++i) {
        const double t0 = now_s();
        ar::ArModel::GenResult g = prior.generate(opt.stop, opt.rule,
                                                  base.derive(static_cast<uint64_t>(i)).next_u64());
        if (g.tokens.empty()) continue;
        fsq::TokenSequence tokens = fsq::tokens_from_codes(g.tokens, tok.config().quant);
        sampler::SamplerConfig dec = opt.dec;
        dec.seed = base.derive(0x5eedull + i).next_u64();
        CoordSet coords = sampler::decode_structure(tok, tokens,
                                                    sampler::SizeSource::Predicted, 0, dec);
        const std::string id = "sample_" + std::to_string(i);
        geometry::write_coords(coords, out_dir + "/" + id + ".coords");
        fsq::write_tokens(tokens, tok.config().quant, out_dir + "/" + id + ".tok");
        {
            std::ofstream ecsv(out_dir + "/" + id + "_entropy.csv");
            ecsv << "# chaintok-csv v1 entropy-trace\n";
            ecsv << "step,entropy_nats\n";
            for (size_t s = 0; s < g.trace.entropies.size(); ++s) {
                ecsv << (s + 1) << "," << g.trace.entropies[s] << "\n";
            }
        }
        if (static_cast<int>(entropy_series.size()) < 8) {
            plot::Series es{id, {}, {}};
            for (size_t s = 0; s < g.trace.entropies.size(); ++s) {
                es.x.push_back(static_cast<double>(s + 1));
                es.y.push_back(g.trace.entropies[s]);
            }
            entropy_series.push_back(std::move(es));
        }

        MetricsRow r;
        r.id = id;
        r.length = coords.length();
        r.k = g.k;
        ks.push_back(g.k);
        if (!g.trace.entropies.empty()) {
            r.mean_entropy =
                std::accumulate(g.trace.entropies.begin(), g.trace.entropies.end(), 0.0) /
                g.trace.entropies.size();
            r.final_entropy = g.trace.entropies.back();
        }
        auto sse = geometry::assign_sse(coords);
        r.helix_frac = geometry::sse_fraction(sse, geometry::Sse::Helix);
        r.sheet_frac = geometry::sse_fraction(sse, geometry::Sse::Sheet);
        r.coil_frac = geometry::sse_fraction(sse, geometry::Sse::Coil);

        if (opt.self_consistency) {
            fsq::TokenSequence re = tok.encode(coords);
            const int agree_n = std::min(re.size(), tokens.size());
            int agree = 0;
            for (int a = 0; a < agree_n; ++a) {
                agree += (re.codes[a] == tokens.codes[a]) ? 1 : 0;
            }
            agreements.push_back(agree_n > 0 ? static_cast<double>(agree) / agree_n : 0.0);
            sampler::SamplerConfig dec2 = opt.dec;
            dec2.seed = base.derive(0xc0deull + i).next_u64();
            CoordSet round = sampler::decode_structure(
                tok, re, sampler::SizeSource::Forced, coords.length(), dec2);
            const double tm = geometry::tm_score(coords, round);
            self_tms.push_back(tm);
            r.tm = tm;
        }
        r.wall_s = now_s() - t0;
        report.rows.push_back(r);
    }
    if (ks.size() >= 2) report.token_stats = ar::size_stats(ks);
    if (!self_tms.empty()) {
        report.mean_self_tm = std::accumulate(self_tms.begin(), self_tms.end(), 0.0) /
                              self_tms.size();
        report.token_agreement =
            std::accumulate(agreements.begin(), agreements.end(), 0.0) / agreements.size();
    }
    write_metrics_csv(report.rows, out_dir + "/generate_metrics.csv");
    if (!entropy_series.empty()) {
        plot::line_chart(entropy_series, "entropy traces", "step", "entropy (nats)",
                         out_dir + "/entropy_traces.svg");
    }
    return report;
}

ShrinkReport cmd_shrink(const std::string& tokenizer_ckpt, const std::string& coord_file,
                        const std::vector<double>& fractions,
                        const sampler::SamplerConfig& dec, const std::string& out_dir) {
    ensure_dir(out_dir);
    model::TokenizerModel tok = model::TokenizerModel::load(tokenizer_ckpt);
    CoordSet original = fs::path(coord_file).extension() == ".pdb"
                            ? geometry::read_pdb_ca(coord_file)
                            : geometry::read_coords(coord_file);
    original = geometry::center(original);
    fsq::TokenSequence tokens = tok.encode(original);

    ShrinkReport report;
    Rng base(dec.seed);
    std::ofstream csv(out_dir + "/shrink.csv");
    csv << "# chaintok-csv v1 shrink\n";
    csv << "fraction,size,tm_to_original,helix_frac,file\n";
    for (double f : fractions) {
        const int size = std::max(1, static_cast<int>(std::floor(f * original.length())));
        sampler::SamplerConfig d = dec;
        d.seed = base.derive(static_cast<uint64_t>(size)).next_u64();
        CoordSet shrunk =
            sampler::decode_structure(tok, tokens, sampler::SizeSource::Forced, size, d);
        const double tm = shrink_tm(original, shrunk);
        auto sse = geometry::assign_sse(shrunk);
        const double helix = geometry::sse_fraction(sse, geometry::Sse::Helix);
        std::ostringstream name;
        name << out_dir << "/shrink_" << static_cast<int>(std::lround(f * 100)) << ".coords";
        geometry::write_coords(shrunk, name.str());
        report.fractions.push_back(f);
        report.sizes.push_back(size);
        report.tm_to_original.push_back(tm);
        report.helix_frac.push_back(helix);
        report.files.push_back(name.str());
        csv << f << "," << size << "," << tm << "," << helix << "," << name.str() << "\n";
    }
    return report;
}

// ---- probing -----------------------------------------------------------------------

namespace {

/// Linear or Linear-SiLU-Linear head over fixed-size feature vectors.
class VectorProbe {
public:
    VectorProbe(int in_dim, int classes, int hidden, uint64_t seed)
        : in_dim_(in_dim), classes_(classes), hidden_(hidden) {
        Rng rng(seed);
        if (hidden_ > 0) {
            w1_ = nn::param_randn(params_, "p.l1.w", {in_dim_, hidden_}, rng, 0.05f);
            b1_ = nn::param_zeros(params_, "p.l1.b", {hidden_});
            w2_ = nn::param_randn(params_, "p.l2.w", {hidden_, classes_}, rng, 0.05f);
            b2_ = nn::param_zeros(params_, "p.l2.b", {classes_});
        } else {
            w2_ = nn::param_randn(params_, "p.w", {in_dim_, classes_}, rng, 0.05f);
            b2_ = nn::param_zeros(params_, "p.b", {classes_});
        }
    }

    Tensor forward(const Tensor& x) const {
        if (hidden_ > 0) return nn::linear(silu(nn::linear(x, w1_, b1_)), w2_, b2_);
        return nn::linear(x, w2_, b2_);
    }

    void train(const std::vector<std::vector<double>>& feats, const std::vector<int>& labels,
               int steps, int batch, float lr, uint64_t seed) {
        Adam opt(AdamConfig{lr, 0.9f, 0.999f, 1e-8f, 10.0f});
        Rng base(seed);
        const int n = static_cast<int>(feats.size());
        for (int s = 0; s < steps; ++s) {
            Rng srng = base.derive(static_cast<uint64_t>(s));
            std::vector<int> idx = sample_batch(n, batch, srng);
            std::vector<float> x(static_cast<size_t>(idx.size()) * in_dim_);
            std::vector<int> y(idx.size());
            for (size_t i = 0; i < idx.size(); ++i) {
                for (int j = 0; j < in_dim_; ++j) {
                    x[i * in_dim_ + j] = static_cast<float>(feats[idx[i]][j]);
                }
                y[i] = labels[idx[i]];
            }
            GradTape tape;
            Tensor logits = forward(Tensor::from({static_cast<int>(idx.size()), in_dim_}, x));
            Tensor loss = cross_entropy(logits, y);
            tape.backward(loss);
            opt.step(params_);
        }
    }

    double accuracy(const std::vector<std::vector<double>>& feats,
                    const std::vector<int>& labels) const {
        int correct = 0;
        for (size_t i = 0; i < feats.size(); ++i) {
            std::vector<float> x(feats[i].begin(), feats[i].end());
            Tensor logits = forward(Tensor::from({1, in_dim_}, x));
            correct += (argmax(logits.values()) == labels[i]) ? 1 : 0;
        }
        return feats.empty() ? 0.0 : static_cast<double>(correct) / feats.size();
    }

private:
    int in_dim_, classes_, hidden_;
    NamedParams params_;
    Tensor w1_, b1_, w2_, b2_;
};

}  // namespace

std::vector<double> prefix_features(const model::TokenizerModel& tok,
                                    const CoordSet& chain) {
    fsq::TokenSequence t = tok.encode(geometry::center(chain));
    const fsq::FsqConfig& q = tok.config().quant;
    const int m = q.channels();
    std::vector<double> v(static_cast<size_t>(q.k_max) * m, 0.0);
    for (int i = 0; i < t.size(); ++i) {
        for (int ch = 0; ch < m; ++ch) {
            v[static_cast<size_t>(i) * m + ch] =
                2.0 * t.level_indices[i][ch] / (q.levels[ch] - 1) - 1.0;
        }
    }
    return v;
}

std::vector<double> meanpool_features(const model::TokenizerModel& tok,
                                      const CoordSet& chain) {
    Tensor z = tok.encode_latents(geometry::center(chain));
    Tensor bounded = tanh_act(z);
    const int l = bounded.dim(0), m = bounded.dim(1);
    std::vector<double> v(m, 0.0);
    const float* p = bounded.data();
    for (int i = 0; i < l; ++i) {
        for (int j = 0; j < m; ++j) v[j] += p[i * m + j];
    }
    for (double& x : v) x /= l;
    return v;
}

ProbeReport cmd_probe(const std::string& tokenizer_ckpt, const DatasetSpec& data,
                      const ProbeConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    model::TokenizerModel tok = model::TokenizerModel::load(tokenizer_ckpt);
    std::vector<geometry::LabeledChain> all = load_dataset(data);
    if (all.size() < 8) throw std::invalid_argument("cmd_probe: dataset too small");

    std::vector<std::vector<double>> pf, mf;
    std::vector<int> labels;
    for (const auto& lc : all) {
        pf.push_back(prefix_features(tok, lc.coords));
        mf.push_back(meanpool_features(tok, lc.coords));
        labels.push_back(lc.label);
    }
    const int n = static_cast<int>(all.size());
    const int n_held = std::max(1, static_cast<int>(n * cfg.heldout_fraction));
    auto split = [&](const std::vector<std::vector<double>>& f) {
        std::vector<std::vector<double>> tr(f.begin() + n_held, f.end());
        std::vector<std::vector<double>> he(f.begin(), f.begin() + n_held);
        return std::make_pair(tr, he);
    };
    auto [pf_tr, pf_he] = split(pf);
    auto [mf_tr, mf_he] = split(mf);
    std::vector<int> y_tr(labels.begin() + n_held, labels.end());
    std::vector<int> y_he(labels.begin(), labels.begin() + n_held);

    ProbeReport report;
    report.feature_dim = static_cast<int>(pf[0].size());
    report.chance = 1.0 / geometry::kNumChainClasses;

    auto run = [&](const std::vector<std::vector<double>>& tr,
                   const std::vector<std::vector<double>>& he, int hidden) {
        VectorProbe probe(static_cast<int>(tr[0].size()), geometry::kNumChainClasses,
                          hidden, cfg.seed);
        probe.train(tr, y_tr, cfg.steps, cfg.batch, cfg.lr, cfg.seed ^ 0xabcdull);
        return probe.accuracy(he, y_he);
    };
    report.mlp_prefix_acc = run(pf_tr, pf_he, cfg.hidden);
    report.mlp_meanpool_acc = run(mf_tr, mf_he, cfg.hidden);
    report.linear_prefix_acc = run(pf_tr, pf_he, 0);
    report.linear_meanpool_acc = run(mf_tr, mf_he, 0);

    std::ofstream csv(out_dir + "/probe.csv");
    csv << "# chaintok-csv v1 probe\n";
    csv << "features,head,accuracy\n";
    csv << "prefix,mlp," << report.mlp_prefix_acc << "\n";
    csv << "meanpool,mlp," << report.mlp_meanpool_acc << "\n";
    csv << "prefix,linear," << report.linear_prefix_acc << "\n";
    csv << "meanpool,linear," << report.linear_meanpool_acc << "\n";
    plot::bar_chart({{"prefix-mlp", report.mlp_prefix_acc},
                     {"meanpool-mlp", report.mlp_meanpool_acc},
                     {"prefix-linear", report.linear_prefix_acc},
                     {"meanpool-linear", report.linear_meanpool_acc}},
                    "probe accuracy", "top-1", out_dir + "/probe.svg");
    return report;
}

// ---- search ------------------------------------------------------------------------

search::RewardFn make_external_reward(const model::TokenizerModel& tok,
                                      const std::string& command, int mini_steps,
                                      uint64_t seed, const std::string& workdir) {
    ensure_dir(workdir);
    // capture by value; the closure owns nothing mutable but a counter path
    auto tok_ptr = std::make_shared<model::TokenizerModel>(tok);
    return [tok_ptr, command, mini_steps, seed, workdir](const std::vector<int>& codes) {
        if (codes.empty()) return 0.0;
        fsq::TokenSequence tokens = fsq::tokens_from_codes(codes, tok_ptr->config().quant);
        sampler::SamplerConfig dec;
        dec.steps = mini_steps;
        uint64_t tag = 1469598103934665603ull;
        for (int c : codes) tag = tag * 1099511628211ull + static_cast<uint64_t>(c) + 1;
        dec.seed = Rng(seed).derive(tag).next_u64();
        CoordSet coords = sampler::decode_structure(*tok_ptr, tokens,
                                                    sampler::SizeSource::Predicted, 0, dec);
        const std::string path = workdir + "/candidate_" + std::to_string(tag % 1000000) +
                                 ".coords";
        geometry::write_coords(coords, path);
        std::string cmd = command;
        const std::string placeholder = "{}";
        auto at = cmd.find(placeholder);
        if (at != std::string::npos) {
            cmd.replace(at, placeholder.size(), path);
        } else {
            cmd += " " + path;
        }
        FILE* pipe = popen(cmd.c_str(), "r");
        if (!pipe) throw std::runtime_error("external reward: cannot run: " + cmd);
        double value = 0.0;
        const int got = fscanf(pipe, "%lf", &value);
        pclose(pipe);
        if (got != 1) throw std::runtime_error("external reward: no float on stdout of: " + cmd);
        return value;
    };
}

SearchReport cmd_search(const std::string& tokenizer_ckpt, const std::string& ar_ckpt,
                        const SearchOptions& opt, const std::string& out_dir) {
    ensure_dir(out_dir);
    model::TokenizerModel tok = model::TokenizerModel::load(tokenizer_ckpt);
    ar::ArModel prior = ar::ArModel::load(ar_ckpt);

    search::RewardFn reward;
    if (opt.reward == "beta") {
        auto tok_ptr = std::make_shared<model::TokenizerModel>(tok);
        const int steps = opt.mini_rollout_steps;
        const uint64_t seed = opt.beam.seed;
        reward = [tok_ptr, steps, seed](const std::vector<int>& codes) {
            return search::reward_beta(*tok_ptr, codes, steps, seed);
        };
    } else if (opt.reward.rfind("class:", 0) == 0) {
        const std::string label = opt.reward.substr(6);
        int target = -1;
        for (int c = 0; c < geometry::kNumChainClasses; ++c) {
            if (label == geometry::chain_class_name(static_cast<geometry::ChainClass>(c))) {
                target = c;
            }
        }
        if (target < 0) target = std::stoi(label);
        if (target < 0 || target >= geometry::kNumChainClasses) {
            throw std::invalid_argument("cmd_search: unknown class label '" + label + "'");
        }
        // train the token-space verifier once, then search without rollouts
        auto data = load_dataset(opt.classifier_data);
        std::vector<std::pair<fsq::TokenSequence, int>> examples;
        for (const auto& lc : data) {
            examples.emplace_back(tok.encode(geometry::center(lc.coords)), lc.label);
        }
        auto clf = std::make_shared<search::PrefixClassifier>(
            tok.config().quant, geometry::kNumChainClasses, 64, opt.beam.seed ^ 0xc1f5ull);
        Adam copt(AdamConfig{3e-3f, 0.9f, 0.999f, 1e-8f, 10.0f});
        Rng crng(opt.beam.seed ^ 0x7e57ull);
        for (int s = 0; s < opt.classifier_steps; ++s) {
            clf->train_step(examples, copt, crng);
        }
        reward = [clf, target](const std::vector<int>& codes) {
            return codes.empty() ? 0.0 : search::reward_class(*clf, codes, target);
        };
    } else if (opt.reward.rfind("external:", 0) == 0) {
        reward = make_external_reward(tok, opt.reward.substr(9), opt.mini_rollout_steps,
                                      opt.beam.seed, out_dir + "/external");
    } else {
        throw std::invalid_argument("cmd_search: unknown reward '" + opt.reward + "'");
    }

    search::BeamResult res;
    if (!opt.prefill_file.empty()) {
        const auto colon = opt.prefill_file.rfind(':');
        if (colon == std::string::npos) {
            throw std::invalid_argument("cmd_search: prefill must be <file>:<n>");
        }
        const std::string file = opt.prefill_file.substr(0, colon);
        const int n = std::stoi(opt.prefill_file.substr(colon + 1));
        CoordSet seed_structure = fs::path(file).extension() == ".pdb"
                                      ? geometry::read_pdb_ca(file)
                                      : geometry::read_coords(file);
        res = search::prefill_maturation(prior, tok, seed_structure, n, reward, opt.beam);
    } else {
        res = search::beam_search(prior, reward, opt.beam);
    }

    SearchReport report;
    report.tokens = res.tokens;
    report.objective = res.objective;
    report.reward = res.reward;

    fsq::TokenSequence tokens = fsq::tokens_from_codes(res.tokens, tok.config().quant);
    fsq::write_tokens(tokens, tok.config().quant, out_dir + "/search_best.tok");
    if (!tokens.empty()) {
        CoordSet coords = sampler::decode_structure(tok, tokens,
                                                    sampler::SizeSource::Predicted, 0, opt.dec);
        report.structure_file = out_dir + "/search_best.coords";
        geometry::write_coords(coords, report.structure_file);
    }
    std::ofstream csv(out_dir + "/search_trace.csv");
    csv << "# chaintok-csv v1 search-trace\n";
    csv << "step,beam,score,cum_logp,reward,prefix_len\n";
    for (size_t s = 0; s < res.trace.size(); ++s) {
        for (size_t b = 0; b < res.trace[s].size(); ++b) {
            const search::BeamEntry& e = res.trace[s][b];
            csv << s + 1 << "," << b << "," << e.score << "," << e.cum_logp << ","
                << e.reward << "," << e.prefix.size() << "\n";
        }
    }
    return report;
}

MetricsReport cmd_metrics(const std::string& tokenizer_ckpt,
                          const std::vector<std::string>& files_a,
                          const std::vector<std::string>& files_b,
                          const std::string& out_dir) {
    ensure_dir(out_dir);
    MetricsReport report;
    std::optional<model::TokenizerModel> tok;
    if (!tokenizer_ckpt.empty()) tok = model::TokenizerModel::load(tokenizer_ckpt);

    std::vector<std::vector<double>> feats_a, feats_b;
    const size_t n = std::min(files_a.size(), files_b.size());
    for (size_t i = 0; i < n; ++i) {
        CoordSet a = geometry::read_coords(files_a[i]);
        CoordSet b = geometry::read_coords(files_b[i]);
        MetricsRow r;
        r.id = stem_of(files_a[i]);
        r.length = a.length();
        if (a.length() == b.length()) {
            r.rmsd_ang = 10.0 * geometry::kabsch_rmsd(a, b);
            r.tm = geometry::tm_score(a, b);
        }
        auto sse = geometry::assign_sse(a);
        r.helix_frac = geometry::sse_fraction(sse, geometry::Sse::Helix);
        r.sheet_frac = geometry::sse_fraction(sse, geometry::Sse::Sheet);
        r.coil_frac = geometry::sse_fraction(sse, geometry::Sse::Coil);
        report.rows.push_back(r);
        if (tok) {
            feats_a.push_back(prefix_features(*tok, a));
            feats_b.push_back(prefix_features(*tok, b));
        }
    }
    if (tok && feats_a.size() >= 2) {
        report.frechet = geometry::frechet_distance(feats_a, feats_b);
    }
    write_metrics_csv(report.rows, out_dir + "/metrics.csv");
    return report;
}

// ---- shared helpers -------------------------------------------------------------------

double shrink_tm(const CoordSet& original, const CoordSet& shrunk) {
    const int l = original.length();
    const int ls = shrunk.length();
    if (ls < 2 || l < 2) throw std::invalid_argument("shrink_tm: chains too short");
    // monotone index correspondence from the shrunk chain into the original
    CoordSet a, b;
    for (int i = 0; i < ls; ++i) {
        const int j = static_cast<int>(std::lround(static_cast<double>(i) * (l - 1) / (ls - 1)));
        a.pos.push_back(shrunk.pos[i]);
        b.pos.push_back(original.pos[j]);
    }
    a = geometry::center(a);
    b = geometry::center(b);
    geometry::Mat3 r = geometry::kabsch_rotation(a, b);
    std::vector<double> d(ls);
    for (int i = 0; i < ls; ++i) {
        geometry::Vec3 ra = {r[0][0] * a.pos[i][0] + r[0][1] * a.pos[i][1] + r[0][2] * a.pos[i][2],
                             r[1][0] * a.pos[i][0] + r[1][1] * a.pos[i][1] + r[1][2] * a.pos[i][2],
                             r[2][0] * a.pos[i][0] + r[2][1] * a.pos[i][1] + r[2][2] * a.pos[i][2]};
        const double dx = ra[0] - b.pos[i][0], dy = ra[1] - b.pos[i][1], dz = ra[2] - b.pos[i][2];
        d[i] = 10.0 * std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    // normalized by the ORIGINAL length, TM convention for the reference
    return geometry::tm_from_distances(d, l);
}

double paired_z(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw std::invalid_argument("paired_z: need equal-sized samples, n >= 2");
    }
    const int n = static_cast<int>(a.size());
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = a[i] - b[i] - mean;
        var += d * d;
    }
    var /= (n - 1);
    const double se = std::sqrt(var / n);
    return se > 0 ? mean / se : (mean > 0 ? 1e9 : 0.0);
}

}  // namespace chaintok::pipeline
