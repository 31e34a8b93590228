#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "chaintok/pipeline.hpp"

using namespace chaintok;
using namespace chaintok::pipeline;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("pipeline");

namespace {

std::string work_dir(const char* name) {
    const std::string d = (fs::temp_directory_path() / name).string();
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

model::TokenizerConfig tiny_model() {
    model::TokenizerConfig cfg;
    cfg.encoder.layers = 1;
    cfg.encoder.channels = 32;
    cfg.encoder.heads = 2;
    cfg.decoder.layers = 2;
    cfg.decoder.channels = 48;
    cfg.decoder.heads = 2;
    cfg.decoder.time_features = 32;
    cfg.quant.k_max = 12;
    return cfg;
}

DatasetSpec tiny_data(int n = 12) {
    DatasetSpec spec;
    spec.n = n;
    spec.corpus.min_len = 10;
    spec.corpus.max_len = 20;
    spec.seed = 77;
    return spec;
}

}  // namespace

TEST_CASE("synthetic dataset load is deterministic") {
    DatasetSpec spec = tiny_data();
    auto a = load_dataset(spec);
    auto b = load_dataset(spec);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].label == b[i].label);
        REQUIRE(a[i].coords.length() == b[i].coords.length());
        CHECK(a[i].coords.pos[0][0] == b[i].coords.pos[0][0]);
    }
}

TEST_CASE("metrics csv has the stable schema line") {
    const std::string dir = work_dir("ctk_csv");
    MetricsRow r;
    r.id = "x";
    r.length = 10;
    write_metrics_csv({r}, dir + "/m.csv");
    std::ifstream f(dir + "/m.csv");
    std::string line1, line2;
    std::getline(f, line1);
    std::getline(f, line2);
    CHECK(line1 == "# chaintok-csv v1 metrics");
    CHECK(line2.rfind("id,length,rmsd_ang,tm,", 0) == 0);
}

TEST_CASE("resume reproduces the uninterrupted run") {
    const std::string dir = work_dir("ctk_resume");
    auto data = load_dataset(tiny_data(6));
    std::vector<geometry::CoordSet> chains;
    for (auto& lc : data) chains.push_back(lc.coords);

    TokenizerTrainConfig cfg;
    cfg.model = tiny_model();
    cfg.steps = 6;
    cfg.batch_size = 3;
    cfg.eval_every = 0;
    cfg.seed = 5;

    TokenizerTrainResult full_log;
    train_tokenizer(cfg, chains, {}, &full_log);

    // stop at 4, checkpoint, resume for the remaining 2
    TokenizerTrainConfig part = cfg;
    part.steps = 4;
    TokenizerTrainResult part_log;
    Adam opt;
    model::TokenizerModel m = train_tokenizer(part, chains, {}, &part_log, &opt);
    const std::string ckpt = dir + "/tok.ckpt";
    m.save(ckpt, &opt);

    TokenizerTrainConfig rest = cfg;
    rest.resume_from = ckpt;
    TokenizerTrainResult rest_log;
    train_tokenizer(rest, chains, {}, &rest_log);

    REQUIRE(rest_log.log.size() == 2);
    const double direct = full_log.log.back().flow;
    const double resumed = rest_log.log.back().flow;
    CHECK(std::abs(direct - resumed) < 1e-5);
}

TEST_CASE("token cache is reused on the second pass") {
    const std::string dir = work_dir("ctk_cache");
    model::TokenizerModel tok(tiny_model(), 3);
    auto data = load_dataset(tiny_data(5));
    std::vector<geometry::CoordSet> chains;
    for (auto& lc : data) chains.push_back(lc.coords);

    auto [docs1, reused1] = tokenize_corpus(tok, chains, dir + "/tokens");
    CHECK(reused1 == 0);
    auto [docs2, reused2] = tokenize_corpus(tok, chains, dir + "/tokens");
    CHECK(reused2 == 5);
    REQUIRE(docs1.size() == docs2.size());
    for (size_t i = 0; i < docs1.size(); ++i) CHECK(docs1[i] == docs2[i]);
}

TEST_CASE("cmd pipeline end to end on tiny settings") {
    const std::string dir = work_dir("ctk_e2e");

    // train-tokenizer writes checkpoint + csv + svg
    TokenizerTrainConfig tcfg;
    tcfg.model = tiny_model();
    tcfg.steps = 8;
    tcfg.batch_size = 4;
    tcfg.eval_every = 4;
    tcfg.eval_chains = 2;
    tcfg.eval_ode_steps = 4;
    tcfg.seed = 3;
    const std::string ckpt = cmd_train_tokenizer(tcfg, tiny_data(10), 0.2, dir + "/tok");
    CHECK(fs::exists(ckpt));
    CHECK(fs::exists(dir + "/tok/tokenizer_train.csv"));
    CHECK(fs::exists(dir + "/tok/tokenizer_flow.svg"));

    // encode -> decode round trip through files
    auto data = load_dataset(tiny_data(3));
    std::vector<std::string> coord_files;
    for (size_t i = 0; i < data.size(); ++i) {
        const std::string p = dir + "/in_" + std::to_string(i) + ".coords";
        geometry::write_coords(data[i].coords, p);
        coord_files.push_back(p);
    }
    auto token_files = cmd_encode(ckpt, coord_files, dir + "/tokens");
    REQUIRE(token_files.size() == 3);
    for (const auto& tf : token_files) CHECK(fs::exists(tf));

    DecodeOptions dopt;
    dopt.k = 1;  // a 1-token prefix must decode
    dopt.force_size = data[0].coords.length();
    dopt.dec.steps = 4;
    auto decoded = cmd_decode(ckpt, {token_files[0]}, dopt, dir + "/decoded");
    REQUIRE(decoded.size() == 1);
    geometry::CoordSet out = geometry::read_coords(decoded[0]);
    CHECK(out.length() == data[0].coords.length());

    // sweep emits one row per k
    DecodeOptions sweep;
    sweep.sweep = {1, 2, 4};
    sweep.reference_file = coord_files[0];
    sweep.dec.steps = 4;
    auto sweep_out = cmd_decode(ckpt, {token_files[0]}, sweep, dir + "/sweep");
    REQUIRE(sweep_out.size() == 1);
    std::ifstream scsv(sweep_out[0]);
    std::string line;
    int rows = 0;
    while (std::getline(scsv, line)) {
        if (!line.empty() && line[0] != '#' && line.rfind("id,", 0) != 0) ++rows;
    }
    CHECK(rows == 3);

    // train-ar on the tokenizer output, then generate
    ArTrainConfig acfg;
    acfg.model.layers = 1;
    acfg.model.channels = 32;
    acfg.model.heads = 2;
    acfg.model.k_max = 12;
    acfg.model.codebook_size = 1000;
    acfg.steps = 5;
    acfg.batch_docs = 4;
    acfg.seed = 11;
    const std::string ar_ckpt = cmd_train_ar(acfg, tiny_data(8), ckpt, dir + "/ar");
    CHECK(fs::exists(ar_ckpt));
    CHECK(fs::exists(dir + "/ar/tokens/chain_0.tok"));

    GenerateOptions gopt;
    gopt.n = 3;
    gopt.stop = ar::StopRule::fixed(4);
    gopt.rule = ar::SampleRule::nucleus(0.9);
    gopt.rule.allow_eos = false;
    gopt.dec.steps = 4;
    gopt.seed = 21;
    gopt.self_consistency = true;
    GenerateReport rep = cmd_generate(ckpt, ar_ckpt, gopt, dir + "/gen");
    CHECK(rep.rows.size() == 3);
    CHECK(fs::exists(dir + "/gen/sample_0.coords"));
    CHECK(fs::exists(dir + "/gen/sample_0.tok"));
    CHECK(fs::exists(dir + "/gen/sample_0_entropy.csv"));
    CHECK(fs::exists(dir + "/gen/generate_metrics.csv"));
    CHECK(rep.token_stats.mean == doctest::Approx(4.0));
    CHECK(rep.mean_self_tm >= -1.0);

    // shrink returns exactly the requested sizes
    sampler::SamplerConfig dec;
    dec.steps = 4;
    ShrinkReport shrink = cmd_shrink(ckpt, coord_files[0], {1.0, 0.9, 0.8}, dec, dir + "/shrink");
    REQUIRE(shrink.sizes.size() == 3);
    const int l = data[0].coords.length();
    CHECK(shrink.sizes[0] == l);
    CHECK(shrink.sizes[1] == static_cast<int>(std::floor(0.9 * l)));
    CHECK(shrink.sizes[2] == static_cast<int>(std::floor(0.8 * l)));
    for (const auto& f : shrink.files) CHECK(fs::exists(f));

    // metrics command pairs the files
    MetricsReport mrep = cmd_metrics(ckpt, {coord_files[0], coord_files[1]},
                                     {coord_files[0], coord_files[2]}, dir + "/metrics");
    REQUIRE(mrep.rows.size() == 2);
    CHECK(mrep.rows[0].rmsd_ang == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(mrep.frechet >= 0.0);

    // no command mutated its inputs
    geometry::CoordSet still = geometry::read_coords(coord_files[0]);
    CHECK(still.length() == data[0].coords.length());
}

TEST_CASE("ar training rejects a mismatched codebook") {
    const std::string dir = work_dir("ctk_vocab");
    model::TokenizerModel tok(tiny_model(), 3);
    tok.save(dir + "/tok.ckpt");
    ArTrainConfig acfg;
    acfg.model.layers = 1;
    acfg.model.channels = 32;
    acfg.model.heads = 2;
    acfg.model.k_max = 12;
    acfg.model.codebook_size = 4375;  // tokenizer uses the 1000-code book
    acfg.steps = 1;
    CHECK_THROWS_AS(cmd_train_ar(acfg, tiny_data(4), dir + "/tok.ckpt", dir),
                    std::invalid_argument);
}

TEST_CASE("generate is reproducible from config and seed") {
    const std::string dir = work_dir("ctk_repro");
    model::TokenizerModel tok(tiny_model(), 3);
    tok.save(dir + "/tok.ckpt");
    ar::ArConfig acfg;
    acfg.layers = 1;
    acfg.channels = 32;
    acfg.heads = 2;
    acfg.k_max = 12;
    acfg.codebook_size = 1000;
    ar::ArModel prior(acfg, 9);
    prior.save(dir + "/ar.ckpt");

    GenerateOptions gopt;
    gopt.n = 2;
    gopt.stop = ar::StopRule::fixed(3);
    gopt.rule = ar::SampleRule::nucleus(0.9);
    gopt.rule.allow_eos = false;
    gopt.dec.steps = 4;
    gopt.seed = 77;
    cmd_generate(dir + "/tok.ckpt", dir + "/ar.ckpt", gopt, dir + "/run1");
    cmd_generate(dir + "/tok.ckpt", dir + "/ar.ckpt", gopt, dir + "/run2");
    auto slurp = [](const std::string& p) {
        std::ifstream f(p);
        std::stringstream ss;
        ss << f.rdbuf();
        return ss.str();
    };
    // wall-time column differs; compare everything before it per line
    auto strip_last_col = [&](const std::string& text) {
        std::istringstream is(text);
        std::string line, out;
        while (std::getline(is, line)) {
            auto cut = line.rfind(',');
            out += line.substr(0, cut) + "\n";
        }
        return out;
    };
    CHECK(strip_last_col(slurp(dir + "/run1/generate_metrics.csv")) ==
          strip_last_col(slurp(dir + "/run2/generate_metrics.csv")));
    CHECK(slurp(dir + "/run1/sample_0.tok") == slurp(dir + "/run2/sample_0.tok"));
    CHECK(slurp(dir + "/run1/sample_0.coords") == slurp(dir + "/run2/sample_0.coords"));
}

TEST_CASE("probe command reports both feature sets") {
    const std::string dir = work_dir("ctk_probe");
    model::TokenizerModel tok(tiny_model(), 5);
    tok.save(dir + "/tok.ckpt");
    ProbeConfig pcfg;
    pcfg.steps = 30;
    pcfg.batch = 8;
    pcfg.hidden = 16;
    ProbeReport rep = cmd_probe(dir + "/tok.ckpt", tiny_data(24), pcfg, dir);
    CHECK(rep.feature_dim == tiny_model().quant.k_max * 4);
    for (double acc : {rep.mlp_prefix_acc, rep.mlp_meanpool_acc, rep.linear_prefix_acc,
                       rep.linear_meanpool_acc}) {
        CHECK(acc >= 0.0);
        CHECK(acc <= 1.0);
    }
    CHECK(fs::exists(dir + "/probe.csv"));
    CHECK(fs::exists(dir + "/probe.svg"));
}

TEST_CASE("external reward hook round trips through a command") {
    const std::string dir = work_dir("ctk_ext");
    model::TokenizerModel tok(tiny_model(), 5);
    // the command reads the coordinate file and prints its residue count
    search::RewardFn fn = make_external_reward(tok, "wc -l < {}", 4, 9, dir);
    const double r = fn({5, 10, 15});
    CHECK(r > 0.0);  // one line per residue
    CHECK(r == doctest::Approx(std::floor(r)));
}

TEST_CASE("shrink tm tracks the original across lengths") {
    geometry::CoordSet helix = geometry::center(geometry::make_helix(40));
    CHECK(shrink_tm(helix, helix) == doctest::Approx(1.0).epsilon(1e-9));

    // straight chains: a mild shrink scores higher than an aggressive one,
    // and both land in (0, 1]
    auto line = [](int n) {
        geometry::CoordSet c;
        for (int i = 0; i < n; ++i) c.pos.push_back({i * 0.38, 0.0, 0.0});
        return geometry::center(c);
    };
    const double mild = shrink_tm(line(100), line(98));
    const double aggressive = shrink_tm(line(100), line(80));
    CHECK(mild > 0.0);
    CHECK(mild <= 1.0);
    CHECK(mild > aggressive);
    CHECK(mild > 0.6);
}

TEST_CASE("paired z statistic separates shifted samples") {
    Rng rng(3);
    std::vector<double> a, b;
    for (int i = 0; i < 64; ++i) {
        const double base = rng.normal();
        b.push_back(base);
        a.push_back(base + 0.5 + 0.1 * rng.normal());
    }
    CHECK(paired_z(a, b) > 1.645);
    CHECK_THROWS_AS(paired_z({1.0}, {2.0}), std::invalid_argument);
}

TEST_SUITE_END();
