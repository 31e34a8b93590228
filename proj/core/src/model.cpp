#include "chaintok/model.hpp"

#include <cmath>
#include <stdexcept>

#include "nn_util.hpp"

namespace chaintok::model {

using geometry::CoordSet;
using nn::attention;
using nn::linear;

TokenizerConfig desk_scale_config() {
    TokenizerConfig cfg;
    cfg.encoder.layers = 2;
    cfg.encoder.channels = 128;
    cfg.encoder.heads = 4;
    cfg.decoder.layers = 6;
    cfg.decoder.channels = 256;
    cfg.decoder.heads = 4;
    cfg.quant.k_max = 32;
    return cfg;
}

FlowTarget flow_target(const Tensor& x, const Tensor& eps, double t) {
    if (x.shape() != eps.shape()) {
        throw std::invalid_argument("flow_target: shape mismatch " + shape_str(x.shape()) +
                                    " vs " + shape_str(eps.shape()));
    }
    FlowTarget ft;
    ft.x_t = add(scale(eps, static_cast<float>(1.0 - t)), scale(x, static_cast<float>(t)));
    ft.v_star = sub(x, eps);
    return ft;
}

TokenizerModel::TokenizerModel(TokenizerConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    if (cfg_.encoder.channels % cfg_.encoder.heads != 0 ||
        cfg_.decoder.channels % cfg_.decoder.heads != 0) {
        throw std::invalid_argument("TokenizerModel: channels must divide heads");
    }
    Rng rng(seed);
    Rng er = rng.derive("encoder");
    Rng dr = rng.derive("decoder");
    const int ec = cfg_.encoder.channels;
    const int dc = cfg_.decoder.channels;
    const int m = cfg_.quant.channels();

    enc_in_w_ = nn::param_randn(params_, "enc.in.w", {3, ec}, er);
    enc_in_b_ = nn::param_zeros(params_, "enc.in.b", {ec});
    enc_pos_ = nn::param_randn(params_, "enc.pos", {cfg_.encoder.max_positions, ec}, er);
    enc_blocks_.resize(cfg_.encoder.layers);
    for (int i = 0; i < cfg_.encoder.layers; ++i) {
        auto& b = enc_blocks_[i];
        const std::string p = "enc.block" + std::to_string(i) + ".";
        b.ln1_g = nn::param_ones(params_, p + "ln1.g", {ec});
        b.ln1_b = nn::param_zeros(params_, p + "ln1.b", {ec});
        b.qkv_w = nn::param_randn(params_, p + "qkv.w", {ec, 3 * ec}, er);
        b.qkv_b = nn::param_zeros(params_, p + "qkv.b", {3 * ec});
        b.out_w = nn::param_randn(params_, p + "out.w", {ec, ec}, er);
        b.out_b = nn::param_zeros(params_, p + "out.b", {ec});
        b.ln2_g = nn::param_ones(params_, p + "ln2.g", {ec});
        b.ln2_b = nn::param_zeros(params_, p + "ln2.b", {ec});
        b.mlp1_w = nn::param_randn(params_, p + "mlp1.w", {ec, 4 * ec}, er);
        b.mlp1_b = nn::param_zeros(params_, p + "mlp1.b", {4 * ec});
        b.mlp2_w = nn::param_randn(params_, p + "mlp2.w", {4 * ec, ec}, er);
        b.mlp2_b = nn::param_zeros(params_, p + "mlp2.b", {ec});
    }
    enc_lnf_g_ = nn::param_ones(params_, "enc.lnf.g", {ec});
    enc_lnf_b_ = nn::param_zeros(params_, "enc.lnf.b", {ec});
    enc_out_w_ = nn::param_randn(params_, "enc.out.w", {ec, m}, er, 0.08f);
    enc_out_b_ = nn::param_zeros(params_, "enc.out.b", {m});

    const int cb = cfg_.quant.codebook_size();
    dec_token_emb_ = nn::param_randn(params_, "dec.token_emb", {cb, dc}, dr);
    // strong enough at init that the conditional path is visible to the
    // decoder before it learns to denoise unconditionally
    dec_value_w_ = nn::param_randn(params_, "dec.value.w", {m, dc}, dr, 0.3f);
    dec_sep_ = nn::param_randn(params_, "dec.sep", {1, dc}, dr);
    dec_coord_w_ = nn::param_randn(params_, "dec.coord.w", {3, dc}, dr);
    dec_coord_b_ = nn::param_zeros(params_, "dec.coord.b", {dc});
    dec_time1_w_ = nn::param_randn(params_, "dec.time1.w", {cfg_.decoder.time_features, dc}, dr);
    dec_time1_b_ = nn::param_zeros(params_, "dec.time1.b", {dc});
    // shift/scale start at zero; the attention and MLP gates open at one so
    // conditioning reaches the coordinate stream from the first step
    dec_time2_w_ = nn::param_zeros(params_, "dec.time2.w", {dc, 8 * dc});
    {
        std::vector<float> b(8 * static_cast<size_t>(dc), 0.0f);
        for (int j = 0; j < dc; ++j) {
            b[2 * static_cast<size_t>(dc) + j] = 1.0f;  // attention gate
            b[5 * static_cast<size_t>(dc) + j] = 1.0f;  // mlp gate
        }
        dec_time2_b_ = nn::make_param(params_, "dec.time2.b",
                                      Tensor::from({8 * dc}, std::move(b)));
    }
    dec_blocks_.resize(cfg_.decoder.layers);
    for (int i = 0; i < cfg_.decoder.layers; ++i) {
        auto& b = dec_blocks_[i];
        const std::string p = "dec.block" + std::to_string(i) + ".";
        b.qkv_w = nn::param_randn(params_, p + "qkv.w", {dc, 3 * dc}, dr);
        b.qkv_b = nn::param_zeros(params_, p + "qkv.b", {3 * dc});
        b.out_w = nn::param_randn(params_, p + "out.w", {dc, dc}, dr);
        b.out_b = nn::param_zeros(params_, p + "out.b", {dc});
        b.mlp1_w = nn::param_randn(params_, p + "mlp1.w", {dc, 4 * dc}, dr);
        b.mlp1_b = nn::param_zeros(params_, p + "mlp1.b", {4 * dc});
        b.mlp2_w = nn::param_randn(params_, p + "mlp2.w", {4 * dc, dc}, dr);
        b.mlp2_b = nn::param_zeros(params_, p + "mlp2.b", {dc});
    }
    dec_head_w_ = nn::param_zeros(params_, "dec.head.w", {dc, 3});
    dec_head_b_ = nn::param_zeros(params_, "dec.head.b", {3});

    Rng sr = rng.derive("size_head");
    size1_w_ = nn::param_randn(params_, "size.l1.w", {m, 128}, sr);
    size1_b_ = nn::param_zeros(params_, "size.l1.b", {128});
    size2_w_ = nn::param_randn(params_, "size.l2.w", {128, kMaxSize}, sr);
    size2_b_ = nn::param_zeros(params_, "size.l2.b", {kMaxSize});
}

Tensor TokenizerModel::encode_latents(const CoordSet& coords) const {
    const int l = coords.length();
    if (l < 1) throw std::invalid_argument("encode: empty chain");
    if (l > cfg_.encoder.max_positions) {
        throw std::invalid_argument("encode: length " + std::to_string(l) + " exceeds " +
                                    std::to_string(cfg_.encoder.max_positions));
    }
    Tensor h = linear(geometry::to_tensor(coords), enc_in_w_, enc_in_b_);
    h = add(h, narrow(enc_pos_, 0, 0, l));
    Tensor no_mask;
    for (const auto& b : enc_blocks_) {
        Tensor a = attention(layer_norm(h, b.ln1_g, b.ln1_b), b.qkv_w, b.qkv_b, b.out_w,
                             b.out_b, cfg_.encoder.heads, {}, no_mask);
        h = add(h, a);
        Tensor mlp = linear(gelu(linear(layer_norm(h, b.ln2_g, b.ln2_b), b.mlp1_w, b.mlp1_b)),
                            b.mlp2_w, b.mlp2_b);
        h = add(h, mlp);
    }
    h = layer_norm(h, enc_lnf_g_, enc_lnf_b_);
    // RMS-normalized latents keep the tanh bound away from its saturated
    // tails, where straight-through gradients die and codes freeze
    return rms_norm(linear(h, enc_out_w_, enc_out_b_));  // [L, M]
}

fsq::TokenSequence TokenizerModel::encode(const CoordSet& coords) const {
    Tensor z = encode_latents(coords);
    fsq::QuantizeResult qr = fsq::quantize(z, cfg_.quant);
    return fsq::nested_dropout(qr.tokens,
                               std::min(coords.length(), cfg_.quant.k_max));
}

Tensor TokenizerModel::decode_velocity(const Tensor& x_t, double t,
                                       const fsq::TokenSequence& tokens) const {
    Tensor values;
    if (!tokens.empty()) values = fsq::dequantize(tokens, cfg_.quant);
    return decode_stream(x_t, t, tokens.codes, values);
}

Tensor TokenizerModel::decode_stream(const Tensor& x_t, double t,
                                     const std::vector<int>& codes,
                                     const Tensor& values) const {
    if (x_t.rank() != 2 || x_t.dim(1) != 3) {
        throw std::invalid_argument("decode_velocity: expected [L,3], got " +
                                    shape_str(x_t.shape()));
    }
    const int k = static_cast<int>(codes.size());
    if (k > cfg_.quant.k_max) {
        throw std::invalid_argument("decode_velocity: prefix length " + std::to_string(k) +
                                    " exceeds k_max " + std::to_string(cfg_.quant.k_max));
    }
    const int l = x_t.dim(0);
    const int dc = cfg_.decoder.channels;
    const int stream = k + 1 + l;

    std::vector<Tensor> parts;
    if (k > 0) {
        // in-context conditioning: code embedding plus a projection of the
        // quantized values (the straight-through path at train time)
        Tensor emb = embedding(dec_token_emb_, codes);
        parts.push_back(add(emb, matmul(values, dec_value_w_)));
    }
    parts.push_back(dec_sep_);
    parts.push_back(linear(x_t, dec_coord_w_, dec_coord_b_));
    Tensor h = concat(parts, 0);  // [stream, C]

    // one shared modulation set conditions every layer
    Tensor tfeat = Tensor::from({1, cfg_.decoder.time_features},
                                sinusoid_features(t, cfg_.decoder.time_features));
    Tensor mod = linear(silu(linear(tfeat, dec_time1_w_, dec_time1_b_)), dec_time2_w_,
                        dec_time2_b_);  // [1, 8C]
    Tensor shift_a = narrow(mod, 1, 0, dc);
    Tensor scale_a = narrow(mod, 1, dc, dc);
    Tensor gate_a = narrow(mod, 1, 2 * dc, dc);
    Tensor shift_m = narrow(mod, 1, 3 * dc, dc);
    Tensor scale_m = narrow(mod, 1, 4 * dc, dc);
    Tensor gate_m = narrow(mod, 1, 5 * dc, dc);
    Tensor shift_f = narrow(mod, 1, 6 * dc, dc);
    Tensor scale_f = narrow(mod, 1, 7 * dc, dc);

    std::vector<int> pos(stream);
    for (int i = 0; i < stream; ++i) pos[i] = i;
    Tensor no_affine, no_mask;
    auto modulate = [](const Tensor& x, const Tensor& sh, const Tensor& sc) {
        return add(add(x, mul(x, sc)), sh);
    };
    for (const auto& b : dec_blocks_) {
        Tensor a = attention(modulate(layer_norm(h, no_affine, no_affine), shift_a, scale_a),
                             b.qkv_w, b.qkv_b, b.out_w, b.out_b, cfg_.decoder.heads, pos,
                             no_mask);
        h = add(h, mul(a, gate_a));
        Tensor mlp = linear(
            gelu(linear(modulate(layer_norm(h, no_affine, no_affine), shift_m, scale_m),
                        b.mlp1_w, b.mlp1_b)),
            b.mlp2_w, b.mlp2_b);
        h = add(h, mul(mlp, gate_m));
    }
    h = modulate(layer_norm(h, no_affine, no_affine), shift_f, scale_f);
    Tensor v = linear(h, dec_head_w_, dec_head_b_);  // [stream, 3]
    return narrow(v, 0, k + 1, l);
}

Tensor TokenizerModel::size_logits(const Tensor& first_token_values) const {
    Tensor h = gelu(linear(first_token_values, size1_w_, size1_b_));
    return linear(h, size2_w_, size2_b_);
}

std::pair<std::vector<float>, int> TokenizerModel::predict_size(
    const fsq::TokenSequence& tokens) const {
    if (tokens.empty()) throw std::invalid_argument("predict_size: empty token sequence");
    fsq::TokenSequence first = fsq::nested_dropout(tokens, 1);
    Tensor logits = size_logits(fsq::dequantize(first, cfg_.quant));
    Tensor probs = softmax(logits);
    std::vector<float> dist = probs.values();
    return {dist, argmax(dist) + 1};  // classes are exact lengths 1..256
}

double TokenizerModel::sample_time(Rng& rng) const {
    if (cfg_.train.time_dist == TimeDist::Uniform) return rng.uniform();
    const double z = rng.normal();
    return 1.0 / (1.0 + std::exp(-z));  // logit-normal(0,1)
}

TokenizerModel::Losses TokenizerModel::batch_losses(const std::vector<CoordSet>& batch,
                                                    Rng& rng, bool rotate) const {
    if (batch.empty()) throw std::invalid_argument("training_step: empty batch");
    Tensor flow_acc, size_acc;
    for (const CoordSet& raw : batch) {
        CoordSet c = geometry::center(raw);
        if (rotate) {
            geometry::Mat3 r = geometry::random_rotation(rng);
            c = geometry::apply_rotation(c, r);
        }
        const int l = c.length();

        Tensor z = encode_latents(c);
        fsq::QuantizeResult qr = fsq::quantize(z, cfg_.quant);

        const int k = fsq::sample_cutoff(l, cfg_.quant, rng);
        fsq::TokenSequence cond =
            fsq::nested_dropout(qr.tokens, std::min({k, l, cfg_.quant.k_max}));
        Tensor cond_values = narrow(qr.values, 0, 0, cond.size());

        const double t = sample_time(rng);
        Tensor x = geometry::to_tensor(c);
        Tensor eps = Tensor::randn({l, 3}, rng);
        FlowTarget ft = flow_target(x, eps, t);

        const bool drop_cond = rng.uniform() < cfg_.train.cond_dropout;
        Tensor v;
        if (drop_cond) {
            v = decode_stream(ft.x_t, t, {}, Tensor());
        } else {
            v = decode_stream(ft.x_t, t, cond.codes, cond_values);
        }
        Tensor flow = mse(v, ft.v_star);

        // size head reads the quantized first token; teacher forcing keeps
        // the decoder stream at the true length regardless of the prediction
        Tensor logits = size_logits(narrow(qr.values, 0, 0, 1));
        Tensor size_ce = cross_entropy(logits, {l - 1});

        flow_acc = flow_acc.defined() ? add(flow_acc, flow) : flow;
        size_acc = size_acc.defined() ? add(size_acc, size_ce) : size_ce;
    }
    const float inv = 1.0f / static_cast<float>(batch.size());
    Losses out;
    out.flow = scale(flow_acc, inv);
    out.size = scale(size_acc, inv);
    out.total = add(out.flow, scale(out.size, cfg_.loss.lambda_size));
    return out;
}

StepLosses TokenizerModel::training_step(const std::vector<CoordSet>& batch, Adam& opt,
                                         Rng& rng) {
    const int64_t step = opt.step_count();
    GradTape tape;
    Losses l = batch_losses(batch, rng, step >= cfg_.train.rotation_start_step);
    tape.backward(l.total);
    StepLosses out{l.flow.item(), l.size.item(), l.total.item()};
    if (step < cfg_.train.encoder_freeze_steps) {
        for (auto& [name, p] : params_) {
            if (name.rfind("enc.", 0) == 0) p.zero_grad();
        }
    }
    opt.step(params_);
    return out;
}

StepLosses TokenizerModel::eval_losses(const std::vector<CoordSet>& batch, Rng& rng) const {
    Losses l = batch_losses(batch, rng, true);
    return {l.flow.item(), l.size.item(), l.total.item()};
}

// ---- persistence -------------------------------------------------------------

nlohmann::json config_to_json(const TokenizerConfig& cfg) {
    nlohmann::json j;
    j["encoder"] = {{"layers", cfg.encoder.layers},
                    {"channels", cfg.encoder.channels},
                    {"heads", cfg.encoder.heads},
                    {"max_positions", cfg.encoder.max_positions}};
    j["decoder"] = {{"layers", cfg.decoder.layers},
                    {"channels", cfg.decoder.channels},
                    {"heads", cfg.decoder.heads},
                    {"time_features", cfg.decoder.time_features}};
    j["fsq"] = {{"levels", cfg.quant.levels}, {"k_max", cfg.quant.k_max}};
    j["loss"] = {{"lambda_size", cfg.loss.lambda_size}};
    j["train"] = {
        {"time_dist", cfg.train.time_dist == TimeDist::LogitNormal ? "logit_normal" : "uniform"},
        {"cond_dropout", cfg.train.cond_dropout},
        {"encoder_freeze_steps", cfg.train.encoder_freeze_steps},
        {"rotation_start_step", cfg.train.rotation_start_step}};
    return j;
}

TokenizerConfig config_from_json(const nlohmann::json& j) {
    TokenizerConfig cfg;
    cfg.encoder.layers = j["encoder"]["layers"];
    cfg.encoder.channels = j["encoder"]["channels"];
    cfg.encoder.heads = j["encoder"]["heads"];
    cfg.encoder.max_positions = j["encoder"]["max_positions"];
    cfg.decoder.layers = j["decoder"]["layers"];
    cfg.decoder.channels = j["decoder"]["channels"];
    cfg.decoder.heads = j["decoder"]["heads"];
    cfg.decoder.time_features = j["decoder"]["time_features"];
    cfg.quant.levels = j["fsq"]["levels"].get<std::vector<int>>();
    cfg.quant.k_max = j["fsq"]["k_max"];
    cfg.loss.lambda_size = j["loss"]["lambda_size"];
    cfg.train.time_dist = j["train"]["time_dist"] == "uniform" ? TimeDist::Uniform
                                                               : TimeDist::LogitNormal;
    cfg.train.cond_dropout = j["train"]["cond_dropout"];
    cfg.train.encoder_freeze_steps = j["train"].value("encoder_freeze_steps", 0);
    cfg.train.rotation_start_step = j["train"].value("rotation_start_step", 0);
    return cfg;
}

void TokenizerModel::save(const std::string& path, const Adam* opt,
                          const nlohmann::json& extra_meta) const {
    Checkpoint ckpt;
    for (const auto& [name, t] : params_) ckpt.put(name, t);
    ckpt.meta["kind"] = "tokenizer";
    ckpt.meta["config"] = config_to_json(cfg_);
    if (!extra_meta.is_null()) ckpt.meta["extra"] = extra_meta;
    if (opt) {
        ckpt.meta["optimizer"] = {{"step_count", opt->step_count()}};
        for (const auto& [name, slot] : const_cast<Adam*>(opt)->slots()) {
            Shape s{static_cast<int>(slot.m.size())};
            ckpt.put("opt.m." + name, Tensor::from(s, slot.m));
            ckpt.put("opt.v." + name, Tensor::from(s, slot.v));
        }
    }
    save_checkpoint(ckpt, path);
}

TokenizerModel TokenizerModel::load(const std::string& path, Adam* opt,
                                    nlohmann::json* extra_meta) {
    Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.meta.value("kind", "") != "tokenizer") {
        throw std::runtime_error("load: " + path + " is not a tokenizer checkpoint");
    }
    TokenizerModel m(config_from_json(ckpt.meta["config"]), 0);
    for (auto& [name, t] : m.params_) {
        const Tensor& src = ckpt.get(name);
        if (src.shape() != t.shape()) {
            throw std::runtime_error("load: shape mismatch for " + name);
        }
        std::copy(src.values().begin(), src.values().end(), t.data());
    }
    if (opt) {
        opt->set_step_count(ckpt.meta["optimizer"]["step_count"].get<int64_t>());
        for (auto& [name, t] : m.params_) {
            AdamSlot& slot = opt->slots()[name];
            slot.m = ckpt.get("opt.m." + name).values();
            slot.v = ckpt.get("opt.v." + name).values();
        }
    }
    if (extra_meta) *extra_meta = ckpt.meta.value("extra", nlohmann::json::object());
    return m;
}

}  // namespace chaintok::model
