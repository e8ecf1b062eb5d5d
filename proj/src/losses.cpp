#include "headsup/losses.hpp"

#include <fstream>
#include <sstream>

namespace headsup {

using nn::Id;
using nn::Tape;
using nn::Tensor;
using nlohmann::json;

void LossWeights::validate() const {
    require(lambda_l1 >= 0 && lambda_lpips >= 0 && lambda_adv >= 0 && lambda_tv >= 0 &&
                lambda_pos_start >= 0 && lambda_pos_end >= 0 && lambda_mask_start >= 0 &&
                lambda_mask_end >= 0,
            "BadConfig", "loss weights must be non-negative");
    require(anneal_frac >= 0 && anneal_frac <= 1 && adv_start_frac >= 0 && adv_start_frac <= 1,
            "BadConfig", "schedule fractions must be in [0,1]");
    require(warmup_steps >= 0, "BadConfig", "warmup_steps must be >= 0");
}

namespace {
double lerp_sched(double start, double end, int step, int total, double frac) {
    double span = frac * total;
    if (span <= 0) return end;
    double t = std::min(1.0, static_cast<double>(step) / span);
    return start + (end - start) * t;
}
}  // namespace

double LossWeights::lambda_pos(int step, int total_steps) const {
    return lerp_sched(lambda_pos_start, lambda_pos_end, step, total_steps, anneal_frac);
}

double LossWeights::lambda_mask(int step, int total_steps) const {
    return lerp_sched(lambda_mask_start, lambda_mask_end, step, total_steps, anneal_frac);
}

bool LossWeights::adv_active(int step, int total_steps) const {
    return static_cast<double>(step) >= adv_start_frac * total_steps - 1e-9;
}

json LossWeights::to_json() const {
    return json{{"lambda_l1", lambda_l1},
                {"lambda_lpips", lambda_lpips},
                {"lambda_adv", lambda_adv},
                {"lambda_pos_start", lambda_pos_start},
                {"lambda_pos_end", lambda_pos_end},
                {"lambda_mask_start", lambda_mask_start},
                {"lambda_mask_end", lambda_mask_end},
                {"lambda_tv", lambda_tv},
                {"anneal_frac", anneal_frac},
                {"adv_start_frac", adv_start_frac},
                {"warmup_steps", warmup_steps}};
}

LossWeights LossWeights::from_json(const json& j) {
    LossWeights w;
    w.lambda_l1 = j.value("lambda_l1", w.lambda_l1);
    w.lambda_lpips = j.value("lambda_lpips", w.lambda_lpips);
    w.lambda_adv = j.value("lambda_adv", w.lambda_adv);
    w.lambda_pos_start = j.value("lambda_pos_start", w.lambda_pos_start);
    w.lambda_pos_end = j.value("lambda_pos_end", w.lambda_pos_end);
    w.lambda_mask_start = j.value("lambda_mask_start", w.lambda_mask_start);
    w.lambda_mask_end = j.value("lambda_mask_end", w.lambda_mask_end);
    w.lambda_tv = j.value("lambda_tv", w.lambda_tv);
    w.anneal_frac = j.value("anneal_frac", w.anneal_frac);
    w.adv_start_frac = j.value("adv_start_frac", w.adv_start_frac);
    w.warmup_steps = j.value("warmup_steps", w.warmup_steps);
    w.validate();
    return w;
}

void LossReport::self_check() const {
    double sum = 0;
    for (const auto& term : terms) sum += term.weighted;
    double denom = std::max(std::abs(total), 1e-12);
    require(std::abs(sum - total) / denom < 1e-6, "BadLossReport",
            "report total does not equal the sum of weighted terms");
}

const LossTerm* LossReport::find(const std::string& name) const {
    for (const auto& term : terms)
        if (term.name == name) return &term;
    return nullptr;
}

std::string LossReport::csv_header() {
    return "step,stage,l1_raw,l1_weighted,lpips_raw,lpips_weighted,adv_raw,adv_weighted,"
           "pos_raw,pos_weighted,mask_raw,mask_weighted,tv_raw,tv_weighted,region_raw,"
           "region_weighted,total";
}

std::string LossReport::csv_row() const {
    auto get = [&](const char* n, bool weighted) {
        const LossTerm* term = find(n);
        if (!term) return 0.0;
        return weighted ? term->weighted : term->raw;
    };
    std::ostringstream ss;
    ss.precision(10);
    ss << step << "," << stage;
    for (const char* n : {"l1", "lpips", "adv", "pos", "mask", "tv", "region"})
        ss << "," << get(n, false) << "," << get(n, true);
    ss << "," << total;
    return ss.str();
}

std::string LossReport::jsonl_row() const {
    json j{{"step", step}, {"stage", stage}, {"total", total}};
    for (const auto& term : terms) {
        j[term.name + "_raw"] = term.raw;
        j[term.name + "_weighted"] = term.weighted;
        j[term.name + "_lambda"] = term.weight;
    }
    return j.dump();
}

LossReport total_loss(int step, int total_steps, const LossParts& parts, const LossWeights& w,
                      int stage) {
    w.validate();
    LossReport rep;
    rep.step = step;
    rep.total_steps = total_steps;
    rep.stage = stage;
    auto push = [&](const std::string& name, double raw, double weight) {
        rep.terms.push_back({name, raw, weight, raw * weight});
    };
    push("l1", parts.l1, w.lambda_l1);
    push("lpips", parts.lpips, w.lambda_lpips);
    push("adv", parts.adv_g, w.adv_active(step, total_steps) ? w.lambda_adv : 0.0);
    push("pos", parts.pos, w.lambda_pos(step, total_steps));
    push("mask", parts.mask, w.lambda_mask(step, total_steps));
    push("tv", parts.tv, w.lambda_tv);
    if (parts.has_region) push("region", parts.region, w.lambda_lpips);
    rep.total = 0;
    for (const auto& term : rep.terms) rep.total += term.weighted;
    rep.self_check();
    return rep;
}

MetricLog::MetricLog(const std::string& csv_path, const std::string& jsonl_path) {
    csv_ = std::make_shared<std::ofstream>(csv_path);
    jsonl_ = std::make_shared<std::ofstream>(jsonl_path);
    if (!*csv_ || !*jsonl_) fail("IOError", "cannot open metric logs");
}

void MetricLog::write(const LossReport& report) {
    if (!csv_) return;
    if (!wrote_header_) {
        *csv_ << LossReport::csv_header() << "\n";
        wrote_header_ = true;
    }
    *csv_ << report.csv_row() << "\n";
    csv_->flush();
    *jsonl_ << report.jsonl_row() << "\n";
    jsonl_->flush();
}

// --- differentiable terms -----------------------------------------------------

Id l1_loss_op(Tape& t, Id render, Id target) {
    return nn::mean_all(t, nn::abs_op(t, nn::sub(t, render, target)));
}

RandomConvPyramid::RandomConvPyramid(uint64_t seed) {
    Rng rng = Rng(seed).substream("feature_pyramid");
    int chans[6] = {3, 16, 32, 64, 64, 64};
    for (int level = 0; level < 5; ++level) {
        convs_.push_back(nn::Conv::create(params_, "level" + std::to_string(level), chans[level],
                                          chans[level + 1], 3, 2, 1, rng));
    }
    for (auto& p : params_.items) p.trainable = false;  // fixed features
}

std::vector<Id> RandomConvPyramid::features(Tape& t, Id img) const {
    std::vector<Id> out;
    Id x = img;
    for (const auto& conv : convs_) {
        const Tensor& xv = t.val(x);
        if (xv.dim(1) < 2 || xv.dim(2) < 2) break;
        x = nn::gelu(t, conv(t, x));
        out.push_back(x);
    }
    if (out.empty()) out.push_back(img);
    return out;
}

Id perceptual_distance_op(Tape& t, Id a, Id b, const FeatureExtractor& net) {
    auto fa = net.features(t, a);
    auto fb = net.features(t, b);
    require(fa.size() == fb.size(), "ShapeMismatch", "feature level count mismatch");
    Id total = Tape::kNone;
    for (size_t i = 0; i < fa.size(); ++i) {
        Id x = fa[i], y = fb[i];
        if (net.normalize_features()) {
            x = nn::normalize_channels(t, x);
            y = nn::normalize_channels(t, y);
        }
        Id d = nn::mean_all(t, nn::square(t, nn::sub(t, x, y)));
        total = total == Tape::kNone ? d : nn::add(t, total, d);
    }
    return total;
}

Id multiscale_perceptual_op(Tape& t, Id render, Id target, const FeatureExtractor& net) {
    require(t.val(render).shape == t.val(target).shape, "ShapeMismatch",
            "render/target shape mismatch");
    // scales 1x, 2x, 4x; each level halves the previous one bilinearly
    Id a = render, b = target;
    Id total = Tape::kNone;
    for (int k = 0; k < 3; ++k) {
        if (k > 0) {
            int sh = std::max(1, t.val(a).dim(1) / 2), sw = std::max(1, t.val(a).dim(2) / 2);
            a = nn::resize_bilinear_op(t, a, sh, sw);
            b = nn::resize_bilinear_op(t, b, sh, sw);
        }
        Id d = perceptual_distance_op(t, a, b, net);
        total = total == Tape::kNone ? d : nn::add(t, total, d);
    }
    return total;
}

Id position_reg_op(Tape& t, Id positions, const Tensor& targets) {
    const Tensor& pv = t.val(positions);
    require(pv.shape == targets.shape && pv.ndim() == 2 && pv.dim(1) == 3, "ShapeMismatch",
            "positions/targets must both be (N,3)");
    int n = pv.dim(0);
    auto dist = std::make_shared<std::vector<float>>(n);
    double acc = 0;
    for (int i = 0; i < n; ++i) {
        double d2 = 0;
        for (int k = 0; k < 3; ++k) {
            double d = static_cast<double>(pv.v[3 * i + k]) - targets.v[3 * i + k];
            d2 += d * d;
        }
        (*dist)[i] = static_cast<float>(std::sqrt(d2));
        acc += (*dist)[i];
    }
    Tensor out = Tensor::scalar(static_cast<float>(acc / std::max(1, n)));
    Tensor tg = targets;
    return t.apply(std::move(out), {positions}, [positions, tg, dist, n](Tape& tp, Id self) {
        if (!tp.needs_grad(positions)) return;
        float g = tp.grad(self).v[0] / static_cast<float>(std::max(1, n));
        const Tensor& pv = tp.val(positions);
        Tensor& dp = tp.grad(positions);
        for (int i = 0; i < n; ++i) {
            float d = (*dist)[i];
            if (d < 1e-9f) continue;
            for (int k = 0; k < 3; ++k)
                dp.v[3 * i + k] += g * (pv.v[3 * i + k] - tg.v[3 * i + k]) / d;
        }
    });
}

Tensor anchor_targets(const AnchorMap& map) {
    size_t plane = static_cast<size_t>(map.h) * map.w;
    int n = static_cast<int>(map.valid_count());
    Tensor out({n, 3});
    int i = 0;
    for (size_t tx = 0; tx < plane; ++tx) {
        if (!map.valid[tx]) continue;
        for (int k = 0; k < 3; ++k) out.v[3 * i + k] = map.positions[k * plane + tx];
        ++i;
    }
    return out;
}

Id mask_loss_op(Tape& t, Id alpha, Id gt_mask) { return l1_loss_op(t, alpha, gt_mask); }

Id tv_loss_op(Tape& t, Id uv, const AnchorMap& anchors) {
    Id dc = nn::slice_ch(t, uv, kChanSH, kChanSH + 3);
    const Tensor& xv = t.val(dc);
    int h = xv.dim(1), w = xv.dim(2);
    require(h == anchors.h && w == anchors.w, "ShapeMismatch", "UV/anchor size mismatch");
    size_t plane = static_cast<size_t>(h) * w;

    // horizontal + vertical terms, each averaged over its valid pairs
    double acc_h = 0, acc_v = 0;
    size_t n_h = 0, n_v = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!anchors.valid[y * w + x]) continue;
            if (x + 1 < w && anchors.valid[y * w + x + 1]) {
                for (int c = 0; c < 3; ++c)
                    acc_h += std::abs(xv.v[c * plane + y * w + x + 1] -
                                      xv.v[c * plane + y * w + x]);
                n_h += 3;
            }
            if (y + 1 < h && anchors.valid[(y + 1) * w + x]) {
                for (int c = 0; c < 3; ++c)
                    acc_v += std::abs(xv.v[c * plane + (y + 1) * w + x] -
                                      xv.v[c * plane + y * w + x]);
                n_v += 3;
            }
        }
    double value = (n_h ? acc_h / n_h : 0.0) + (n_v ? acc_v / n_v : 0.0);
    Tensor out = Tensor::scalar(static_cast<float>(value));
    const AnchorMap* am = &anchors;
    return t.apply(std::move(out), {dc}, [dc, am, h, w, plane, n_h, n_v](Tape& tp, Id self) {
        if (!tp.needs_grad(dc)) return;
        float g = tp.grad(self).v[0];
        const Tensor& xv = tp.val(dc);
        Tensor& dx = tp.grad(dc);
        float gh = n_h ? g / static_cast<float>(n_h) : 0.0f;
        float gv = n_v ? g / static_cast<float>(n_v) : 0.0f;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (!am->valid[y * w + x]) continue;
                for (int c = 0; c < 3; ++c) {
                    size_t i0 = c * plane + y * w + x;
                    if (x + 1 < w && am->valid[y * w + x + 1]) {
                        float s = xv.v[i0 + 1] > xv.v[i0] ? 1.0f : (xv.v[i0 + 1] < xv.v[i0] ? -1.0f : 0.0f);
                        dx.v[i0 + 1] += gh * s;
                        dx.v[i0] -= gh * s;
                    }
                    if (y + 1 < h && am->valid[(y + 1) * w + x]) {
                        size_t i1 = i0 + w;
                        float s = xv.v[i1] > xv.v[i0] ? 1.0f : (xv.v[i1] < xv.v[i0] ? -1.0f : 0.0f);
                        dx.v[i1] += gv * s;
                        dx.v[i0] -= gv * s;
                    }
                }
            }
    });
}

// --- adversarial --------------------------------------------------------------

Discriminator::Discriminator(uint64_t seed, int base_channels) {
    Rng rng = Rng(seed).substream("discriminator");
    int chans[5] = {3, base_channels, base_channels * 2, base_channels * 4, base_channels * 8};
    for (int i = 0; i < 4; ++i) {
        auto conv = nn::Conv::create(params_, "disc.conv" + std::to_string(i), chans[i],
                                     chans[i + 1], 4, 2, 1, rng);
        auto* u = &params_.add("disc.conv" + std::to_string(i) + ".u",
                               Tensor::randn({chans[i + 1]}, rng), false);
        layers_.push_back({conv.w, conv.b, u, 2, 1});
    }
    auto head = nn::Conv::create(params_, "disc.head", chans[4], 1, 3, 1, 1, rng);
    auto* u = &params_.add("disc.head.u", Tensor::randn({1}, rng), false);
    layers_.push_back({head.w, head.b, u, 1, 1});
}

Id Discriminator::logits(Tape& t, Id img, bool update_power_iter) const {
    Id x = img;
    for (size_t i = 0; i < layers_.size(); ++i) {
        const Layer& l = layers_[i];
        Id w = spectral_scale(t, t.param(*l.w), *l.u, update_power_iter);
        x = nn::conv2d(t, x, w, t.param(*l.b), l.stride, l.pad);
        if (i + 1 < layers_.size()) x = nn::leaky_relu(t, x, 0.2f);
    }
    return x;
}

CropRect2D sample_crop(int img_w, int img_h, int crop, Rng& rng) {
    int cw = std::min(crop, img_w), ch = std::min(crop, img_h);
    int max_x = img_w - cw, max_y = img_h - ch;
    int x0 = max_x > 0 ? static_cast<int>(rng.uniform_int(static_cast<uint64_t>(max_x) + 1)) : 0;
    int y0 = max_y > 0 ? static_cast<int>(rng.uniform_int(static_cast<uint64_t>(max_y) + 1)) : 0;
    return {x0, y0, cw, ch};
}

Id crop_op(Tape& t, Id img, const CropRect2D& rect) {
    const Tensor& xv = t.val(img);
    require(xv.ndim() == 3, "ShapeMismatch", "crop expects (C,H,W)");
    int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    require(rect.x0 >= 0 && rect.y0 >= 0 && rect.x0 + rect.w <= w && rect.y0 + rect.h <= h,
            "ShapeMismatch", "crop rectangle out of bounds");
    Tensor out({c, rect.h, rect.w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < rect.h; ++y)
            std::copy_n(xv.data() + (static_cast<size_t>(ch) * h + rect.y0 + y) * w + rect.x0,
                        rect.w, out.data() + (static_cast<size_t>(ch) * rect.h + y) * rect.w);
    return t.apply(std::move(out), {img}, [img, rect, c, h, w](Tape& tp, Id self) {
        if (!tp.needs_grad(img)) return;
        const Tensor& dy = tp.grad(self);
        Tensor& dx = tp.grad(img);
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < rect.h; ++y) {
                const float* src = dy.data() + (static_cast<size_t>(ch) * rect.h + y) * rect.w;
                float* dst = dx.data() + (static_cast<size_t>(ch) * h + rect.y0 + y) * w + rect.x0;
                for (int x = 0; x < rect.w; ++x) dst[x] += src[x];
            }
    });
}

AdvPair adversarial_pair(Tape& t, Id render_crop, Id real_crop, const Discriminator& disc,
                         bool update_power_iter) {
    // generator side sees gradients through the fake crop
    Id d_fake = disc.logits(t, render_crop, false);
    Id g_loss = nn::scale(t, nn::mean_all(t, d_fake), -1.0f);

    // discriminator side trains on the detached fake
    Id fake_detached = t.constant(t.val(render_crop));
    Id d_fake_det = disc.logits(t, fake_detached, update_power_iter);
    Id d_real = disc.logits(t, real_crop, false);
    Id ones = t.constant(Tensor(t.val(d_real).shape, 1.0f));
    Id loss_real = nn::mean_all(t, nn::relu(t, nn::sub(t, ones, d_real)));
    Id loss_fake = nn::mean_all(t, nn::relu(t, nn::add(t, ones, d_fake_det)));
    Id d_loss = nn::add(t, loss_real, loss_fake);
    return {g_loss, d_loss};
}

}  // namespace headsup
