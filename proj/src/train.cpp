#include "csisense/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

using json = nlohmann::json;

namespace csisense {

// --- config -----------------------------------------------------------------

std::string TrainConfig::to_json() const {
    json j = {{"epochs", epochs},
              {"batch_size", batch_size},
              {"test_batch", test_batch},
              {"base_lr", base_lr},
              {"min_lr", min_lr},
              {"weight_decay", weight_decay},
              {"betas", {beta1, beta2}},
              {"seed", seed},
              {"augment", augment},
              {"loss_weights", {loss_weight_rod, loss_weight_har}}};
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw FormatError("train config: invalid JSON");
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.test_batch = j.value("test_batch", c.test_batch);
    c.base_lr = j.value("base_lr", c.base_lr);
    c.min_lr = j.value("min_lr", c.min_lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    if (j.contains("betas")) {
        c.beta1 = j["betas"][0].get<float>();
        c.beta2 = j["betas"][1].get<float>();
    }
    c.seed = j.value("seed", c.seed);
    c.augment = j.value("augment", c.augment);
    if (j.contains("loss_weights")) {
        c.loss_weight_rod = j["loss_weights"][0].get<float>();
        c.loss_weight_har = j["loss_weights"][1].get<float>();
    }
    if (c.epochs < 1 || c.batch_size < 1)
        throw ValueError("train config: epochs and batch_size must be >= 1");
    return c;
}

TrainConfig TrainConfig::from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open train config: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return from_json(ss.str());
}

// --- joint loss ----------------------------------------------------------------

std::pair<Tensor, LossReport> joint_loss(const Tensor& rod_logits,
                                         const Tensor& har_logits,
                                         const std::vector<int>& rod_labels,
                                         const std::vector<int>& har_labels,
                                         float w_rod, float w_har) {
    if (rod_logits.dim(0) != har_logits.dim(0) ||
        rod_logits.dim(0) != int(rod_labels.size()) ||
        rod_labels.size() != har_labels.size())
        throw DimensionError("joint_loss: batch sizes disagree");
    Tensor rod_ce = softmax_cross_entropy(rod_logits, rod_labels);
    const bool any_har =
        std::any_of(har_labels.begin(), har_labels.end(), [](int l) { return l >= 0; });
    LossReport rep;
    rep.rod_ce = rod_ce.item64();
    Tensor total;
    if (any_har) {
        Tensor har_ce = softmax_cross_entropy(har_logits, har_labels);
        rep.har_ce = har_ce.item64();
        // scale via elementwise mul against constant weights
        Tensor wr = Tensor::full({1}, w_rod), wh = Tensor::full({1}, w_har);
        total = add(mul(rod_ce, wr), mul(har_ce, wh));
    } else {
        Tensor wr = Tensor::full({1}, w_rod);
        total = mul(rod_ce, wr);
    }
    rep.total = double(w_rod) * rep.rod_ce + double(w_har) * rep.har_ce;
    total.unwrap()->scalar64 = rep.total;
    return {total, rep};
}

// --- optimizer --------------------------------------------------------------------

AdamW::AdamW(std::vector<Tensor> params, float beta1, float beta2,
             float weight_decay, float eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), wd_(weight_decay),
      eps_(eps) {
    for (const Tensor& p : params_) {
        m_.emplace_back(p.size(), 0.0f);
        v_.emplace_back(p.size(), 0.0f);
    }
}

void AdamW::step(float lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(double(beta1_), t_);
    const double bc2 = 1.0 - std::pow(double(beta2_), t_);
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        const std::vector<float>& g = p.grad_values();
        float* x = p.data();
        for (size_t k = 0; k < p.size(); ++k) {
            // decoupled decay: applied to the parameter, not the gradient
            x[k] -= lr * wd_ * x[k];
            const double gk = g.empty() ? 0.0 : double(g[k]);
            if (gk == 0.0 && m_[i][k] == 0.0f && v_[i][k] == 0.0f) continue;
            m_[i][k] = float(double(beta1_) * m_[i][k] + (1.0 - double(beta1_)) * gk);
            v_[i][k] = float(double(beta2_) * v_[i][k] + (1.0 - double(beta2_)) * gk * gk);
            const double mhat = double(m_[i][k]) / bc1;
            const double vhat = double(v_[i][k]) / bc2;
            x[k] -= float(double(lr) * mhat / (std::sqrt(vhat) + double(eps_)));
        }
    }
}

void AdamW::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

double cosine_lr(int epoch, int total_epochs, double base_lr, double min_lr) {
    if (epoch < 0 || epoch > total_epochs)
        throw ValueError("cosine_lr: epoch outside [0, total]");
    if (total_epochs == 0) return base_lr;
    return min_lr + 0.5 * (base_lr - min_lr) *
                        (1.0 + std::cos(M_PI * double(epoch) / double(total_epochs)));
}

// --- augmentation ------------------------------------------------------------------

namespace {

// Bilinear resize of a row-major src (sh x sw) window to dh x dw.
void resize_bilinear(const std::vector<float>& src, int sh, int sw, int r0, int c0,
                     int ch, int cw, int stride, std::vector<float>& dst, int dh, int dw) {
    for (int y = 0; y < dh; ++y) {
        const float fy = (ch > 1) ? float(y) * float(ch - 1) / float(dh - 1) : 0.0f;
        const int y0 = int(fy);
        const int y1 = std::min(y0 + 1, ch - 1);
        const float wy = fy - float(y0);
        for (int x = 0; x < dw; ++x) {
            const float fx = (cw > 1) ? float(x) * float(cw - 1) / float(dw - 1) : 0.0f;
            const int x0 = int(fx);
            const int x1 = std::min(x0 + 1, cw - 1);
            const float wx = fx - float(x0);
            const float a = src[size_t(r0 + y0) * stride + size_t(c0 + x0)];
            const float b = src[size_t(r0 + y0) * stride + size_t(c0 + x1)];
            const float c = src[size_t(r0 + y1) * stride + size_t(c0 + x0)];
            const float d = src[size_t(r0 + y1) * stride + size_t(c0 + x1)];
            dst[size_t(y) * dw + x] =
                (1 - wy) * ((1 - wx) * a + wx * b) + wy * ((1 - wx) * c + wx * d);
        }
    }
    (void)sh; (void)sw;
}

}  // namespace

RadioImage augment(const RadioImage& img, uint64_t seed, const AugmentConfig& cfg) {
    std::mt19937 rng{uint32_t(seed)};
    std::uniform_real_distribution<float> uscale(cfg.crop_scale_min, cfg.crop_scale_max);
    std::uniform_real_distribution<float> u01(0.0f, 1.0f);

    RadioImage out = img;
    // random resized crop (area scale, aspect kept)
    const float scale = std::sqrt(uscale(rng));
    const int ch = std::max(2, int(std::round(float(img.rows) * scale)));
    const int cw = std::max(2, int(std::round(float(img.cols) * scale)));
    const int r0 = int(u01(rng) * float(img.rows - ch));
    const int c0 = int(u01(rng) * float(img.cols - cw));
    const bool flip = cfg.flip && u01(rng) < 0.5f;
    const float brightness =
        (u01(rng) * 2.0f - 1.0f) * cfg.jitter_brightness;
    const float contrast = 1.0f + (u01(rng) * 2.0f - 1.0f) * cfg.jitter_contrast;

    if (ch != img.rows || cw != img.cols)
        resize_bilinear(img.values, img.rows, img.cols, r0, c0, ch, cw, img.cols,
                        out.values, img.rows, img.cols);
    if (flip)  // time axis reversal
        for (int r = 0; r < out.rows; ++r)
            std::reverse(out.values.begin() + size_t(r) * out.cols,
                         out.values.begin() + size_t(r + 1) * out.cols);
    if (brightness != 0.0f || contrast != 1.0f)
        for (float& v : out.values)
            v = std::clamp((v - 0.5f) * contrast + 0.5f + brightness, 0.0f, 1.0f);
    return out;
}

// --- training loop --------------------------------------------------------------------

Tensor batch_input(const std::vector<const RadioImage*>& samples) {
    if (samples.empty()) throw ValueError("batch_input: empty batch");
    const int rows = samples[0]->rows, cols = samples[0]->cols;
    Tensor x({int(samples.size()), 1, rows, cols});
    for (size_t i = 0; i < samples.size(); ++i) {
        if (samples[i]->rows != rows || samples[i]->cols != cols)
            throw DimensionError("batch_input: inconsistent sample shapes");
        std::copy(samples[i]->values.begin(), samples[i]->values.end(),
                  x.data() + i * size_t(rows) * cols);
    }
    return replicate_channels(x);
}

TrainResult train(BranchyModel& model, const std::vector<RadioImage>& dataset,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
    if (dataset.empty()) throw ValueError("train: empty dataset");
    for (const RadioImage& s : dataset)
        if (!s.rod_label) throw ValueError("train: every sample needs a rod label");

    AdamW opt(model.parameters(), cfg.beta1, cfg.beta2, cfg.weight_decay);
    std::mt19937 shuffle_rng{uint32_t(cfg.seed)};
    TrainResult result;

    std::vector<size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), size_t(0));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, cfg.epochs, cfg.base_lr, cfg.min_lr);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double sum_rod = 0.0, sum_har = 0.0, sum_total = 0.0;
        int batches = 0;

        for (size_t start = 0; start < order.size(); start += size_t(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + size_t(cfg.batch_size));
            std::vector<RadioImage> augmented;
            std::vector<const RadioImage*> batch;
            std::vector<int> rod_labels, har_labels;
            augmented.reserve(end - start);
            for (size_t i = start; i < end; ++i) {
                const RadioImage& s = dataset[order[i]];
                if (cfg.augment) {
                    const uint64_t aseed =
                        cfg.seed * 1000003ull + uint64_t(epoch) * 131071ull + order[i];
                    augmented.push_back(augment(s, aseed));
                } else {
                    augmented.push_back(s);
                }
                rod_labels.push_back(*s.rod_label);
                har_labels.push_back(s.har_label ? *s.har_label : -1);
            }
            for (const RadioImage& s : augmented) batch.push_back(&s);

            clear_tape();
            opt.zero_grad();
            Tensor x = batch_input(batch);
            auto [rod_logits, har_logits] = model.forward_full(x, true);
            auto [total, rep] =
                joint_loss(rod_logits, har_logits, rod_labels, har_labels,
                           cfg.loss_weight_rod, cfg.loss_weight_har);
            if (!std::isfinite(rep.total))
                throw ValueError("train: NaN loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batches) + ", lr " +
                                 std::to_string(lr));
            backward(total);
            opt.step(float(lr));
            sum_rod += rep.rod_ce;
            sum_har += rep.har_ce;
            sum_total += rep.total;
            ++batches;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.loss = {sum_rod / batches, sum_har / batches, sum_total / batches};
        result.history.push_back(rec);
        if (on_epoch && !on_epoch(rec)) break;
    }
    return result;
}

// --- metrics -------------------------------------------------------------------------

MetricsReport metrics_from_confusion(const std::vector<std::vector<long>>& confusion) {
    const size_t k = confusion.size();
    MetricsReport r;
    r.confusion = confusion;
    long total = 0, correct = 0;
    std::vector<long> tp(k, 0), pred_sum(k, 0), true_sum(k, 0);
    for (size_t t = 0; t < k; ++t)
        for (size_t p = 0; p < k; ++p) {
            const long n = confusion[t][p];
            total += n;
            true_sum[t] += n;
            pred_sum[p] += n;
            if (t == p) {
                tp[t] += n;
                correct += n;
            }
        }
    if (total == 0) throw ValueError("metrics: empty confusion matrix");
    r.accuracy = double(correct) / double(total);

    double mp = 0.0, mr = 0.0, mf = 0.0;
    for (size_t c = 0; c < k; ++c) {
        const double p = pred_sum[c] ? double(tp[c]) / double(pred_sum[c]) : 0.0;
        const double rc = true_sum[c] ? double(tp[c]) / double(true_sum[c]) : 0.0;
        mp += p;
        mr += rc;
        mf += (p + rc) > 0.0 ? 2.0 * p * rc / (p + rc) : 0.0;
    }
    r.macro_precision = mp / double(k);
    r.macro_recall = mr / double(k);
    r.macro_f1 = mf / double(k);
    // single-label classification: micro precision = micro recall = accuracy
    r.micro_precision = r.micro_recall = r.micro_f1 = r.accuracy;
    return r;
}

MetricsReport evaluate(BranchyModel& model, const std::vector<RadioImage>& dataset,
                       EvalMode mode) {
    if (dataset.empty()) throw ValueError("evaluate: empty dataset");
    const size_t k = mode == EvalMode::rod ? 3 : 5;
    std::vector<std::vector<long>> confusion(k, std::vector<long>(k, 0));
    NoGradGuard ng;
    for (const RadioImage& s : dataset) {
        const std::optional<int>& label = mode == EvalMode::rod ? s.rod_label : s.har_label;
        if (!label) {
            if (mode == EvalMode::har) continue;  // unlabeled for this task
            throw ValueError("evaluate: sample without rod label");
        }
        Tensor x = batch_input({&s});
        auto [rod_logits, har_logits] = model.forward_full(x, false);
        const Tensor& logits = mode == EvalMode::rod ? rod_logits : har_logits;
        std::vector<float> probs = softmax_rows(logits);
        int pred = 0;
        for (size_t i = 1; i < k; ++i)
            if (probs[i] > probs[size_t(pred)]) pred = int(i);
        confusion[size_t(*label)][size_t(pred)] += 1;
    }
    return metrics_from_confusion(confusion);
}

std::string MetricsReport::to_json() const {
    json j = {{"accuracy", accuracy},
              {"macro", {{"precision", macro_precision}, {"recall", macro_recall}, {"f1", macro_f1}}},
              {"micro", {{"precision", micro_precision}, {"recall", micro_recall}, {"f1", micro_f1}}},
              {"confusion", confusion}};
    return j.dump(2);
}

std::string MetricsReport::to_table(const char* const* class_names) const {
    std::ostringstream os;
    char buf[128];
    std::snprintf(buf, sizeof(buf),
                  "accuracy %.4f | macro P %.4f R %.4f F1 %.4f | micro P/R/F1 %.4f\n",
                  accuracy, macro_precision, macro_recall, macro_f1, micro_precision);
    os << buf << "confusion (rows = true, cols = predicted):\n";
    const size_t k = confusion.size();
    os << "            ";
    for (size_t c = 0; c < k; ++c) {
        std::snprintf(buf, sizeof(buf), "%12s", class_names[c]);
        os << buf;
    }
    os << "\n";
    for (size_t t = 0; t < k; ++t) {
        std::snprintf(buf, sizeof(buf), "%12s", class_names[t]);
        os << buf;
        for (size_t p = 0; p < k; ++p) {
            std::snprintf(buf, sizeof(buf), "%12ld", confusion[t][p]);
            os << buf;
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace csisense
