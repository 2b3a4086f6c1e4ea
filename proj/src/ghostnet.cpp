#include "csisense/ghostnet.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

#include "csisense/kernels.hpp"

namespace csisense {

namespace {

// GhostNet stage table: kernel, expansion channels, output channels, SE, stride.
struct StageCfg {
    int kernel, exp, out, se, stride;
};
constexpr StageCfg kStages[] = {
    {3, 16, 16, 0, 1},   {3, 48, 24, 0, 2},   {3, 72, 24, 0, 1},
    {5, 72, 40, 1, 2},   {5, 120, 40, 1, 1},  {3, 240, 80, 0, 2},
    {3, 200, 80, 0, 1},  {3, 184, 80, 0, 1},  {3, 184, 80, 0, 1},
    {3, 480, 112, 1, 1}, {3, 672, 112, 1, 1}, {5, 672, 160, 1, 2},
    {5, 960, 160, 0, 1}, {5, 960, 160, 1, 1}, {5, 960, 160, 0, 1},
    {5, 960, 160, 1, 1},
};
constexpr int kNumStages = int(sizeof(kStages) / sizeof(kStages[0]));
constexpr int kStemChannels = 16;
constexpr int kHeadExpand = 960;
constexpr int kFinalWidth = 1280;     // fixed across width multipliers
constexpr int kEarlyHeadWidth = 96;   // pointwise width of the early feature head
constexpr int kSeReduction = 4;

int64_t now_ns() {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

int argmax_row(const std::vector<float>& v) {
    int best = 0;
    for (int i = 1; i < int(v.size()); ++i)
        if (v[size_t(i)] > v[size_t(best)]) best = i;
    return best;
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

int round_channels(float v, int divisor) {
    int c = int(v + float(divisor) / 2.0f) / divisor * divisor;
    return std::max(c, divisor);
}

// --- Conv2d -------------------------------------------------------------------

Conv2d::Conv2d(int in_ch_, int out_ch_, int kernel_, int stride_, int pad_,
               bool depthwise_, std::mt19937& rng)
    : in_ch(in_ch_), out_ch(out_ch_), kernel(kernel_), stride(stride_), pad(pad_),
      depthwise(depthwise_) {
    const int fan_in = (depthwise ? 1 : in_ch) * kernel * kernel;
    const float std = std::sqrt(2.0f / float(fan_in));
    if (depthwise) {
        if (out_ch != in_ch) throw BuildError("depthwise conv requires out_ch == in_ch");
        weight = Tensor::randn({in_ch, 1, kernel, kernel}, rng, std, true);
    } else {
        weight = Tensor::randn({out_ch, in_ch, kernel, kernel}, rng, std, true);
    }
}

Tensor Conv2d::forward(const Tensor& x, bool) {
    return depthwise ? depthwise_conv2d(x, weight, stride, pad)
                     : conv2d(x, weight, stride, pad);
}

void Conv2d::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".weight", weight, false);
}

Shape3 Conv2d::account(Shape3 in, LayerCounts& counts) const {
    const int ho = kernels::conv_out_dim(in.h, kernel, stride, pad);
    const int wo = kernels::conv_out_dim(in.w, kernel, stride, pad);
    const long long pix = (long long)ho * wo;
    counts.conv += 1;
    counts.macs += pix * out_ch * (depthwise ? 1 : in.c) * kernel * kernel;
    return {out_ch, ho, wo};
}

void Conv2d::describe(std::string& out) const {
    out += (depthwise ? "dw" : "conv") + std::to_string(kernel) + "x" +
           std::to_string(kernel) + "(" + std::to_string(in_ch) + "->" +
           std::to_string(out_ch) + ",s" + std::to_string(stride) + ");";
}

// --- BatchNorm2d ---------------------------------------------------------------

BatchNorm2d::BatchNorm2d(int channels_) : channels(channels_) {
    gamma = Tensor::full({channels}, 1.0f, true);
    beta = Tensor::zeros({channels}, true);
    running_mean = Tensor::zeros({channels});
    running_var = Tensor::full({channels}, 1.0f);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
    return batch_norm(x, gamma, beta, running_mean, running_var, training, momentum, eps);
}

void BatchNorm2d::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".gamma", gamma, false);
    fn(prefix + ".beta", beta, false);
    fn(prefix + ".running_mean", running_mean, true);
    fn(prefix + ".running_var", running_var, true);
}

Shape3 BatchNorm2d::account(Shape3 in, LayerCounts&) const { return in; }

void BatchNorm2d::describe(std::string& out) const {
    out += "bn" + std::to_string(channels) + ";";
}

// --- ConvBnAct -------------------------------------------------------------------

ConvBnAct::ConvBnAct(int in_ch, int out_ch, int kernel, int stride, int pad,
                     bool depthwise, bool act_, std::mt19937& rng)
    : act(act_) {
    conv = std::make_shared<Conv2d>(in_ch, out_ch, kernel, stride, pad, depthwise, rng);
    bn = std::make_shared<BatchNorm2d>(out_ch);
}

Tensor ConvBnAct::forward(const Tensor& x, bool training) {
    Tensor y = bn->forward(conv->forward(x, training), training);
    return act ? relu(y) : y;
}

void ConvBnAct::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    conv->visit_params(prefix + ".conv", fn);
    bn->visit_params(prefix + ".bn", fn);
}

Shape3 ConvBnAct::account(Shape3 in, LayerCounts& counts) const {
    return bn->account(conv->account(in, counts), counts);
}

void ConvBnAct::describe(std::string& out) const {
    conv->describe(out);
    bn->describe(out);
    if (act) out += "relu;";
}

// --- GhostModule ------------------------------------------------------------------

GhostModule::GhostModule(int in_ch_, int out_ch_, int ratio_, int primary_kernel,
                         int cheap_kernel, int stride, bool act, std::mt19937& rng)
    : in_ch(in_ch_), out_ch(out_ch_), ratio(ratio_) {
    if (ratio < 1) throw BuildError("ghost module ratio must be >= 1");
    if (out_ch % ratio != 0)
        throw BuildError("ghost module: out_ch " + std::to_string(out_ch) +
                         " not divisible by ratio " + std::to_string(ratio));
    const int intrinsic = out_ch / ratio;
    primary = std::make_shared<ConvBnAct>(in_ch, intrinsic, primary_kernel, stride,
                                          primary_kernel / 2, false, act, rng);
    for (int g = 1; g < ratio; ++g)
        cheap.push_back(std::make_shared<ConvBnAct>(intrinsic, intrinsic, cheap_kernel, 1,
                                                    cheap_kernel / 2, true, act, rng));
}

Tensor GhostModule::forward(const Tensor& x, bool training) {
    if (x.dim(1) != in_ch)
        throw DimensionError("ghost module: expected " + std::to_string(in_ch) +
                             " input channels, got " + std::to_string(x.dim(1)));
    Tensor intrinsic = primary->forward(x, training);
    Tensor out = intrinsic;
    for (auto& bank : cheap)
        out = concat_channels(out, bank->forward(intrinsic, training));
    return out;
}

void GhostModule::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    primary->visit_params(prefix + ".primary", fn);
    for (size_t i = 0; i < cheap.size(); ++i)
        cheap[i]->visit_params(prefix + ".cheap." + std::to_string(i), fn);
}

Shape3 GhostModule::account(Shape3 in, LayerCounts& counts) const {
    Shape3 s = primary->account(in, counts);
    for (const auto& bank : cheap) bank->account(s, counts);
    return {out_ch, s.h, s.w};
}

void GhostModule::describe(std::string& out) const {
    out += "ghost(r" + std::to_string(ratio) + "){";
    primary->describe(out);
    for (const auto& bank : cheap) bank->describe(out);
    out += "}";
}

// --- SEBlock ------------------------------------------------------------------------

SEBlock::SEBlock(int channels_, int reduction_, std::mt19937& rng)
    : channels(channels_), reduction(reduction_) {
    const int mid = std::max(round_channels(float(channels) / float(reduction)), 4);
    reduce = std::make_shared<Conv2d>(channels, mid, 1, 1, 0, false, rng);
    expand = std::make_shared<Conv2d>(mid, channels, 1, 1, 0, false, rng);
}

Tensor SEBlock::forward(const Tensor& x, bool training) {
    const int n = x.dim(0), c = x.dim(1);
    Tensor pooled = reshape(global_avg_pool(x), {n, c, 1, 1});
    Tensor gate = relu(reduce->forward(pooled, training));
    gate = hard_sigmoid(expand->forward(gate, training));
    return scale_channels(x, reshape(gate, {n, c}));
}

void SEBlock::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    reduce->visit_params(prefix + ".reduce", fn);
    expand->visit_params(prefix + ".expand", fn);
}

Shape3 SEBlock::account(Shape3 in, LayerCounts& counts) const {
    Shape3 pooled{in.c, 1, 1};
    Shape3 mid = reduce->account(pooled, counts);
    expand->account(mid, counts);
    return in;
}

void SEBlock::describe(std::string& out) const {
    out += "se{";
    reduce->describe(out);
    expand->describe(out);
    out += "}";
}

// --- GhostBottleneck ---------------------------------------------------------------

GhostBottleneck::GhostBottleneck(int in_ch_, int exp_ch, int out_ch_, int kernel,
                                 int stride_, bool use_se, std::mt19937& rng)
    : in_ch(in_ch_), out_ch(out_ch_), stride(stride_) {
    if (stride != 1 && stride != 2)
        throw BuildError("ghost bottleneck stride must be 1 or 2");
    expand_ghost = std::make_shared<GhostModule>(in_ch, exp_ch, 2, 1, 3, 1, true, rng);
    if (stride == 2)
        mid_dw = std::make_shared<ConvBnAct>(exp_ch, exp_ch, kernel, 2, kernel / 2,
                                             true, false, rng);
    if (use_se) se = std::make_shared<SEBlock>(exp_ch, kSeReduction, rng);
    project_ghost = std::make_shared<GhostModule>(exp_ch, out_ch, 2, 1, 3, 1, false, rng);
    if (stride != 1 || in_ch != out_ch) {
        short_dw = std::make_shared<ConvBnAct>(in_ch, in_ch, kernel, stride, kernel / 2,
                                               true, false, rng);
        short_pw = std::make_shared<ConvBnAct>(in_ch, out_ch, 1, 1, 0, false, false, rng);
    }
}

Tensor GhostBottleneck::forward(const Tensor& x, bool training) {
    Tensor y = expand_ghost->forward(x, training);
    if (mid_dw) y = mid_dw->forward(y, training);
    if (se) y = se->forward(y, training);
    y = project_ghost->forward(y, training);
    Tensor shortcut = x;
    if (short_dw) shortcut = short_pw->forward(short_dw->forward(x, training), training);
    if (y.shape() != shortcut.shape())
        throw DimensionError("ghost bottleneck: residual shape mismatch");
    return add(y, shortcut);
}

void GhostBottleneck::visit_params(const std::string& prefix, const ParamVisitor& fn) {
    expand_ghost->visit_params(prefix + ".expand", fn);
    if (mid_dw) mid_dw->visit_params(prefix + ".mid_dw", fn);
    if (se) se->visit_params(prefix + ".se", fn);
    project_ghost->visit_params(prefix + ".project", fn);
    if (short_dw) {
        short_dw->visit_params(prefix + ".short_dw", fn);
        short_pw->visit_params(prefix + ".short_pw", fn);
    }
}

Shape3 GhostBottleneck::account(Shape3 in, LayerCounts& counts) const {
    Shape3 s = expand_ghost->account(in, counts);
    if (mid_dw) s = mid_dw->account(s, counts);
    if (se) s = se->account(s, counts);
    s = project_ghost->account(s, counts);
    if (short_dw) {
        Shape3 sc = short_dw->account(in, counts);
        short_pw->account(sc, counts);
    }
    return s;
}

void GhostBottleneck::describe(std::string& out) const {
    out += "gbneck(s" + std::to_string(stride) + "){";
    expand_ghost->describe(out);
    if (mid_dw) mid_dw->describe(out);
    if (se) se->describe(out);
    project_ghost->describe(out);
    if (short_dw) {
        out += "short{";
        short_dw->describe(out);
        short_pw->describe(out);
        out += "}";
    }
    out += "}";
}

// --- BranchyModel --------------------------------------------------------------------

Tensor BranchyModel::trunk_to(const Tensor& x, int from, int to, bool training) {
    Tensor t = x;
    for (int i = from; i < to; ++i) t = trunk[size_t(i)]->forward(t, training);
    return t;
}

Tensor BranchyModel::early_branch(const Tensor& at_branch, bool training) {
    Tensor t = early_head->forward(at_branch, training);
    return linear(global_avg_pool(t), early_fc_w, early_fc_b);
}

Tensor BranchyModel::final_branch(const Tensor& trunk_out, bool training) {
    const int n = trunk_out.dim(0), c = trunk_out.dim(1);
    Tensor t = reshape(global_avg_pool(trunk_out), {n, c, 1, 1});
    t = relu(final_head->forward(t, training));
    return linear(reshape(t, {n, t.dim(1)}), final_fc_w, final_fc_b);
}

std::pair<Tensor, Tensor> BranchyModel::forward_full(const Tensor& x, bool training) {
    if (x.shape().size() != 4 || x.dim(1) != 3)
        throw DimensionError("forward_full expects [N,3,H,W] input");
    Tensor at_branch = trunk_to(x, 0, branch_index, training);
    Tensor rod = early_branch(at_branch, training);
    Tensor trunk_out = trunk_to(at_branch, branch_index, int(trunk.size()), training);
    Tensor har = final_branch(trunk_out, training);
    return {rod, har};
}

InferenceOutcome BranchyModel::forward_with_exit(const Tensor& x) {
    if (x.shape().size() != 4 || x.dim(0) != 1 || x.dim(1) != 3)
        throw DimensionError("forward_with_exit expects a single [1,3,H,W] sample");
    NoGradGuard ng;
    InferenceOutcome out;

    int64_t t0 = now_ns();
    Tensor at_branch = trunk_to(x, 0, branch_index, false);
    int64_t t1 = now_ns();
    Tensor rod_logits = early_branch(at_branch, false);
    int64_t t2 = now_ns();
    out.timings.trunk_to_branch_ns = t1 - t0;
    out.timings.early_head_ns = t2 - t1;

    out.rod_probs = softmax_rows(rod_logits);
    out.rod_label = argmax_row(out.rod_probs);
    if (out.rod_label == 0 || out.rod_label == 2) {
        out.exited_early = true;
        return out;
    }
    int64_t t3 = now_ns();
    Tensor trunk_out = trunk_to(at_branch, branch_index, int(trunk.size()), false);
    int64_t t4 = now_ns();
    Tensor har_logits = final_branch(trunk_out, false);
    int64_t t5 = now_ns();
    out.timings.trunk_rest_ns = t4 - t3;
    out.timings.final_head_ns = t5 - t4;
    out.har_probs = softmax_rows(har_logits);
    out.har_label = argmax_row(*out.har_probs);
    return out;
}

Tensor BranchyModel::forward_early_only(const Tensor& x) {
    NoGradGuard ng;
    return early_branch(trunk_to(x, 0, branch_index, false), false);
}

void BranchyModel::visit_params(const ParamVisitor& fn) {
    for (size_t i = 0; i < trunk.size(); ++i)
        trunk[i]->visit_params("trunk." + std::to_string(i), fn);
    early_head->visit_params("early_head", fn);
    fn("early_fc.weight", early_fc_w, false);
    fn("early_fc.bias", early_fc_b, false);
    final_head->visit_params("final_head", fn);
    fn("final_fc.weight", final_fc_w, false);
    fn("final_fc.bias", final_fc_b, false);
}

std::vector<Tensor> BranchyModel::parameters() {
    std::vector<Tensor> out;
    visit_params([&](const std::string&, Tensor& t, bool is_buffer) {
        if (!is_buffer) out.push_back(t);
    });
    return out;
}

std::string BranchyModel::describe() const {
    std::string s = "branchy-ghostnet;w=" + std::to_string(config.width_multiplier) +
                    ";branch=" + std::to_string(config.branch_after_bottleneck) +
                    ";rod=" + std::to_string(config.rod_classes) +
                    ";har=" + std::to_string(config.har_classes) + ";";
    for (const auto& m : trunk) m->describe(s);
    s += "early{";
    early_head->describe(s);
    s += "fc" + std::to_string(early_fc_w.dim(1)) + "->" + std::to_string(early_fc_w.dim(0));
    s += "}final{";
    final_head->describe(s);
    s += "fc" + std::to_string(final_fc_w.dim(1)) + "->" + std::to_string(final_fc_w.dim(0));
    s += "}";
    return s;
}

uint64_t BranchyModel::topology_hash() const { return fnv1a(describe()); }

LayerCounts BranchyModel::count(Shape3 input) const {
    LayerCounts c;
    Shape3 s = input;
    for (int i = 0; i < branch_index; ++i) s = trunk[size_t(i)]->account(s, c);
    Shape3 eb = early_head->account(s, c);
    c.fc += 1;
    c.macs += (long long)eb.c * early_fc_w.dim(0);
    for (int i = branch_index; i < int(trunk.size()); ++i)
        s = trunk[size_t(i)]->account(s, c);
    Shape3 pooled{s.c, 1, 1};
    Shape3 fh = final_head->account(pooled, c);
    c.fc += 1;
    c.macs += (long long)fh.c * final_fc_w.dim(0);
    return c;
}

LayerCounts BranchyModel::count_early(Shape3 input) const {
    LayerCounts c;
    Shape3 s = input;
    for (int i = 0; i < branch_index; ++i) s = trunk[size_t(i)]->account(s, c);
    Shape3 eb = early_head->account(s, c);
    c.fc += 1;
    c.macs += (long long)eb.c * early_fc_w.dim(0);
    return c;
}

// --- builder -----------------------------------------------------------------------

BranchyModel build_branchy_ghostnet(const BranchyConfig& cfg) {
    if (cfg.width_multiplier <= 0.0f)
        throw BuildError("width multiplier must be > 0");
    if (cfg.branch_after_bottleneck < 1 || cfg.branch_after_bottleneck > kNumStages)
        throw BuildError("branch point must be in [1," + std::to_string(kNumStages) + "]");
    std::mt19937 rng(cfg.seed);
    const float w = cfg.width_multiplier;

    BranchyModel m;
    m.config = cfg;
    int ch = round_channels(kStemChannels * w);
    m.trunk.push_back(std::make_shared<ConvBnAct>(3, ch, 3, 2, 1, false, true, rng));
    for (int i = 0; i < kNumStages; ++i) {
        const StageCfg& s = kStages[i];
        const int exp_ch = round_channels(float(s.exp) * w);
        const int out_ch = round_channels(float(s.out) * w);
        m.trunk.push_back(std::make_shared<GhostBottleneck>(ch, exp_ch, out_ch, s.kernel,
                                                            s.stride, s.se != 0, rng));
        ch = out_ch;
    }
    const int head_ch = round_channels(float(kHeadExpand) * w);
    m.trunk.push_back(std::make_shared<ConvBnAct>(ch, head_ch, 1, 1, 0, false, true, rng));

    m.branch_index = 1 + cfg.branch_after_bottleneck;  // stem + bottlenecks

    // early head: depthwise 3x3 + pointwise feature conv, then GAP -> FC(rod)
    int branch_ch = round_channels(float(kStages[cfg.branch_after_bottleneck - 1].out) * w);
    auto eh_dw = std::make_shared<ConvBnAct>(branch_ch, branch_ch, 3, 1, 1, true, true, rng);
    auto eh_pw = std::make_shared<ConvBnAct>(branch_ch, kEarlyHeadWidth, 1, 1, 0, false,
                                             true, rng);
    struct Seq2 : Module {
        ModulePtr a, b;
        Tensor forward(const Tensor& x, bool training) override {
            return b->forward(a->forward(x, training), training);
        }
        void visit_params(const std::string& p, const ParamVisitor& fn) override {
            a->visit_params(p + ".dw", fn);
            b->visit_params(p + ".pw", fn);
        }
        Shape3 account(Shape3 in, LayerCounts& c) const override {
            return b->account(a->account(in, c), c);
        }
        void describe(std::string& out) const override {
            a->describe(out);
            b->describe(out);
        }
    };
    auto eh = std::make_shared<Seq2>();
    eh->a = eh_dw;
    eh->b = eh_pw;
    m.early_head = eh;
    m.early_fc_w = Tensor::randn({cfg.rod_classes, kEarlyHeadWidth}, rng, 0.01f, true);
    m.early_fc_b = Tensor::zeros({cfg.rod_classes}, true);

    m.final_head = std::make_shared<Conv2d>(head_ch, kFinalWidth, 1, 1, 0, false, rng);
    m.final_fc_w = Tensor::randn({cfg.har_classes, kFinalWidth}, rng, 0.01f, true);
    m.final_fc_b = Tensor::zeros({cfg.har_classes}, true);

    LayerCounts counts = m.count(m.input_shape());
    if (counts.conv != 97 || counts.fc != 2)
        throw BuildError("structural mismatch: expected 97 conv / 2 fc layers, got " +
                         std::to_string(counts.conv) + " conv / " +
                         std::to_string(counts.fc) + " fc");
    return m;
}

BranchyModel build_branchy_ghostnet(float width_multiplier, int branch_after_bottleneck,
                                    uint32_t seed) {
    BranchyConfig cfg;
    cfg.width_multiplier = width_multiplier;
    cfg.branch_after_bottleneck = branch_after_bottleneck;
    cfg.seed = seed;
    return build_branchy_ghostnet(cfg);
}

Tensor replicate_channels(const Tensor& x, int channels) {
    if (x.shape().size() != 4 || x.dim(1) != 1)
        throw DimensionError("replicate_channels expects [N,1,H,W]");
    Tensor out = x;
    for (int i = 1; i < channels; ++i) out = concat_channels(out, x);
    return out;
}

// --- checkpoint I/O -------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'B', 'G', 'C', 'N'};
constexpr uint16_t kVersion = 1;

template <typename T>
void write_raw(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError("checkpoint truncated");
    return v;
}

struct TableEntry {
    std::string name;
    std::vector<uint32_t> extents;
    uint64_t offset = 0;
};

}  // namespace

void save_weights(BranchyModel& model, const std::string& path) {
    std::vector<std::pair<std::string, Tensor*>> entries;
    model.visit_params([&](const std::string& name, Tensor& t, bool) {
        entries.emplace_back(name, &t);
    });
    Tensor meta = Tensor::from_data(
        {4}, {model.config.width_multiplier, float(model.config.branch_after_bottleneck),
              float(model.config.rod_classes), float(model.config.har_classes)});
    entries.emplace_back("meta/config", &meta);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, 4);
    write_raw(os, kVersion);
    write_raw(os, model.topology_hash());
    write_raw(os, uint32_t(entries.size()));

    // table size must be known before offsets can be assigned
    uint64_t table_bytes = 0;
    for (auto& [name, t] : entries)
        table_bytes += 4 + name.size() + 1 + 1 + 4 * t->shape().size() + 8;
    uint64_t offset = 4 + 2 + 8 + 4 + table_bytes;
    for (auto& [name, t] : entries) {
        write_raw(os, uint32_t(name.size()));
        os.write(name.data(), std::streamsize(name.size()));
        write_raw(os, uint8_t(0));  // dtype: float32
        write_raw(os, uint8_t(t->shape().size()));
        for (int d : t->shape()) write_raw(os, uint32_t(d));
        write_raw(os, offset);
        offset += t->size() * 4;
    }
    for (auto& [name, t] : entries)
        os.write(reinterpret_cast<const char*>(t->data()),
                 std::streamsize(t->size() * 4));
    if (!os) throw FormatError("checkpoint write failed: " + path);
}

BranchyModel load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("bad checkpoint magic");
    const uint16_t version = read_raw<uint16_t>(is);
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const uint64_t hash = read_raw<uint64_t>(is);
    const uint32_t count = read_raw<uint32_t>(is);
    if (count == 0 || count > 100000) throw FormatError("implausible tensor count");

    std::vector<TableEntry> table(count);
    for (auto& e : table) {
        const uint32_t len = read_raw<uint32_t>(is);
        if (len > 4096) throw FormatError("implausible tensor name length");
        e.name.resize(len);
        is.read(e.name.data(), len);
        if (!is) throw FormatError("checkpoint truncated in table");
        const uint8_t dtype = read_raw<uint8_t>(is);
        if (dtype != 0) throw FormatError("unsupported dtype code");
        const uint8_t rank = read_raw<uint8_t>(is);
        e.extents.resize(rank);
        for (auto& d : e.extents) d = read_raw<uint32_t>(is);
        e.offset = read_raw<uint64_t>(is);
    }

    auto find = [&](const std::string& name) -> const TableEntry* {
        for (const auto& e : table)
            if (e.name == name) return &e;
        return nullptr;
    };
    const TableEntry* meta = find("meta/config");
    if (!meta || meta->extents != std::vector<uint32_t>{4})
        throw FormatError("checkpoint missing meta/config tensor");

    auto read_payload = [&](const TableEntry& e) {
        uint64_t n = 1;
        for (uint32_t d : e.extents) n *= d;
        std::vector<float> buf(n);
        is.seekg(std::streamoff(e.offset));
        is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(n * 4));
        if (!is) throw FormatError("checkpoint truncated in payload of " + e.name);
        return buf;
    };

    std::vector<float> cfgv = read_payload(*meta);
    BranchyConfig cfg;
    cfg.width_multiplier = cfgv[0];
    cfg.branch_after_bottleneck = int(cfgv[1]);
    cfg.rod_classes = int(cfgv[2]);
    cfg.har_classes = int(cfgv[3]);
    BranchyModel model = build_branchy_ghostnet(cfg);
    if (model.topology_hash() != hash)
        throw FormatError("topology hash mismatch: checkpoint was built for a "
                          "different architecture");

    model.visit_params([&](const std::string& name, Tensor& t, bool) {
        const TableEntry* e = find(name);
        if (!e) throw FormatError("incomplete checkpoint: missing tensor " + name);
        uint64_t n = 1;
        for (uint32_t d : e->extents) n *= d;
        if (n != t.size())
            throw FormatError("checkpoint tensor " + name + " has wrong size");
        t.values() = read_payload(*e);
    });
    return model;
}

}  // namespace csisense
