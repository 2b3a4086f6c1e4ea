#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "csisense/tensor.hpp"

namespace csisense {

struct Shape3 {
    int c = 0, h = 0, w = 0;
};

struct LayerCounts {
    long conv = 0;
    long fc = 0;
    long long macs = 0;
};

// name, tensor, is_buffer (buffers: batch-norm running stats)
using ParamVisitor = std::function<void(const std::string&, Tensor&, bool)>;

class Module {
public:
    virtual ~Module() = default;
    virtual Tensor forward(const Tensor& x, bool training) = 0;
    virtual void visit_params(const std::string& prefix, const ParamVisitor& fn) = 0;
    // Propagates the input shape, adding this module's conv/fc/MAC counts.
    virtual Shape3 account(Shape3 in, LayerCounts& counts) const = 0;
    virtual void describe(std::string& out) const = 0;
};

using ModulePtr = std::shared_ptr<Module>;

class Conv2d : public Module {
public:
    Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, bool depthwise,
           std::mt19937& rng);
    Tensor forward(const Tensor& x, bool training) override;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;
    Shape3 account(Shape3 in, LayerCounts& counts) const override;
    void describe(std::string& out) const override;

    Tensor weight;
    int in_ch, out_ch, kernel, stride, pad;
    bool depthwise;
};

class BatchNorm2d : public Module {
public:
    explicit BatchNorm2d(int channels);
    Tensor forward(const Tensor& x, bool training) override;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;
    Shape3 account(Shape3 in, LayerCounts& counts) const override;
    void describe(std::string& out) const override;

    Tensor gamma, beta, running_mean, running_var;
    float momentum = 0.1f, eps = 1e-5f;
    int channels;
};

// conv -> batch norm -> optional relu
class ConvBnAct : public Module {
public:
    ConvBnAct(int in_ch, int out_ch, int kernel, int stride, int pad, bool depthwise,
              bool act, std::mt19937& rng);
    Tensor forward(const Tensor& x, bool training) override;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;
    Shape3 account(Shape3 in, LayerCounts& counts) const override;
    void describe(std::string& out) const override;

    std::shared_ptr<Conv2d> conv;
    std::shared_ptr<BatchNorm2d> bn;
    bool act;
};

// Regular conv produces the intrinsic maps; a depthwise conv on them produces
// the (ratio-1) cheap groups; output = concat, intrinsic*ratio channels.
class GhostModule : public Module {
public:
    GhostModule(int in_ch, int out_ch, int ratio, int primary_kernel,
                int cheap_kernel, int stride, bool act, std::mt19937& rng);
    Tensor forward(const Tensor& x, bool training) override;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;
    Shape3 account(Shape3 in, LayerCounts& counts) const override;
    void describe(std::string& out) const override;

    std::shared_ptr<ConvBnAct> primary;
    std::vector<std::shared_ptr<ConvBnAct>> cheap;  // ratio-1 banks, empty when ratio==1
    int in_ch, out_ch, ratio;
};

// Channel gate: gap -> 1x1 conv reduce -> relu -> 1x1 conv expand -> hard
// sigmoid -> scale. Gate convs are bias-free and count toward the conv total.
class SEBlock : public Module {
public:
    SEBlock(int channels, int reduction, std::mt19937& rng);
    Tensor forward(const Tensor& x, bool training) override;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;
    Shape3 account(Shape3 in, LayerCounts& counts) const override;
    void describe(std::string& out) const override;

    std::shared_ptr<Conv2d> reduce, expand;
    int channels, reduction;
};

class GhostBottleneck : public Module {
public:
    GhostBottleneck(int in_ch, int exp_ch, int out_ch, int kernel, int stride,
                    bool use_se, std::mt19937& rng);
    Tensor forward(const Tensor& x, bool training) override;
    void visit_params(const std::string& prefix, const ParamVisitor& fn) override;
    Shape3 account(Shape3 in, LayerCounts& counts) const override;
    void describe(std::string& out) const override;

    std::shared_ptr<GhostModule> expand_ghost, project_ghost;
    std::shared_ptr<ConvBnAct> mid_dw;                    // stride-2 variant only
    std::shared_ptr<SEBlock> se;                          // optional
    std::shared_ptr<ConvBnAct> short_dw, short_pw;        // projected shortcut
    int in_ch, out_ch, stride;
};

struct StageTiming {
    int64_t trunk_to_branch_ns = 0;
    int64_t early_head_ns = 0;
    int64_t trunk_rest_ns = 0;
    int64_t final_head_ns = 0;
};

struct InferenceOutcome {
    bool exited_early = false;
    std::vector<float> rod_probs;                 // 3
    std::optional<std::vector<float>> har_probs;  // 5, iff !exited_early
    int rod_label = -1;
    std::optional<int> har_label;
    StageTiming timings;
};

struct BranchyConfig {
    float width_multiplier = 1.4f;
    int branch_after_bottleneck = 6;  // early head taps after this bottleneck (1-based)
    int rod_classes = 3;
    int har_classes = 5;
    uint32_t seed = 0;
};

class BranchyModel {
public:
    // trunk = stem + bottlenecks + head conv; the early branch taps the trunk
    // right after `branch_index` modules.
    std::vector<ModulePtr> trunk;
    int branch_index = 0;
    ModulePtr early_head;  // dw + pw feature convs
    Tensor early_fc_w, early_fc_b;
    ModulePtr final_head;  // 1x1 conv on the pooled vector (GhostNet tail)
    Tensor final_fc_w, final_fc_b;
    BranchyConfig config;

    // Both heads, shared trunk computed once. Input [N,3,234,300]-shaped.
    std::pair<Tensor, Tensor> forward_full(const Tensor& x, bool training);
    // Single sample; early exit when rod argmax is 0 or 2.
    InferenceOutcome forward_with_exit(const Tensor& x);
    // Forced paths for the latency benchmark.
    Tensor forward_early_only(const Tensor& x);

    Tensor trunk_to(const Tensor& x, int from, int to, bool training);
    Tensor early_branch(const Tensor& at_branch, bool training);
    Tensor final_branch(const Tensor& trunk_out, bool training);

    void visit_params(const ParamVisitor& fn);
    std::vector<Tensor> parameters();  // trainable only
    std::string describe() const;
    uint64_t topology_hash() const;

    LayerCounts count(Shape3 input) const;        // full network
    LayerCounts count_early(Shape3 input) const;  // trunk-to-branch + early head
    Shape3 input_shape() const { return {3, 234, 300}; }
};

BranchyModel build_branchy_ghostnet(const BranchyConfig& cfg);
BranchyModel build_branchy_ghostnet(float width_multiplier, int branch_after_bottleneck,
                                    uint32_t seed = 0);

// Replicates a single-channel batch [N,1,H,W] to the model's 3 input channels.
Tensor replicate_channels(const Tensor& x, int channels = 3);

// Checkpoint format: "BGCN" magic, version u16, topology hash u64, tensor
// table, little-endian float32 payloads.
void save_weights(BranchyModel& model, const std::string& path);
BranchyModel load_weights(const std::string& path);

int round_channels(float v, int divisor = 4);

}  // namespace csisense
