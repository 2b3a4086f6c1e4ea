#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csisense/csi.hpp"
#include "csisense/ghostnet.hpp"
#include "csisense/tensor.hpp"

namespace csisense {

struct TrainConfig {
    int epochs = 400;
    int batch_size = 50;
    int test_batch = 1;
    float base_lr = 1e-3f;
    float min_lr = 1e-5f;
    float weight_decay = 0.05f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    uint64_t seed = 0;
    bool augment = true;
    float loss_weight_rod = 1.0f;
    float loss_weight_har = 1.0f;

    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
    static TrainConfig from_json_file(const std::string& path);
};

struct LossReport {
    double rod_ce = 0.0;
    double har_ce = 0.0;
    double total = 0.0;
};

// total = CE(rod head) + CE(har head over HAR-labeled subset). har_labels use
// -1 for samples without an activity label; an all-masked batch contributes
// only the rod term.
std::pair<Tensor, LossReport> joint_loss(const Tensor& rod_logits,
                                         const Tensor& har_logits,
                                         const std::vector<int>& rod_labels,
                                         const std::vector<int>& har_labels,
                                         float w_rod = 1.0f, float w_har = 1.0f);

// Adam moments with decoupled weight decay: decay shrinks parameters directly
// and never touches the moment estimates.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, float beta1, float beta2,
          float weight_decay, float eps = 1e-8f);
    void step(float lr);
    void zero_grad();
    int steps() const { return t_; }
    const std::vector<std::vector<float>>& first_moments() const { return m_; }
    const std::vector<std::vector<float>>& second_moments() const { return v_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<float>> m_, v_;
    float beta1_, beta2_, wd_, eps_;
    int t_ = 0;
};

double cosine_lr(int epoch, int total_epochs, double base_lr, double min_lr);

struct AugmentConfig {
    float crop_scale_min = 0.6f;
    float crop_scale_max = 1.0f;
    bool flip = true;
    float jitter_brightness = 0.1f;
    float jitter_contrast = 0.1f;
};

// Random resized crop + horizontal (time-axis) flip + amplitude jitter;
// output keeps the 234x300 shape and [0,1] range, reproducible per seed.
RadioImage augment(const RadioImage& img, uint64_t seed, const AugmentConfig& cfg = {});

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    LossReport loss;
};

struct TrainResult {
    std::vector<EpochRecord> history;
};

using EpochCallback = std::function<bool(const EpochRecord&)>;  // false stops early

// Minimizes the joint loss with AdamW + cosine schedule; deterministic per
// seed on one thread. Throws on NaN loss with epoch/batch diagnostics.
TrainResult train(BranchyModel& model, const std::vector<RadioImage>& dataset,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = nullptr);

struct MetricsReport {
    double accuracy = 0.0;
    double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
    double micro_precision = 0.0, micro_recall = 0.0, micro_f1 = 0.0;
    std::vector<std::vector<long>> confusion;  // [true][pred]

    std::string to_json() const;
    std::string to_table(const char* const* class_names) const;
};

enum class EvalMode { rod, har };

MetricsReport metrics_from_confusion(const std::vector<std::vector<long>>& confusion);
MetricsReport evaluate(BranchyModel& model, const std::vector<RadioImage>& dataset,
                       EvalMode mode);

// Stacks radio images into a [N,3,H,W] model input batch.
Tensor batch_input(const std::vector<const RadioImage*>& samples);

}  // namespace csisense
