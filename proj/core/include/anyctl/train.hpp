#pragma once

#include <memory>
#include <string>
#include <vector>

#include "anyctl/adam.hpp"
#include "anyctl/checkpoint.hpp"
#include "anyctl/datagen.hpp"
#include "anyctl/pipeline.hpp"

namespace anyctl {

struct TrainConfig {
    int64_t phase = 1;          // 1: base + text; 2: control branch + MCE
    int64_t steps = 1000;
    int64_t batch_size = 8;
    double lr = 1e-4;
    int64_t checkpoint_every = 1000;
    int64_t log_every = 25;
    uint64_t seed = 7;
    bool use_unaligned = true;  // phase 2: include unaligned records
    double drop_all_rate = 0.05;
    double drop_text_rate = 0.05;
    double condition_noise = 0.0;
    std::string init_from;      // checkpoint dir to start weights from
    // > 0 trains on this many fixed aligned records with fixed condition
    // draws every step (the overfit sanity configuration).
    int64_t overfit_samples = 0;

    void validate() const;
};

struct TrainResult {
    int64_t start_step = 0;  // first step executed in this invocation
    int64_t end_step = 0;
    double first_logged_loss = 0;
    double final_logged_loss = 0;
    std::string last_checkpoint;
};

// Single-writer training loop over a generated dataset. Gradients are
// accumulated sample by sample, so peak memory holds one sample's graph.
// Checkpoints land under out_dir/checkpoints/ and the loss log is
// out_dir/loss.csv with header phase,step,loss (windowed means); both
// resume transparently from the latest complete checkpoint.
class Trainer {
  public:
    Trainer(const ModelConfig& model, const TrainConfig& train,
            const std::string& manifest_path, const std::string& out_dir);

    TrainResult run();

    // One optimizer update; exposed for tests. Steps are 1-based.
    double step_once(int64_t step);

    Pipeline& pipeline() { return *pipe_; }
    Adam& optimizer() { return opt_; }
    int64_t start_step() const { return start_step_; }
    int64_t pool_size() const { return static_cast<int64_t>(pool_.size()); }

  private:
    const SampleRecord& pick(int64_t step, int64_t k) const;
    void save(int64_t step);

    ModelConfig model_;
    TrainConfig cfg_;
    std::string out_dir_;
    std::vector<SampleRecord> records_;
    std::vector<size_t> pool_;
    std::unique_ptr<Pipeline> pipe_;
    Adam opt_;
    int64_t start_step_ = 1;
    int64_t batch_ = 0;
};

}  // namespace anyctl
