#pragma once

#include "mars/corpus.hpp"
#include "mars/model.hpp"
#include "mars/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mars {

enum class Stage { ar_sft, mars, mars_no_sft };

Stage parse_stage(const std::string& name);  // throws on unknown name
std::string stage_name(Stage stage);

struct TrainConfig {
    Stage stage = Stage::ar_sft;
    int B = 4;
    int epochs = 14;
    // From-scratch rate for the 4-layer default model, calibrated so the
    // default corpus memorizes (perplexity ~1.07 in ~700 steps). A pretrained
    // 0.5B-7B fine-tune would instead sit near 5e-6.
    double peak_lr = 2e-3;
    double warmup_ratio = 0.03;
    int batch_size = 4;  // token budget = batch_size x longest plain layout
    int grad_accum = 1;
    uint64_t seed = 1;
    int max_seq_len = 512;
    double weight_decay = 0.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

// One tokenized (prompt, response) pair.
struct Sample {
    std::vector<int> prompt;
    std::vector<int> response;
};

Sample encode_sample(const CorpusRecord& record);
std::vector<Sample> encode_corpus(const Corpus& corpus);

struct LossBundle {
    Tensor loss_ar;    // clean-stream next-token mean
    Tensor loss_mask;  // masked-position mean (zero scalar for ar-sft)
    Tensor total;      // what backward() consumes
    int ar_terms = 0;
    int mask_terms = 0;
};

// Standard next-token loss over response positions only; prompt is context.
LossBundle ar_loss(const Model& model, std::span<const Sample> batch);

// One concatenated forward per sample with the block-prediction mask.
// loss_mask averages the masked targets; loss_ar comes from the same
// forward's clean-stream logits. total = loss_mask (+ loss_ar if include_sft).
LossBundle mars_loss(const Model& model, std::span<const Sample> batch, int B, bool include_sft);

// Linear warmup to peak over floor(warmup_ratio * total_steps) steps, then
// cosine decay to zero at total_steps.
double lr_at(long step, long total_steps, const TrainConfig& config);

class AdamW {
public:
    AdamW(std::vector<Tensor> params, double beta1, double beta2, double eps, double weight_decay);
    void step(double lr);
    void zero_grad();

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, eps_, weight_decay_;
    long t_ = 0;
};

struct TrainResult {
    long steps = 0;
    double final_total = 0.0;
    double final_loss_ar = 0.0;
    double final_loss_mask = 0.0;
};

// Runs the configured stage over the corpus, mutating the model in place.
// Deterministic for a fixed seed. Writes the checkpoint to checkpoint_out and
// appends one JSON line per optimizer step to log_path (empty = no log).
TrainResult train(Model& model, const Corpus& corpus, const TrainConfig& config,
                  const std::string& checkpoint_out, const std::string& log_path = "");

// Mean next-token cross-entropy over response positions, exponentiated.
double corpus_perplexity(const Model& model, std::span<const Sample> samples);

} // namespace mars
