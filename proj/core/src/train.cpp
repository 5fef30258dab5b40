#include "anyctl/train.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace anyctl {

void TrainConfig::validate() const {
    if (phase != 1 && phase != 2)
        throw ConfigError("train: phase must be 1 or 2");
    if (steps < 1) throw ConfigError("train: steps must be >= 1");
    if (batch_size < 1 || batch_size > 256)
        throw ConfigError("train: batch_size must be within 1..256");
    if (!(lr > 0)) throw ConfigError("train: lr must be positive");
    if (checkpoint_every < 1 || log_every < 1)
        throw ConfigError("train: intervals must be >= 1");
    if (drop_all_rate < 0 || drop_all_rate > 1 || drop_text_rate < 0 ||
        drop_text_rate > 1)
        throw ConfigError("train: drop rates must be within [0,1]");
    if (condition_noise < 0) throw ConfigError("train: negative noise");
    if (overfit_samples < 0)
        throw ConfigError("train: overfit_samples must be >= 0");
}

namespace {

struct CsvRow {
    int64_t phase;
    int64_t step;
    double loss;
};

std::vector<CsvRow> read_loss_csv(const std::string& path) {
    std::vector<CsvRow> rows;
    std::ifstream in(path);
    if (!in) return rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        CsvRow r{};
        char c1 = 0, c2 = 0;
        std::istringstream ss(line);
        if (ss >> r.phase >> c1 >> r.step >> c2 >> r.loss && c1 == ',' &&
            c2 == ',')
            rows.push_back(r);
    }
    return rows;
}

void write_loss_csv(const std::string& path, const std::vector<CsvRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "phase,step,loss\n";
    for (const auto& r : rows)
        out << r.phase << "," << r.step << "," << r.loss << "\n";
}

void append_loss_csv(const std::string& path, const CsvRow& row) {
    const bool fresh = !fs::exists(path);
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot write " + path);
    if (fresh) out << "phase,step,loss\n";
    out << row.phase << "," << row.step << "," << row.loss << "\n";
    out.flush();
}

}  // namespace

Trainer::Trainer(const ModelConfig& model, const TrainConfig& train,
                 const std::string& manifest_path, const std::string& out_dir)
    : model_(model), cfg_(train), out_dir_(out_dir), opt_(train.lr) {
    model_.validate();
    cfg_.validate();
    records_ = load_manifest(manifest_path);
    if (records_.empty()) throw ConfigError("train: dataset is empty");
    if (records_[0].target.width != model_.canvas)
        throw ConfigError("train: dataset canvas " +
                          std::to_string(records_[0].target.width) +
                          " does not match model canvas " +
                          std::to_string(model_.canvas));

    if (cfg_.overfit_samples > 0) {
        for (size_t i = 0; i < records_.size(); ++i)
            if (records_[i].aligned &&
                static_cast<int64_t>(pool_.size()) < cfg_.overfit_samples)
                pool_.push_back(i);
        if (static_cast<int64_t>(pool_.size()) < cfg_.overfit_samples)
            throw ConfigError("train: dataset has fewer aligned records than "
                              "overfit_samples");
        batch_ = cfg_.overfit_samples;
    } else {
        for (size_t i = 0; i < records_.size(); ++i) {
            if (cfg_.phase == 2 && !cfg_.use_unaligned &&
                !records_[i].aligned)
                continue;
            pool_.push_back(i);
        }
        batch_ = cfg_.batch_size;
    }
    if (pool_.empty()) throw ConfigError("train: sample pool is empty");

    pipe_ = std::make_unique<Pipeline>(model_, cfg_.seed);

    const auto resume = latest_checkpoint(out_dir_ + "/checkpoints");
    if (resume) {
        const auto info = load_checkpoint(*resume, pipe_->store, &opt_);
        if (info.phase != cfg_.phase)
            throw ConfigError("train: checkpoint in " + out_dir_ +
                              " is phase " + std::to_string(info.phase) +
                              ", configured phase " +
                              std::to_string(cfg_.phase));
        start_step_ = info.step + 1;
        // Drop log rows past the checkpoint so the log continues at the
        // resumed step without duplicates.
        auto rows = read_loss_csv(out_dir_ + "/loss.csv");
        std::vector<CsvRow> kept;
        for (const auto& r : rows)
            if (r.step <= info.step) kept.push_back(r);
        if (kept.size() != rows.size())
            write_loss_csv(out_dir_ + "/loss.csv", kept);
        return;
    }

    if (cfg_.phase == 2) {
        if (cfg_.init_from.empty())
            throw ConfigError("train: phase 2 needs init_from (a phase-1 "
                              "checkpoint) or an existing checkpoint to "
                              "resume from");
        load_checkpoint(cfg_.init_from, pipe_->store, nullptr);
        // The control trunk starts as a copy of the pretrained base trunk;
        // zero convolutions have no base counterpart and stay zero.
        for (auto& [name, p] : pipe_->store) {
            if (name.rfind("ctrl.", 0) != 0) continue;
            Parameter* src = pipe_->store.find("base." + name.substr(5));
            if (!src || src->value.shape() != p->value.shape()) continue;
            std::copy(src->value.data().begin(), src->value.data().end(),
                      p->value.data().begin());
        }
        pipe_->set_frozen_prefix("base.", true);
        pipe_->set_frozen_prefix("text.", true);
    } else if (!cfg_.init_from.empty()) {
        load_checkpoint(cfg_.init_from, pipe_->store, nullptr);
    }
}

const SampleRecord& Trainer::pick(int64_t step, int64_t k) const {
    if (cfg_.overfit_samples > 0)
        return records_[pool_[static_cast<size_t>(k) % pool_.size()]];
    auto rng = SeededRng(cfg_.seed)
                   .split("pool")
                   .split(static_cast<uint64_t>(step))
                   .split(static_cast<uint64_t>(k));
    return records_[pool_[rng.next_below(pool_.size())]];
}

double Trainer::step_once(int64_t step) {
    if (batch_ < 1) throw ContractError("train_step: empty batch");
    GradMap accum;
    double loss_sum = 0;

    for (int64_t k = 0; k < batch_; ++k) {
        const SampleRecord& rec = pick(step, k);
        auto srng = SeededRng(cfg_.seed)
                        .split("step")
                        .split(static_cast<uint64_t>(step))
                        .split(static_cast<uint64_t>(k));

        const int64_t t =
            1 + static_cast<int64_t>(srng.split("t").next_below(
                    static_cast<uint64_t>(model_.timesteps)));
        auto eps = TensorT<float>::zeros({3, model_.canvas, model_.canvas});
        {
            auto erng = srng.split("eps");
            for (int64_t i = 0; i < eps.numel(); ++i)
                eps[i] = static_cast<float>(erng.next_gaussian());
        }

        TensorT<float> x_t;
        {
            NoGradGuard ng;
            x_t = q_sample(pnm_to_tensor(rec.target), t, eps,
                           pipe_->schedule);
        }

        TensorT<float> out;
        if (cfg_.phase == 1) {
            const bool drop_text =
                srng.split("droptext").next_bernoulli(cfg_.drop_text_rate);
            const auto tokens =
                pipe_->encode_text(drop_text ? "" : rec.caption, {});
            const auto mask = additive_pad_mask<float>(0, tokens.pad_mask);
            out = pipe_->denoiser.predict_base(x_t, t, tokens.embeddings,
                                               &mask);
        } else {
            // Overfit runs pin the condition draw per sample so the batch
            // is literally fixed across steps.
            auto drng = cfg_.overfit_samples > 0
                            ? SeededRng(cfg_.seed).split("overfit-draw").split(
                                  static_cast<uint64_t>(k))
                            : srng.split("draw");
            const auto draw = sample_training_conditions(
                rec, drng, cfg_.drop_all_rate, cfg_.drop_text_rate,
                cfg_.condition_noise);
            const auto tokens = pipe_->encode_text(draw.text, draw.tasks);
            const auto mask = additive_pad_mask<float>(0, tokens.pad_mask);
            const auto pyramids = pipe_->encode_conditions(draw.conditions);
            const auto mc = pipe_->mce.encode(tokens, pyramids);
            out = pipe_->denoiser.predict_controlled(x_t, t, tokens.embeddings,
                                                     &mask, mc);
        }

        const auto loss = mse(out, eps);
        loss_sum += static_cast<double>(loss[0]);
        auto grads = backward(loss);
        for (auto& [name, g] : grads) {
            auto it = accum.find(name);
            if (it == accum.end()) {
                accum.emplace(name, std::move(g));
            } else {
                for (int64_t i = 0; i < it->second.numel(); ++i)
                    it->second[i] += g[i];
            }
        }
    }

    const float inv = 1.0f / static_cast<float>(batch_);
    for (auto& [name, g] : accum)
        for (int64_t i = 0; i < g.numel(); ++i) g[i] *= inv;
    opt_.apply(pipe_->store, accum);
    return loss_sum / static_cast<double>(batch_);
}

void Trainer::save(int64_t step) {
    save_checkpoint(out_dir_ + "/checkpoints/" + checkpoint_dir_name(step),
                    pipe_->store, model_, cfg_.phase, step, &opt_);
}

TrainResult Trainer::run() {
    fs::create_directories(out_dir_ + "/checkpoints");
    TrainResult res;
    res.start_step = start_step_;
    res.end_step = start_step_ - 1;

    double window_sum = 0;
    int64_t window_n = 0;
    for (int64_t step = start_step_; step <= cfg_.steps; ++step) {
        const double loss = step_once(step);
        window_sum += loss;
        ++window_n;
        if (step % cfg_.log_every == 0 || step == cfg_.steps) {
            append_loss_csv(out_dir_ + "/loss.csv",
                            {cfg_.phase, step, window_sum / window_n});
            window_sum = 0;
            window_n = 0;
        }
        if (step % cfg_.checkpoint_every == 0 || step == cfg_.steps)
            save(step);
        res.end_step = step;
    }

    const auto rows = read_loss_csv(out_dir_ + "/loss.csv");
    bool seen = false;
    for (const auto& r : rows) {
        if (r.phase != cfg_.phase) continue;
        if (!seen) {
            res.first_logged_loss = r.loss;
            seen = true;
        }
        res.final_logged_loss = r.loss;
    }
    if (const auto last = latest_checkpoint(out_dir_ + "/checkpoints"))
        res.last_checkpoint = *last;
    return res;
}

}  // namespace anyctl
