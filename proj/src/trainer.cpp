#include "namelink/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

#include "namelink/error.hpp"
#include "namelink/inference.hpp"

namespace namelink {

void TrainConfig::validate() const {
    if (learning_rate <= 0.0 || batch_size <= 0) throw ConfigError("bad optimizer settings");
    if (max_steps < 0 || validate_every <= 0) throw ConfigError("bad step settings");
    if (ratio_task11 < 0 || ratio_taskmn < 0 || ratio_task11 + ratio_taskmn == 0)
        throw ConfigError("task ratio components must be >= 0 and not both zero");
    if (!(negative_prob >= 0.0 && negative_prob <= 1.0))
        throw ConfigError("negative_prob must lie in [0,1]");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
}

double TrainConfig::lr_at(std::int64_t step) const {
    double lr = learning_rate;
    if (warmup_steps > 0 && step <= warmup_steps)
        lr *= static_cast<double>(step) / static_cast<double>(warmup_steps);
    else if (cosine_decay && max_steps > warmup_steps) {
        const double progress = static_cast<double>(step - warmup_steps) /
                                static_cast<double>(max_steps - warmup_steps);
        lr *= 0.5 * (1.0 + std::cos(3.14159265358979323846 * std::min(1.0, progress)));
    }
    return lr;
}

OptimizerState make_optimizer_state(const Parameters& params) {
    OptimizerState s;
    s.m = make_grad_store(params);
    s.v = make_grad_store(params);
    return s;
}

std::pair<std::vector<const Example*>, std::vector<const Example*>> partition_tasks(
    const std::vector<const Example*>& examples) {
    std::vector<const Example*> task_11, task_mn;
    for (const Example* ex : examples) {
        if (ex->n_referred() == 1 && ex->m_detections() == 1)
            task_11.push_back(ex);
        else
            task_mn.push_back(ex);
    }
    return {task_11, task_mn};
}

NegativeSampleStats sample_negatives(std::vector<BatchItem>& items,
                                     const std::vector<const Example*>& pool, double prob,
                                     Rng& rng) {
    NegativeSampleStats stats;
    for (BatchItem& item : items) {
        if (rng.uniform01() >= prob) continue;
        const std::string& own_identity = item.example->referred.front().identity_id;
        const Example* donor = nullptr;
        for (int attempt = 0; attempt < 64 && !donor; ++attempt) {
            const Example* cand = pool[rng.below(pool.size())];
            if (cand != item.example && cand->referred.front().identity_id != own_identity)
                donor = cand;
        }
        if (!donor) {
            ++stats.skipped;
            continue;
        }
        item.negative = true;
        item.replacement_box = donor->detections.front();
        ++stats.negatives;
    }
    return stats;
}

Example augment_spatial(const Example& example, AugmentMode mode, Rng& rng) {
    Example out = example;
    auto flip_box = [](BoundingBox& b) {
        const double x1 = 1.0 - b.x2;
        const double x2 = 1.0 - b.x1;
        b.x1 = x1;
        b.x2 = x2;
    };
    if (mode == AugmentMode::Flip) {
        for (Detection& d : out.detections) {
            flip_box(d.box);
            flip_box(d.face_box);
        }
        return out;
    }
    // Translate: common shift keeping every box inside the image.
    double dx_lo = -1.0, dx_hi = 1.0, dy_lo = -1.0, dy_hi = 1.0;
    for (const Detection& d : out.detections) {
        dx_lo = std::max(dx_lo, -d.box.x1);
        dx_hi = std::min(dx_hi, 1.0 - d.box.x2);
        dy_lo = std::max(dy_lo, -d.box.y1);
        dy_hi = std::min(dy_hi, 1.0 - d.box.y2);
    }
    if (out.detections.empty() || dx_lo > dx_hi || dy_lo > dy_hi) return out;
    const double dx = rng.uniform(dx_lo, dx_hi);
    const double dy = rng.uniform(dy_lo, dy_hi);
    for (Detection& d : out.detections) {
        d.box.x1 += dx;
        d.box.x2 += dx;
        d.box.y1 += dy;
        d.box.y2 += dy;
        d.face_box.x1 += dx;
        d.face_box.x2 += dx;
        d.face_box.y1 += dy;
        d.face_box.y2 += dy;
    }
    return out;
}

BatchStream::BatchStream(std::vector<const Example*> task_11,
                         std::vector<const Example*> task_mn, const TrainConfig& config)
    : task_11_(std::move(task_11)),
      task_mn_(std::move(task_mn)),
      config_(config),
      rng_(hash_combine(config.seed, 0xBA7CULL)) {
    config_.validate();
    if (config_.ratio_task11 > 0 && task_11_.empty())
        throw ConfigError("Task-1-1 required by ratio but its partition is empty");
    if (config_.ratio_taskmn > 0 && task_mn_.empty())
        throw ConfigError("Task-M-N required by ratio but its partition is empty");
}

TaskKind BatchStream::tag_for_slot(std::int64_t slot) const {
    const int cycle = config_.ratio_task11 + config_.ratio_taskmn;
    return (slot % cycle) < config_.ratio_task11 ? TaskKind::Task11 : TaskKind::TaskMN;
}

TaskBatch BatchStream::next() {
    TaskBatch batch;
    batch.kind = tag_for_slot(slot_);
    batch.step = slot_ + 1;
    ++slot_;
    owned_.clear();

    const std::vector<const Example*>& source =
        batch.kind == TaskKind::Task11 ? task_11_ : task_mn_;
    for (int i = 0; i < config_.batch_size; ++i) {
        BatchItem item;
        item.example = source[rng_.below(source.size())];
        if (config_.augment_flip && rng_.uniform01() < 0.5) {
            auto copy = std::make_shared<Example>(
                augment_spatial(*item.example, AugmentMode::Flip, rng_));
            item.example = copy.get();
            owned_.push_back(std::move(copy));
        }
        if (config_.augment_translate) {
            auto copy = std::make_shared<Example>(
                augment_spatial(*item.example, AugmentMode::Translate, rng_));
            item.example = copy.get();
            owned_.push_back(std::move(copy));
        }
        batch.items.push_back(std::move(item));
    }
    if (batch.kind == TaskKind::Task11) {
        const NegativeSampleStats s =
            sample_negatives(batch.items, task_11_, config_.negative_prob, rng_);
        neg_stats_.negatives += s.negatives;
        neg_stats_.skipped += s.skipped;
    }
    return batch;
}

LossBreakdown train_step(Parameters& params, OptimizerState& opt, const TaskBatch& batch,
                         const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                         int threads) {
    ObjectiveOptions oopts;
    oopts.train_mode = true;
    oopts.dropout_rate = train_cfg.dropout;
    oopts.dropout_seed = train_cfg.seed;
    oopts.null_in_softmax = train_cfg.null_in_softmax;
    oopts.area_ratio = train_cfg.area_ratio;
    oopts.blur_threshold = train_cfg.blur_threshold;
    oopts.threads = threads;

    std::vector<Mat> grads = make_grad_store(params);
    const LossBreakdown lb =
        total_loss(batch, params, model_cfg, train_cfg.weights, oopts, &grads);
    if (!std::isfinite(lb.total))
        throw NumericError("non-finite loss at step " + std::to_string(batch.step));

    ++opt.step;
    const double lr = train_cfg.lr_at(opt.step);
    const double bc1 = 1.0 - std::pow(train_cfg.adam_beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(train_cfg.adam_beta2, static_cast<double>(opt.step));
    for (std::size_t i = 0; i < params.count(); ++i) {
        Mat& p = params.tensor(i);
        Mat& m = opt.m[i];
        Mat& v = opt.v[i];
        const Mat& g = grads[i];
        for (std::size_t e = 0; e < p.a.size(); ++e) {
            m.a[e] = train_cfg.adam_beta1 * m.a[e] + (1.0 - train_cfg.adam_beta1) * g.a[e];
            v.a[e] = train_cfg.adam_beta2 * v.a[e] + (1.0 - train_cfg.adam_beta2) * g.a[e] * g.a[e];
            const double mhat = m.a[e] / bc1;
            const double vhat = v.a[e] / bc2;
            p.a[e] -= lr * (mhat / (std::sqrt(vhat) + train_cfg.adam_eps) +
                            train_cfg.weight_decay * p.a[e]);
        }
    }
    return lb;
}

double argmax_accuracy(const Parameters& params, const ModelConfig& cfg,
                       const std::vector<const Example*>& examples, int threads) {
    std::int64_t correct = 0, total = 0;
    const int used = std::max(1, threads);
    std::mutex mu;
    std::exception_ptr first_error;
    auto worker = [&](std::size_t start, std::size_t stride) {
        std::int64_t local_correct = 0, local_total = 0;
        try {
            for (std::size_t i = start; i < examples.size(); i += stride) {
                const Example& ex = *examples[i];
                if (ex.gt_links.empty() || ex.m_detections() == 0) continue;
                const Prediction pred = model_predict(params, cfg, ex, /*bipartite=*/false);
                for (const auto& [p, d] : ex.gt_links) {
                    ++local_total;
                    local_correct += pred.assigned_to(p) == d;
                }
            }
        } catch (...) {
            std::scoped_lock lk(mu);
            if (!first_error) first_error = std::current_exception();
        }
        std::scoped_lock lk(mu);
        correct += local_correct;
        total += local_total;
    };
    if (used == 1) {
        worker(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < used; ++w) pool.emplace_back(worker, w, used);
        for (auto& th : pool) th.join();
    }
    if (first_error) std::rethrow_exception(first_error);
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

TrainResult train_loop(const Corpus& corpus, const SplitAssignment& splits,
                       const ModelConfig& model_cfg, const TrainConfig& train_cfg, int threads,
                       std::ostream* progress) {
    model_cfg.validate();
    train_cfg.validate();

    std::map<std::string, const Example*> by_id;
    for (const Example& ex : corpus.examples) by_id[ex.id] = &ex;
    auto resolve = [&](const std::vector<std::string>& ids) {
        std::vector<const Example*> out;
        for (const std::string& id : ids) {
            auto it = by_id.find(id);
            if (it == by_id.end()) throw ValidationError("split references unknown example " + id);
            out.push_back(it->second);
        }
        return out;
    };

    // Examples beyond the encoder limits never enter a batch.
    std::vector<const Example*> train_pool;
    for (const Example* ex : resolve(splits.train_ids))
        if (ex->caption.length() <= model_cfg.max_tokens &&
            ex->m_detections() <= model_cfg.max_boxes)
            train_pool.push_back(ex);
    const std::vector<const Example*> val_pool = resolve(splits.val_ids);

    TrainResult result;
    result.final_params = init_parameters(model_cfg);
    if (train_cfg.max_steps == 0) {
        result.best_params = result.final_params;
        return result;
    }

    auto [task_11, task_mn] = partition_tasks(train_pool);
    BatchStream stream(std::move(task_11), std::move(task_mn), train_cfg);
    OptimizerState opt = make_optimizer_state(result.final_params);

    double sum_intra = 0, sum_inter = 0, sum_null = 0, sum_total = 0;
    std::int64_t n_intra = 0, n_inter = 0, n_null = 0, n_total = 0;
    bool have_best = false;

    for (std::int64_t step = 1; step <= train_cfg.max_steps; ++step) {
        TaskBatch batch = stream.next();
        const LossBreakdown lb =
            train_step(result.final_params, opt, batch, model_cfg, train_cfg, threads);
        sum_total += lb.total;
        ++n_total;
        if (lb.link_count > 0) {
            sum_intra += lb.l_intra;
            ++n_intra;
        }
        if (lb.pair_count > 0) {
            sum_inter += lb.l_inter;
            ++n_inter;
        }
        if (lb.null_count > 0) {
            sum_null += lb.l_null;
            ++n_null;
        }

        if (step % train_cfg.validate_every == 0) {
            TrainLogEntry entry;
            entry.step = step;
            entry.l_intra = n_intra ? sum_intra / n_intra : 0.0;
            entry.l_inter = n_inter ? sum_inter / n_inter : 0.0;
            entry.l_null = n_null ? sum_null / n_null : 0.0;
            entry.total = n_total ? sum_total / n_total : 0.0;
            entry.val_accuracy =
                argmax_accuracy(result.final_params, model_cfg, val_pool, threads);
            if (!have_best || entry.val_accuracy > result.best_val_accuracy) {
                have_best = true;
                result.best_val_accuracy = entry.val_accuracy;
                result.best_step = step;
                result.best_params = result.final_params;
                entry.best = true;
            }
            result.log.push_back(entry);
            if (progress)
                (*progress) << "step " << step << " total " << entry.total << " val_acc "
                            << entry.val_accuracy << (entry.best ? " *" : "") << "\n";
            sum_intra = sum_inter = sum_null = sum_total = 0;
            n_intra = n_inter = n_null = n_total = 0;
        }
    }
    if (!have_best) result.best_params = result.final_params;
    result.negative_stats = stream.negative_stats();
    return result;
}

}  // namespace namelink
