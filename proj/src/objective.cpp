#include "namelink/objective.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <thread>

#include "namelink/error.hpp"
#include "namelink/gtmine.hpp"
#include "namelink/rng.hpp"

namespace namelink {

ad::Var name_pooling(ad::Tape& t, ad::Var hidden_text,
                     const std::vector<ReferredPerson>& referred) {
    const int n_rows = t.val(hidden_text).rows;
    std::vector<std::vector<int>> groups;
    groups.reserve(referred.size());
    for (const ReferredPerson& rp : referred) {
        std::vector<int> rows;
        for (const Mention& m : rp.mentions)
            for (int i = m.token_start; i < m.token_end; ++i) {
                if (i < 0 || i >= n_rows)
                    throw ValidationError("mention span outside hidden text");
                rows.push_back(i);
            }
        if (rows.empty()) throw ValidationError("referred person has zero mention tokens");
        groups.push_back(std::move(rows));
    }
    return ad::pool_rows(t, hidden_text, groups);
}

ad::Var similarity(ad::Tape& t, ad::Var pooled_names, ad::Var box_hidden,
                   std::optional<ad::Var> null_vector) {
    ad::Var names = pooled_names;
    if (null_vector) names = ad::concat_rows(t, pooled_names, *null_vector);
    ad::Var xn = ad::l2_normalize_rows(t, names);
    ad::Var pn = ad::l2_normalize_rows(t, box_hidden);
    return ad::matmul_nt(t, xn, pn);
}

ad::Var intra_sum(ad::Tape& t, ad::Var S, int n_names,
                  const std::vector<std::pair<int, int>>& links, bool null_in_softmax) {
    const Mat& sv = t.val(S);
    // Box softmax over the n x m block only; name softmax optionally sees the
    // null row.
    ad::Var s_rows = sv.rows == n_names ? S : ad::slice_rows(t, S, 0, n_names);
    ad::Var ls_rows = ad::log_softmax_rows(t, s_rows);
    ad::Var s_cols = null_in_softmax ? S : s_rows;
    ad::Var ls_cols = ad::log_softmax_rows(t, ad::transpose(t, s_cols));

    std::vector<std::pair<int, int>> row_picks, col_picks;
    for (const auto& [i, j] : links) {
        row_picks.emplace_back(i, j);
        col_picks.emplace_back(j, i);
    }
    ad::Var a = ad::pick_sum(t, ls_rows, row_picks, -1.0);
    ad::Var b = ad::pick_sum(t, ls_cols, col_picks, -1.0);
    return ad::add(t, a, b);
}

ad::Var inter_bce(ad::Tape& t, ad::Var s_single, ad::Var alpha, ad::Var beta, bool positive) {
    ad::Var z = ad::scalar_affine(t, s_single, alpha, beta);
    return ad::bce_sum(t, z, {positive ? 1.0 : 0.0});
}

ad::Var null_bce_sum(ad::Tape& t, ad::Var S_with_null, int null_row,
                     const std::vector<int>& linked_cols,
                     const std::vector<int>& selected_cols) {
    std::vector<int> cols;
    std::vector<double> targets;
    for (int c : linked_cols) {
        cols.push_back(c);
        targets.push_back(0.0);
    }
    for (int c : selected_cols) {
        cols.push_back(c);
        targets.push_back(1.0);
    }
    ad::Var logits = ad::pick_row_cols(t, S_with_null, null_row, cols);
    return ad::bce_sum(t, logits, targets);
}

// ---- value-level versions ----

Mat name_pooling_values(const Mat& hidden_text, const std::vector<ReferredPerson>& referred) {
    ad::Tape t;
    ad::Var h = t.constant(hidden_text);
    return t.val(name_pooling(t, h, referred));
}

SimilarityMatrix similarity_matrix(const Mat& pooled_names, const Mat& box_hidden,
                                   bool include_null, const Mat* null_vector) {
    if (pooled_names.cols != box_hidden.cols)
        throw DimensionError("similarity_matrix: hidden widths differ");
    ad::Tape t;
    ad::Var names = t.constant(pooled_names);
    ad::Var boxes = t.constant(box_hidden);
    std::optional<ad::Var> null_var;
    if (include_null) {
        if (!null_vector) throw UsageError("include_null requires a null vector");
        null_var = t.constant(*null_vector);
    }
    SimilarityMatrix sm;
    sm.values = t.val(similarity(t, names, boxes, null_var));
    sm.has_null_row = include_null;
    return sm;
}

namespace {

double log_softmax_at(const Mat& s, int row_lo, int row_hi, int col_lo, int col_hi, int r, int c,
                      bool over_rows) {
    // log softmax of entry (r, c) over a row segment or a column segment
    double mx = -1e300;
    if (over_rows) {
        for (int j = col_lo; j < col_hi; ++j) mx = std::max(mx, s(r, j));
        double z = 0.0;
        for (int j = col_lo; j < col_hi; ++j) z += std::exp(s(r, j) - mx);
        return s(r, c) - mx - std::log(z);
    }
    for (int i = row_lo; i < row_hi; ++i) mx = std::max(mx, s(i, c));
    double z = 0.0;
    for (int i = row_lo; i < row_hi; ++i) z += std::exp(s(i, c) - mx);
    return s(r, c) - mx - std::log(z);
}

}  // namespace

double loss_intra(const SimilarityMatrix& S, const std::vector<std::pair<int, int>>& links,
                  bool null_in_softmax) {
    if (links.empty()) return 0.0;
    const int n = S.n_names();
    const int m = S.m_boxes();
    const int name_rows = null_in_softmax && S.has_null_row ? n + 1 : n;
    double sum = 0.0;
    for (const auto& [i, j] : links) {
        if (i < 0 || i >= n || j < 0 || j >= m)
            throw DimensionError("loss_intra: link out of range");
        sum -= log_softmax_at(S.values, 0, name_rows, 0, m, i, j, /*over_rows=*/true);
        sum -= log_softmax_at(S.values, 0, name_rows, 0, m, i, j, /*over_rows=*/false);
    }
    return sum / static_cast<double>(links.size());
}

double loss_inter(const SimilarityMatrix& S, double alpha, double beta, bool positive) {
    if (S.n_names() != 1 || S.m_boxes() != 1)
        throw UsageError("loss_inter requires exactly one name and one box");
    const double z = alpha * S.values(0, 0) + beta;
    const double y = positive ? 1.0 : 0.0;
    return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

double loss_null(const SimilarityMatrix& S, const std::set<int>& linked_cols,
                 const std::set<int>& selected_cols) {
    if (!S.has_null_row) throw UsageError("loss_null requires a null row");
    for (int c : linked_cols)
        if (selected_cols.count(c)) throw UsageError("loss_null: linked and selected overlap");
    double sum = 0.0;
    int count = 0;
    auto bce = [&](int c, double y) {
        if (c < 0 || c >= S.m_boxes()) throw DimensionError("loss_null: column out of range");
        const double z = S.values(S.null_row(), c);
        sum += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        ++count;
    };
    for (int c : linked_cols) bce(c, 0.0);
    for (int c : selected_cols) bce(c, 1.0);
    return count == 0 ? 0.0 : sum / count;
}

// ---- batched loss ----

namespace {

struct ItemPlan {
    std::vector<std::pair<int, int>> links;
    std::vector<int> linked_cols;
    std::vector<int> selected_cols;
    int pair_count = 0;
};

struct ItemOutcome {
    std::unique_ptr<ad::Tape> tape;
    BoundParams bp;
    ad::Var scaled_loss;
    double intra_sum = 0.0;
    double inter_sum = 0.0;
    double null_sum = 0.0;
};

}  // namespace

LossBreakdown total_loss(const TaskBatch& batch, const Parameters& params,
                         const ModelConfig& cfg, const LossWeights& weights,
                         const ObjectiveOptions& opts, std::vector<Mat>* grad_out) {
    LossBreakdown out;

    // Counts are a pure function of batch composition, so the per-item scaled
    // losses can be built independently.
    std::vector<ItemPlan> plans(batch.items.size());
    for (std::size_t i = 0; i < batch.items.size(); ++i) {
        const BatchItem& item = batch.items[i];
        ItemPlan& plan = plans[i];
        if (batch.kind == TaskKind::Task11) {
            plan.pair_count = 1;
            out.pair_count += 1;
            continue;
        }
        const Example& ex = *item.example;
        plan.links = ex.gt_links;
        out.link_count += static_cast<int>(plan.links.size());
        for (const auto& [p, d] : ex.gt_links) plan.linked_cols.push_back(d);
        std::sort(plan.linked_cols.begin(), plan.linked_cols.end());
        for (const UnlinkedBoxLabel& label : select_unlinked_boxes_for(
                 ex, plan.linked_cols, opts.area_ratio, opts.blur_threshold))
            if (label.selected) plan.selected_cols.push_back(label.detection_index);
        out.null_count += static_cast<int>(plan.linked_cols.size() + plan.selected_cols.size());
    }

    const double intra_coeff =
        out.link_count > 0 ? weights.w_intra / static_cast<double>(out.link_count) : 0.0;
    const double null_coeff =
        out.null_count > 0 ? weights.w_null / static_cast<double>(out.null_count) : 0.0;
    const double inter_coeff =
        out.pair_count > 0 ? weights.w_inter / static_cast<double>(out.pair_count) : 0.0;

    std::vector<ItemOutcome> results(batch.items.size());
    auto run_item = [&](std::size_t i) {
        const BatchItem& item = batch.items[i];
        const ItemPlan& plan = plans[i];
        ItemOutcome& res = results[i];
        res.tape = std::make_unique<ad::Tape>();
        ad::Tape& t = *res.tape;
        res.bp = bind_params(t, params);

        ad::DropoutState drop;
        drop.seed = opts.dropout_seed;
        drop.stream = hash3(static_cast<std::uint64_t>(batch.step), i, 0xD20ULL);
        EncodeOptions eopts;
        eopts.train_mode = opts.train_mode;
        eopts.dropout_rate = opts.dropout_rate;
        eopts.dropout = &drop;

        std::vector<ad::Var> terms;
        std::vector<double> coeffs;
        if (batch.kind == TaskKind::Task11) {
            const Example& ex = *item.example;
            if (ex.n_referred() != 1 || ex.m_detections() != 1)
                throw UsageError("Task-1-1 batch item is not a (1,1) example");
            std::vector<Detection> dets =
                item.negative ? std::vector<Detection>{*item.replacement_box} : ex.detections;
            Encoded enc = encode(t, res.bp, cfg, ex.caption, dets, eopts);
            ad::Var pooled = name_pooling(t, enc.text, ex.referred);
            ad::Var S = similarity(t, pooled, enc.boxes, std::nullopt);
            ad::Var bce =
                inter_bce(t, S, res.bp["inter_alpha"], res.bp["inter_beta"], !item.negative);
            res.inter_sum = t.val(bce)(0, 0);
            terms.push_back(bce);
            coeffs.push_back(inter_coeff);
        } else {
            const Example& ex = *item.example;
            Encoded enc = encode(t, res.bp, cfg, ex.caption, ex.detections, eopts);
            ad::Var pooled = name_pooling(t, enc.text, ex.referred);
            ad::Var S = similarity(t, pooled, enc.boxes, res.bp["null_name"]);
            if (!plan.links.empty()) {
                ad::Var isum = intra_sum(t, S, ex.n_referred(), plan.links, opts.null_in_softmax);
                res.intra_sum = t.val(isum)(0, 0);
                terms.push_back(isum);
                coeffs.push_back(intra_coeff);
            }
            if (!plan.linked_cols.empty() || !plan.selected_cols.empty()) {
                ad::Var nsum = null_bce_sum(t, S, ex.n_referred(), plan.linked_cols,
                                            plan.selected_cols);
                res.null_sum = t.val(nsum)(0, 0);
                terms.push_back(nsum);
                coeffs.push_back(null_coeff);
            }
        }
        if (grad_out && !terms.empty()) {
            res.scaled_loss = ad::lincomb(t, terms, coeffs);
            t.backward(res.scaled_loss);
        }
    };

    const int threads = std::max(1, opts.threads);
    if (threads == 1 || batch.items.size() <= 1) {
        for (std::size_t i = 0; i < batch.items.size(); ++i) run_item(i);
    } else {
        std::vector<std::thread> pool;
        std::exception_ptr first_error;
        std::mutex err_mu;
        const std::size_t count = batch.items.size();
        const int used = std::min<std::size_t>(threads, count);
        for (int w = 0; w < used; ++w) {
            pool.emplace_back([&, w]() {
                try {
                    for (std::size_t i = w; i < count; i += used) run_item(i);
                } catch (...) {
                    std::scoped_lock lk(err_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        if (first_error) std::rethrow_exception(first_error);
    }

    double intra_total = 0.0, inter_total = 0.0, null_total = 0.0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        intra_total += results[i].intra_sum;
        inter_total += results[i].inter_sum;
        null_total += results[i].null_sum;
        if (grad_out && results[i].tape && results[i].scaled_loss.valid())
            accumulate_grads(*results[i].tape, results[i].bp, *grad_out);
    }

    out.l_intra = out.link_count > 0 ? intra_total / out.link_count : 0.0;
    out.l_inter = out.pair_count > 0 ? inter_total / out.pair_count : 0.0;
    out.l_null = out.null_count > 0 ? null_total / out.null_count : 0.0;
    out.total = weights.w_intra * out.l_intra + weights.w_inter * out.l_inter +
                weights.w_null * out.l_null;
    return out;
}

SimilarityMatrix model_similarity(const Parameters& params, const ModelConfig& cfg,
                                  const Example& example, bool include_null) {
    ad::Tape t;
    BoundParams bp = bind_params(t, params);
    Encoded enc = encode(t, bp, cfg, example.caption, example.detections, EncodeOptions{});
    ad::Var pooled = name_pooling(t, enc.text, example.referred);
    std::optional<ad::Var> null_var;
    if (include_null) null_var = bp["null_name"];
    SimilarityMatrix sm;
    sm.values = t.val(similarity(t, pooled, enc.boxes, null_var));
    sm.has_null_row = include_null;
    return sm;
}

}  // namespace namelink
