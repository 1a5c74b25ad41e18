// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dmae/downstream.hpp"
#include "dmae/pretrain.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace dmae {

struct AblationArm {
    std::string name;
    nlohmann::json delta;  // overlay onto the base TrainConfig JSON
};

struct AblationPlan {
    std::vector<AblationArm> arms;

    /// Every delta must parse against the base config; a baseline arm with an
    /// empty delta is prepended when missing.
    void validate(const TrainConfig& base) {
        bool has_baseline = false;
        for (const auto& a : arms) {
            if (a.name.empty()) throw ConfigError("ablation arm without a name");
            train_config_from_json(a.delta, base);
            has_baseline = has_baseline || a.name == "baseline";
        }
        if (!has_baseline) arms.insert(arms.begin(), AblationArm{"baseline", nlohmann::json::object()});
    }

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& a : arms) j.push_back({{"name", a.name}, {"delta", a.delta}});
        return j;
    }

    static AblationPlan from_json(const nlohmann::json& j) {
        if (!j.is_array()) throw ConfigError("ablation plan must be a JSON array of {name, delta}");
        AblationPlan p;
        for (const auto& a : j) {
            if (!a.is_object() || !a.contains("name")) throw ConfigError("ablation arm needs a name");
            p.arms.push_back({a.at("name").get<std::string>(), a.value("delta", nlohmann::json::object())});
        }
        return p;
    }

    static AblationPlan standard() {
        AblationPlan p;
        p.arms = {{"baseline", nlohmann::json::object()},
                  {"norm=layer", {{"norm", "layer"}}},
                  {"mask=independent", {{"mask", {{"strategy", "independent"}}}}},
                  {"lambda=0", {{"lambda", 0.0}}},
                  {"dec-dropped", {{"use_dec_loss", false}}}};
        for (double r : {0.1, 0.15, 0.2, 0.25, 0.5}) {
            std::ostringstream name;
            name << "r=" << r;
            p.arms.push_back({name.str(), {{"mask", {{"r", r}}}}});
        }
        return p;
    }
};

struct AblationData {
    SeriesBatch pretrain_train, pretrain_val;
    std::optional<SeriesBatch> task_train, task_val, task_test;  // labeled; fine-tuning skipped when absent
};

struct AblationRow {
    std::string arm;
    bool ok = false;
    std::string error;
    double step0_dec = 0, step0_ali = 0, final_loss = 0, best_val_loss = 0;
    std::size_t selected_epoch = 0;
    std::optional<Metrics> test;
};

/// Pretrain (and fine-tune when task data is present) every arm from the same
/// seed. A failing arm is recorded and the remaining arms still run.
template <typename S>
std::vector<AblationRow> run_ablation(AblationPlan plan, const TrainConfig& base, const AblationData& data,
                                      const std::function<void(const AblationRow&)>& on_arm = {}) {
    plan.validate(base);
    std::vector<AblationRow> rows;
    for (const auto& arm : plan.arms) {
        AblationRow row;
        row.arm = arm.name;
        try {
            const auto cfg = train_config_from_json(arm.delta, base);
            Model<S> model(cfg.model_config(data.pretrain_train.n_vars(), data.pretrain_train.length()));
            const auto rec = pretrain(model, data.pretrain_train, data.pretrain_val, cfg);
            row.step0_dec = rec.steps.front().dec;
            row.step0_ali = rec.steps.front().ali;
            row.final_loss = rec.epochs.back().loss;
            row.best_val_loss = rec.best_val_loss;
            row.selected_epoch = rec.selected_epoch;
            if (data.task_train && data.task_val) {
                const auto task = task_from_labels(*data.task_train);
                finetune(model, *data.task_train, *data.task_val, task, cfg.finetune, cfg.seed, cfg.checked);
                row.test = evaluate(model, data.task_test ? *data.task_test : *data.task_val, task);
            }
            row.ok = true;
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        rows.push_back(row);
        if (on_arm) on_arm(row);
    }
    return rows;
}

inline std::string metric_cell(const std::optional<Metrics>& m) {
    if (!m) return "";
    std::ostringstream os;
    os.precision(6);
    if (m->accuracy) os << "accuracy=" << *m->accuracy;
    if (m->rmse) os << "rmse=" << *m->rmse;
    if (m->mse) os << "mse=" << *m->mse << ";mae=" << *m->mae;
    return os.str();
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os.precision(10);
    os << "arm,status,step0_loss_dec,step0_loss_ali,final_loss,best_val_loss,selected_epoch,test_metric,error\n";
    for (const auto& r : rows) {
        std::string err = r.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        os << r.arm << ',' << (r.ok ? "ok" : "failed") << ',' << r.step0_dec << ',' << r.step0_ali << ','
           << r.final_loss << ',' << r.best_val_loss << ',' << r.selected_epoch << ',' << metric_cell(r.test) << ','
           << err << '\n';
    }
    return os.str();
}

inline std::string ablation_markdown(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os.precision(6);
    os << "| arm | status | step-0 L_dec | step-0 L_ali | final L | best val L | epoch | test |\n";
    os << "|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : rows) {
        os << "| " << r.arm << " | " << (r.ok ? "ok" : "failed: " + r.error) << " | " << r.step0_dec << " | "
           << r.step0_ali << " | " << r.final_loss << " | " << r.best_val_loss << " | " << r.selected_epoch << " | "
           << metric_cell(r.test) << " |\n";
    }
    return os.str();
}

}  // namespace dmae
