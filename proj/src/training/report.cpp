#include "speakerprof/report.hpp"

#include <fmt/format.h>

#include <json.hpp>

namespace spkr::training {

std::string history_jsonl(const History &history) {
    std::string out;
    for (const auto &e : history.epochs) {
        nlohmann::ordered_json line;
        line["run"] = history.run_id;
        line["epoch"] = e.epoch;
        line["train_loss"] = e.train_loss;
        line["val_loss"] = e.val_loss;
        nlohmann::ordered_json tasks = nlohmann::ordered_json::object();
        for (const auto &[task, loss] : e.val_task_losses) tasks[models::to_string(task)] = loss;
        line["val_task_losses"] = tasks;
        line["best"] = e.epoch == history.best_epoch;
        out += line.dump() + "\n";
    }
    return out;
}

std::string metrics_jsonl(const std::string &run_id, const std::string &split, models::Task task,
                          const Metrics &metrics) {
    nlohmann::ordered_json line;
    line["run"] = run_id;
    line["split"] = split;
    line["task"] = models::to_string(task);
    line["count"] = metrics.count;
    if (metrics.regression) {
        line["mae"] = metrics.mae;
        line["rmse"] = metrics.rmse;
    } else {
        line["accuracy"] = metrics.accuracy;
        line["precision"] = metrics.precision;
        line["recall"] = metrics.recall;
        line["f1_macro"] = metrics.f1;
        line["confusion"] = metrics.confusion;
        line["excluded_classes"] = metrics.excluded_classes;
    }
    return line.dump() + "\n";
}

namespace {

std::string cell(double v, bool applies, bool csv) {
    if (!applies) return csv ? "" : "-";
    return fmt::format("{:.4f}", v);
}

}  // namespace

std::string summary_text(const std::vector<SummaryRow> &rows) {
    std::string out = fmt::format("{:<32} {:<8} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}\n", "run", "task", "n",
                                  "accuracy", "precision", "recall", "f1_macro", "mae", "rmse");
    for (const auto &r : rows) {
        const bool cls = !r.metrics.regression;
        out += fmt::format("{:<32} {:<8} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}\n", r.run, models::to_string(r.task),
                           r.metrics.count, cell(r.metrics.accuracy, cls, false), cell(r.metrics.precision, cls, false),
                           cell(r.metrics.recall, cls, false), cell(r.metrics.f1, cls, false),
                           cell(r.metrics.mae, !cls, false), cell(r.metrics.rmse, !cls, false));
    }
    out += "precision, recall and f1 are macro averages over classes present in truth or predictions\n";
    return out;
}

std::string summary_csv(const std::vector<SummaryRow> &rows) {
    std::string out = "run,task,n,accuracy,precision,recall,f1_macro,mae,rmse\n";
    for (const auto &r : rows) {
        const bool cls = !r.metrics.regression;
        out += fmt::format("{},{},{},{},{},{},{},{},{}\n", r.run, models::to_string(r.task), r.metrics.count,
                           cell(r.metrics.accuracy, cls, true), cell(r.metrics.precision, cls, true),
                           cell(r.metrics.recall, cls, true), cell(r.metrics.f1, cls, true),
                           cell(r.metrics.mae, !cls, true), cell(r.metrics.rmse, !cls, true));
    }
    return out;
}

}  // namespace spkr::training
