#pragma once

#include <string>
#include <vector>

#include "speakerprof/training.hpp"

namespace spkr::training {

// Line-delimited JSON. Each history line is
//   {"run": id, "epoch": n, "train_loss": x, "val_loss": x, "val_task_losses": {task: x, ...}}
// and each metrics line is
//   {"run": id, "split": name, "task": task, "count": n, "accuracy": x, "precision": x,
//    "recall": x, "f1_macro": x, "confusion": [[...]], "excluded_classes": [...]}
// with "mae"/"rmse" in place of the classification fields for age.
std::string history_jsonl(const History &history);
std::string metrics_jsonl(const std::string &run_id, const std::string &split, models::Task task,
                          const Metrics &metrics);

struct SummaryRow {
    std::string run;  // run id or comparison arm
    models::Task task;
    Metrics metrics;
};

// Fixed-width table and CSV with columns
// run, task, n, accuracy, precision, recall, f1_macro, mae, rmse.
// Fields that do not apply to the task are "-" (text) or empty (CSV).
std::string summary_text(const std::vector<SummaryRow> &rows);
std::string summary_csv(const std::vector<SummaryRow> &rows);

}  // namespace spkr::training
