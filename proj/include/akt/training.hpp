#pragma once

// Training loop, split evaluation, attention benchmark and FLOPs report
// behind the command-line tool.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "akt/config.hpp"
#include "akt/dataset.hpp"
#include "akt/metrics.hpp"
#include "akt/model.hpp"
#include "akt/points.hpp"

namespace akt {

struct StepLoss {
  std::size_t step = 0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<StepLoss> losses;
  std::filesystem::path checkpoint;
  double seconds = 0.0;
};

/// Steps the run takes: `epochs` whole passes when positive, else `steps`.
std::size_t planned_steps(const TrainConfig& cfg, std::size_t train_items);

/// Mean batch loss of `items` under the current parameters, one backward pass
/// per image with the graph freed in between. Gradients accumulate.
double batch_loss_backward(const AktModel& model, std::span<const Sample> batch);

/// Minibatch Adam over `items`. Writes out_dir/loss.csv ("step,loss"),
/// out_dir/checkpoint_<step>.akt every `checkpoint_every` steps and
/// out_dir/checkpoint.akt at the end. A non-finite loss aborts with
/// NumericError naming the step. `progress` receives one line per step.
TrainResult train_model(const RunConfig& cfg, AktModel& model, const std::vector<DatasetItem>& items,
                        const std::filesystem::path& out_dir, std::ostream* progress = nullptr);

/// Confident predictions in pixel coordinates.
PointSet predict_points(const AktModel& model, const Tensor& image, double conf_cutoff);

struct EvalReport {
  std::size_t images = 0;
  LocalizationReport localization;
  CountingReport counting;
  std::size_t spacing_pairs = 0;
  std::optional<SpacingAccuracy> spacing;
};

/// Scores `model` over `items`, or the ground truth itself when `model` is
/// null. Spacing pairs are compared only where both ends of an estimated
/// pair match the two ends of a reference pair within the largest threshold.
EvalReport evaluate(const RunConfig& cfg, const AktModel* model, const std::vector<DatasetItem>& items);

/// CSV "alpha,precision,recall,f1" then avp=, avr=, avf=, mae=, mse=,
/// rmse_cm=, r2= lines ("na" where undefined).
std::string format_eval(const EvalReport& report);

struct BenchRow {
  std::size_t tokens = 0;
  double paa_ms = 0.0;
  double mha_ms = 0.0;
  double paa_flops = 0.0;
  double mha_flops = 0.0;
};

/// Median forward wall time of one PAA block and one MHA block at width `dim`.
std::vector<BenchRow> run_bench(std::span<const std::size_t> tokens, std::size_t dim, std::size_t heads,
                                std::size_t runs, std::uint64_t seed);
/// CSV "n,paa_ms,mha_ms,paa_flops,mha_flops,flops_ratio,paa_time_ratio,mha_time_ratio"
/// with time ratios against the previous row.
std::string format_bench(const std::vector<BenchRow>& rows);

/// key=value lines for the configured model and its MHA-encoder twin.
std::string format_flops(const ModelConfig& cfg);

}  // namespace akt
