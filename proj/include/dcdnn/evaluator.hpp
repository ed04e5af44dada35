#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dcdnn/baseline.hpp"
#include "dcdnn/trainer.hpp"

namespace dcdnn {

// Idealized bit costs standing in for CABAC: one flag selects the predictor
// family, the mode index costs log2(K) bits on the DCDNN side and a fixed
// budget on the baseline side.
struct CostModel {
    double lambda = 0.0;
    double flag_bits = 1.0;
    double baseline_mode_bits = 6.0;  // ~uniform over 35 modes, rounded up
    int dcdnn_modes = 1;              // K

    double dcdnn_mode_bits() const;
    void validate() const;
};

// HEVC-style lambda heuristic: 0.85 * 2^((qp - 12) / 3).
double lambda_for_qp(int qp);

struct ModeDecision {
    enum class Kind : std::uint8_t { kBaseline = 0, kDcdnn = 1 };

    BlockOrigin origin;
    Kind kind = Kind::kBaseline;
    int index = 0;  // baseline mode or DCDNN cluster
    double sse = 0.0;
    double bits = 0.0;
    double cost = 0.0;  // sse + lambda * bits
};

// Pixel-domain DCDNN prediction for an extracted sample: run the net in the
// scaled zero-centered domain, undo the scaling, add the reference mean
// back, clamp to 8-bit range.
Vec dcdnn_predict_block(const Network& net, const TrainSample& sample,
                        double value_scale = kDefaultValueScale);

// Rate-distortion decision over all 35 baseline modes and all K DCDNN
// modes. Ties go to the baseline side, then to the lowest index.
ModeDecision decide(const Plane& plane, int x, int y, int block_size,
                    const ClusterBanks& banks, const CostModel& cost,
                    double value_scale = kDefaultValueScale);

// Single reference line recovered from a stored sample's layout vector
// (nearest row/column plus corner, back in pixel units).
RefLine ref_line_from_sample(const TrainSample& sample, int block_size, int ref_lines);

// Same decision for a stored sample, without the source plane.
ModeDecision decide_sample(const TrainSample& sample, int block_size, int ref_lines,
                           const ClusterBanks& banks, const CostModel& cost,
                           double value_scale = kDefaultValueScale);

// Decision per block of a cropped uniform grid, row-major order.
std::vector<ModeDecision> evaluate_plane(const Plane& plane, const ClusterBanks& banks,
                                         const CostModel& cost, int block_size,
                                         double value_scale = kDefaultValueScale,
                                         int threads = 1);

// Pixel-area fraction of the frame covered by DCDNN decisions.
double usage_rate(std::span<const ModeDecision> decisions, int width, int height);

struct ModeHistogram {
    std::array<std::uint64_t, kBaselineModes> baseline{};
    std::vector<std::uint64_t> dcdnn;  // K entries

    std::uint64_t total() const;
};

ModeHistogram mode_histogram(std::span<const ModeDecision> decisions, int dcdnn_modes);

// Best-of-35 baseline SSE vs best-of-K DCDNN SSE for one block.
std::pair<double, double> mse_improvement(const Plane& plane, int x, int y,
                                          int block_size, const ClusterBanks& banks,
                                          double value_scale = kDefaultValueScale);

// CSV + JSON report bundle. frame dimensions of 0 mean "no frame context"
// and suppress the Eq.-4 usage rate in the summary. Values print with six
// significant digits.
inline constexpr std::uint32_t kReportSchemaVersion = 1;
void emit_report(const TrainHistory& history, std::span<const ModeDecision> decisions,
                 int dcdnn_modes, int frame_width, int frame_height,
                 const std::string& out_dir);

void write_decisions_csv(std::span<const ModeDecision> decisions,
                         const std::string& path);
std::vector<ModeDecision> read_decisions_csv(const std::string& path);
TrainHistory read_history_csv(const std::string& path);

}  // namespace dcdnn
