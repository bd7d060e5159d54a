#ifndef CAPFOR_SEQDATA_HPP
#define CAPFOR_SEQDATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "capfor/tensor.hpp"

namespace capfor {

enum class Protocol { CC, CCCV };
enum class Source { Real, Synthetic };

/// Corpus family tags used by the leave-one-battery-out harness.
enum class Family { WzuLike, CalceLike, XjtuLike, SjtuLike };

std::string protocol_name(Protocol p);
Protocol parse_protocol(const std::string& token);  // case-insensitive
std::string family_name(Family f);
Family parse_family(const std::string& token);
std::size_t family_index(Family f);

/**
 * Cycle-indexed capacity sequence for one cell.
 *
 * Cycles are strictly increasing non-negative integers; capacity is in
 * ampere-hours, positive, one value per cycle.
 */
struct CapacitySeries {
    std::string cell_id;
    Protocol protocol = Protocol::CC;
    std::vector<long> cycles;
    std::vector<double> capacity;
    Source source = Source::Real;

    std::size_t size() const { return capacity.size(); }
    void validate() const;  // throws std::invalid_argument on broken invariants
};

/// Contiguous lookback/horizon pair cut from one series.
struct WindowPair {
    std::vector<double> input;   // length L
    std::vector<double> target;  // length H
    std::string cell_id;
    std::size_t offset = 0;      // position of input[0] in the source series
    long start_cycle = 0;        // cycle number at that position
};

/// Per-instance min/max of the lookback, used to scale and unscale.
struct ScaleParams {
    double min = 0.0;
    double max = 0.0;
};

struct Corpus {
    std::string name;
    Family family = Family::WzuLike;
    std::vector<CapacitySeries> series;
};

/**
 * Double-exponential fade preset for one synthetic family:
 * capacity(c) = C0 * (a * exp(-b c) + (1 -a) * exp(-g c)) plus noise and
 * optional regeneration bumps. Ranges are sampled per cell.
 */
struct FamilyPreset {
    double c0_lo = 1.0, c0_hi = 1.0;      // ampere-hour anchor range
    double a_lo = 0.5, a_hi = 0.5;        // mix of fast/slow exponentials
    double b_lo = 1e-3, b_hi = 1e-3;      // fast decay rate per cycle
    double g_lo = 1e-4, g_hi = 1e-4;      // slow decay rate per cycle
    double noise_std = 0.0;               // Gaussian noise, fraction of C0
    double jump_prob = 0.0;               // per-cycle regeneration probability
    double jump_amp = 0.0;                // bump height, fraction of C0
    double jump_decay = 0.8;              // bump shrink factor per cycle
    double cccv_rate_factor = 0.6;        // CCCV cells fade slower by this factor
};

FamilyPreset preset_for(Family f);

/// One synthetic cell; consumes draws from `rng` only.
CapacitySeries synthesize_cell(const FamilyPreset& preset, Protocol protocol,
                               std::size_t n_cycles, Rng& rng, std::string cell_id);

/**
 * Synthetic corpus, deterministic per (family, seed, cell index): cell i is
 * generated from its own stream mix_seed(seed, family_index, i). Protocols
 * alternate CC/CCCV by cell index. n_cycles must be at least 192.
 */
Corpus synthesize_corpus(Family family, std::size_t n_cells, std::size_t n_cycles,
                         std::uint64_t seed);

/**
 * CSV with header `cell_id,protocol,cycle,capacity_ah`. Rows are grouped by
 * cell and sorted by cycle; malformed rows are reported with their line
 * number. Values are written with round-trip precision.
 */
std::vector<CapacitySeries> load_csv(const std::string& path);
void save_csv(const std::string& path, const std::vector<CapacitySeries>& series);

/// Corpus serialization: one CSV plus a key-value manifest beside it.
void save_corpus(const std::string& csv_path, const std::string& manifest_path,
                 const Corpus& corpus, std::uint64_t seed);
Corpus load_corpus(const std::string& csv_path, const std::string& manifest_path);

/**
 * Cut lookback/horizon pairs at offsets 0, stride, 2*stride, ...; a trailing
 * remainder shorter than L+H is dropped. A series shorter than L+H yields an
 * empty list.
 */
std::vector<WindowPair> make_windows(const CapacitySeries& series, std::size_t L = 96,
                                     std::size_t H = 96, std::size_t stride = 192);

/**
 * Per-instance MinMax scaling: (x - min)/(max - min). A constant window maps
 * to all 0.5 rather than erroring, so degenerate plateaus don't abort runs.
 */
ScaleParams fit_scale(const std::vector<double>& window);
std::vector<double> apply_scale(const std::vector<double>& window, const ScaleParams& p);
std::vector<double> invert_scale(const std::vector<double>& scaled, const ScaleParams& p);

}  // namespace capfor

#endif  // CAPFOR_SEQDATA_HPP
