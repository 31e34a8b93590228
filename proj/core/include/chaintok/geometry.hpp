/**
 * Chain geometry: coordinate conventions, rigid alignment metrics, a
 * C-alpha-only secondary structure heuristic, the synthetic corpus
 * generator, and coordinate file I/O.
 *
 * All positions are nanometers internally; presentation layers convert to
 * Angstrom (x10) when reporting. Chains hold 1..256 residues with a fixed
 * 0.38 nm consecutive spacing in generated data.
 */
#pragma once

#include <array>
#include <string>
#include <vector>

#include "chaintok/rng.hpp"
#include "chaintok/tensor.hpp"

namespace chaintok::geometry {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

constexpr int kMaxLength = 256;
constexpr double kCaSpacingNm = 0.38;

struct CoordSet {
    std::vector<Vec3> pos;  // nm

    int length() const { return static_cast<int>(pos.size()); }
};

/// Translate so the centroid is exactly zero.
CoordSet center(const CoordSet& c);
Vec3 centroid(const CoordSet& c);

/// Uniform rotation over SO(3) via the normalized-quaternion method.
Mat3 random_rotation(Rng& rng);
CoordSet apply_rotation(const CoordSet& c, const Mat3& r);

/// Minimum RMSD over rigid rotations after centering both inputs (nm).
/// Optimal rotation from the SVD of the cross-covariance with reflection
/// correction.
double kabsch_rmsd(const CoordSet& a, const CoordSet& b);

/// Rotation matrix R minimizing sum |R a_i - b_i|^2 for centered inputs.
Mat3 kabsch_rotation(const CoordSet& a_centered, const CoordSet& b_centered);

/// TM = (1/L) sum 1/(1+(d_i/d0)^2) with d0(L) = max(0.5, 1.24(L-15)^{1/3}-1.8)
/// Angstrom, distances from the Kabsch-optimal superposition with identity
/// residue correspondence. Equal lengths required.
double tm_score(const CoordSet& a, const CoordSet& b);

/// The TM formula on precomputed superposed distances (Angstrom).
double tm_from_distances(const std::vector<double>& dists_ang, int norm_length);

enum class Sse { Helix, Sheet, Coil };

/// Distance-window thresholds (nm). Defaults were tuned once against the
/// synthetic generator and are frozen here.
struct SseConfig {
    double helix_d3 = 0.50, helix_d3_tol = 0.07;
    double helix_d4 = 0.62, helix_d4_tol = 0.10;
    double sheet_d2 = 0.66, sheet_d2_tol = 0.05;
    double sheet_d3_min = 0.75;
};

/// Helix where the i..i+3 / i..i+4 distances sit in the helix windows,
/// sheet where i..i+2 is extended and the chain is near-straight, else coil.
/// Two consecutive matching windows are required (single-window hits are
/// noise on random chains) and a matching run labels its whole span; helix
/// wins over sheet. L < 5 yields all coil.
std::vector<Sse> assign_sse(const CoordSet& c, const SseConfig& cfg = {});

double sse_fraction(const std::vector<Sse>& labels, Sse kind);

enum class ChainClass : int { AllHelix = 0, AllSheet = 1, Mixed = 2, Coil = 3 };
constexpr int kNumChainClasses = 4;
const char* chain_class_name(ChainClass c);

struct LabeledChain {
    CoordSet coords;
    int label = 0;
};

struct CorpusConfig {
    int min_len = 24;
    int max_len = 64;
    /// Sampling weights for {all-helix, all-sheet, mixed, coil}.
    std::array<double, 4> class_mix = {0.25, 0.25, 0.25, 0.25};
};

/// Synthetic chains with class labels. Deterministic per (seed, index):
/// chain i uses its own derived stream, so generation parallelizes and a
/// fixed seed reproduces the corpus exactly.
std::vector<LabeledChain> synth_corpus(int n, const CorpusConfig& cfg, uint64_t seed);

// Canonical-pose builders, exposed for tests and for the corpus generator.
CoordSet make_helix(int n);
CoordSet make_strand(int n);
CoordSet make_coil(int n, Rng& rng);
CoordSet make_chain(ChainClass cls, int n, Rng& rng);

/// Frechet distance between Gaussian fits of two feature sets:
/// |mu1-mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}), matrix square root by
/// eigendecomposition with negative eigenvalues clamped to zero.
/// Population covariance (divide by n).
double frechet_distance(const std::vector<std::vector<double>>& feats_a,
                        const std::vector<std::vector<double>>& feats_b);

// Symmetric eigendecomposition (cyclic Jacobi), exposed for reuse.
// a is n*n row-major and is destroyed; eigenvalues descend.
void sym_eig(std::vector<double>& a, int n, std::vector<double>& eigvals,
             std::vector<double>& eigvecs);

// ---- file I/O ---------------------------------------------------------------

/// Text format: one residue per line, "index x y z" in nm.
void write_coords(const CoordSet& c, const std::string& path);
CoordSet read_coords(const std::string& path);

/// C-alpha subset of PDB-style fixed-column ATOM records (Angstrom -> nm).
CoordSet read_pdb_ca(const std::string& path);

// Model-boundary conversions (f32 tensor [L,3]).
Tensor to_tensor(const CoordSet& c);
CoordSet from_tensor(const Tensor& t);

}  // namespace chaintok::geometry
