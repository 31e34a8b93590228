#include "chaintok/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace chaintok::geometry {

namespace {

Vec3 sub3(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 add3(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 scale3(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm3(const Vec3& a) { return std::sqrt(dot3(a, a)); }
Vec3 cross3(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Vec3 normalize3(const Vec3& a) {
    double n = norm3(a);
    return {a[0] / n, a[1] / n, a[2] / n};
}

Vec3 mat_apply(const Mat3& m, const Vec3& v) {
    return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

double dist(const CoordSet& c, int i, int j) { return norm3(sub3(c.pos[j], c.pos[i])); }

/// Any unit vector orthogonal to u.
Vec3 any_orthogonal(const Vec3& u) {
    Vec3 probe = std::abs(u[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    Vec3 v = cross3(u, probe);
    return normalize3(v);
}

}  // namespace

CoordSet center(const CoordSet& c) {
    if (c.length() < 1) throw std::invalid_argument("center: empty chain");
    Vec3 mu = centroid(c);
    CoordSet out;
    out.pos.reserve(c.pos.size());
    for (const Vec3& p : c.pos) out.pos.push_back(sub3(p, mu));
    return out;
}

Vec3 centroid(const CoordSet& c) {
    Vec3 mu{0, 0, 0};
    for (const Vec3& p : c.pos) mu = add3(mu, p);
    return scale3(mu, 1.0 / c.length());
}

Mat3 random_rotation(Rng& rng) {
    // Normalized 4-D Gaussian = uniform quaternion = uniform SO(3).
    double q[4];
    double n = 0.0;
    do {
        n = 0.0;
        for (double& qi : q) {
            qi = rng.normal();
            n += qi * qi;
        }
    } while (n < 1e-12);
    n = std::sqrt(n);
    for (double& qi : q) qi /= n;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    return Mat3{{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
                 {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
                 {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

CoordSet apply_rotation(const CoordSet& c, const Mat3& r) {
    CoordSet out;
    out.pos.reserve(c.pos.size());
    for (const Vec3& p : c.pos) out.pos.push_back(mat_apply(r, p));
    return out;
}

void sym_eig(std::vector<double>& a, int n, std::vector<double>& eigvals,
             std::vector<double>& eigvecs) {
    eigvecs.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) eigvecs[static_cast<size_t>(i) * n + i] = 1.0;
    auto A = [&](int i, int j) -> double& { return a[static_cast<size_t>(i) * n + j]; };
    auto V = [&](int i, int j) -> double& { return eigvecs[static_cast<size_t>(i) * n + j]; };

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) off += A(i, j) * A(i, j);
        }
        if (off < 1e-24) break;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double apq = A(p, q);
                if (std::abs(apq) < 1e-300) continue;
                double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int k = 0; k < n; ++k) {
                    double akp = A(k, p), akq = A(k, q);
                    A(k, p) = c * akp - s * akq;
                    A(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    double apk = A(p, k), aqk = A(q, k);
                    A(p, k) = c * apk - s * aqk;
                    A(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    double vkp = V(k, p), vkq = V(k, q);
                    V(k, p) = c * vkp - s * vkq;
                    V(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    eigvals.resize(n);
    for (int i = 0; i < n; ++i) eigvals[i] = A(i, i);
    // sort descending, permuting eigenvector columns alongside
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](int x, int y) { return eigvals[x] > eigvals[y]; });
    std::vector<double> ev(n);
    std::vector<double> vecs(static_cast<size_t>(n) * n);
    for (int c = 0; c < n; ++c) {
        ev[c] = eigvals[order[c]];
        for (int r = 0; r < n; ++r) vecs[static_cast<size_t>(r) * n + c] = V(r, order[c]);
    }
    eigvals = std::move(ev);
    eigvecs = std::move(vecs);
}

namespace {

/// SVD of the 3x3 cross-covariance H = sum a_i b_i^T via eigendecomposition
/// of H^T H, with column completion for rank-deficient configurations.
void svd3(const Mat3& h, Mat3& u, Vec3& sigma, Mat3& v) {
    std::vector<double> k(9);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int r = 0; r < 3; ++r) acc += h[r][i] * h[r][j];
            k[static_cast<size_t>(i) * 3 + j] = acc;
        }
    }
    std::vector<double> ev, vecs;
    sym_eig(k, 3, ev, vecs);
    for (int c = 0; c < 3; ++c) {
        sigma[c] = std::sqrt(std::max(ev[c], 0.0));
        for (int r = 0; r < 3; ++r) v[r][c] = vecs[static_cast<size_t>(r) * 3 + c];
    }
    // right-handed V
    Vec3 v0{v[0][0], v[1][0], v[2][0]}, v1{v[0][1], v[1][1], v[2][1]};
    Vec3 v2 = cross3(v0, v1);
    v[0][2] = v2[0];
    v[1][2] = v2[1];
    v[2][2] = v2[2];

    const double tol = 1e-12 * std::max(sigma[0], 1e-300);
    Vec3 u_cols[3];
    int well = 0;
    for (int c = 0; c < 3; ++c) {
        if (sigma[c] > tol) {
            Vec3 vc{v[0][c], v[1][c], v[2][c]};
            u_cols[c] = scale3(mat_apply(h, vc), 1.0 / sigma[c]);
            well = c + 1;
        }
    }
    if (well == 0) {
        u_cols[0] = {1, 0, 0};
        u_cols[1] = {0, 1, 0};
        well = 2;
    } else if (well == 1) {
        u_cols[1] = any_orthogonal(u_cols[0]);
        well = 2;
    }
    if (well == 2) u_cols[2] = cross3(u_cols[0], u_cols[1]);
    for (int c = 0; c < 3; ++c) {
        for (int r = 0; r < 3; ++r) u[r][c] = u_cols[c][r];
    }
}

Mat3 cross_covariance(const CoordSet& a, const CoordSet& b) {
    Mat3 h{{{0, 0, 0}, {0, 0, 0}, {0, 0, 0}}};
    for (int i = 0; i < a.length(); ++i) {
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) h[r][c] += a.pos[i][r] * b.pos[i][c];
        }
    }
    return h;
}

double det3(const Mat3& m) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

}  // namespace

Mat3 kabsch_rotation(const CoordSet& a, const CoordSet& b) {
    Mat3 h = cross_covariance(a, b);
    Mat3 u, v;
    Vec3 sigma;
    svd3(h, u, sigma, v);
    double d = det3(u) * det3(v);
    // R = V diag(1,1,sign) U^T maximizes Tr(R H); sign flips out reflections.
    Mat3 r;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int c = 0; c < 3; ++c) {
                double dc = (c == 2 && d < 0) ? -1.0 : 1.0;
                acc += v[i][c] * dc * u[j][c];
            }
            r[i][j] = acc;
        }
    }
    return r;
}

double kabsch_rmsd(const CoordSet& a, const CoordSet& b) {
    if (a.length() != b.length()) {
        throw std::invalid_argument("kabsch_rmsd: length mismatch " +
                                    std::to_string(a.length()) + " vs " +
                                    std::to_string(b.length()));
    }
    CoordSet ac = center(a), bc = center(b);
    Mat3 r = kabsch_rotation(ac, bc);
    double acc = 0.0;
    for (int i = 0; i < ac.length(); ++i) {
        Vec3 d = sub3(mat_apply(r, ac.pos[i]), bc.pos[i]);
        acc += dot3(d, d);
    }
    return std::sqrt(std::max(acc, 0.0) / ac.length());
}

double tm_from_distances(const std::vector<double>& dists_ang, int norm_length) {
    double d0 = 1.24 * std::cbrt(static_cast<double>(norm_length) - 15.0) - 1.8;
    d0 = std::max(d0, 0.5);
    double acc = 0.0;
    for (double d : dists_ang) acc += 1.0 / (1.0 + (d / d0) * (d / d0));
    return acc / norm_length;
}

double tm_score(const CoordSet& a, const CoordSet& b) {
    if (a.length() != b.length()) {
        throw std::invalid_argument("tm_score: length mismatch " +
                                    std::to_string(a.length()) + " vs " +
                                    std::to_string(b.length()));
    }
    CoordSet ac = center(a), bc = center(b);
    Mat3 r = kabsch_rotation(ac, bc);
    std::vector<double> d(ac.length());
    for (int i = 0; i < ac.length(); ++i) {
        d[i] = 10.0 * norm3(sub3(mat_apply(r, ac.pos[i]), bc.pos[i]));  // nm -> A
    }
    return tm_from_distances(d, ac.length());
}

std::vector<Sse> assign_sse(const CoordSet& c, const SseConfig& cfg) {
    const int n = c.length();
    std::vector<Sse> out(n, Sse::Coil);
    if (n < 5) return out;
    std::vector<bool> w_sheet(n, false), w_helix(n, false);
    for (int i = 0; i + 2 < n; ++i) {
        if (std::abs(dist(c, i, i + 2) - cfg.sheet_d2) > cfg.sheet_d2_tol) continue;
        if (i + 3 < n && dist(c, i, i + 3) < cfg.sheet_d3_min) continue;
        w_sheet[i] = true;
    }
    for (int i = 0; i + 4 < n; ++i) {
        if (std::abs(dist(c, i, i + 3) - cfg.helix_d3) > cfg.helix_d3_tol) continue;
        if (std::abs(dist(c, i, i + 4) - cfg.helix_d4) > cfg.helix_d4_tol) continue;
        w_helix[i] = true;
    }
    std::vector<bool> helix(n, false), sheet(n, false);
    for (int i = 0; i + 1 < n; ++i) {
        if (w_helix[i] && w_helix[i + 1]) {
            for (int j = i; j <= std::min(i + 5, n - 1); ++j) helix[j] = true;
        }
        if (w_sheet[i] && w_sheet[i + 1]) {
            for (int j = i; j <= std::min(i + 3, n - 1); ++j) sheet[j] = true;
        }
    }
    for (int i = 0; i < n; ++i) {
        if (helix[i]) {
            out[i] = Sse::Helix;
        } else if (sheet[i]) {
            out[i] = Sse::Sheet;
        }
    }
    return out;
}

double sse_fraction(const std::vector<Sse>& labels, Sse kind) {
    if (labels.empty()) return 0.0;
    int n = 0;
    for (Sse s : labels) n += (s == kind) ? 1 : 0;
    return static_cast<double>(n) / labels.size();
}

const char* chain_class_name(ChainClass c) {
    switch (c) {
        case ChainClass::AllHelix: return "all-helix";
        case ChainClass::AllSheet: return "all-sheet";
        case ChainClass::Mixed: return "mixed";
        case ChainClass::Coil: return "coil";
    }
    return "?";
}

// ---- builders ---------------------------------------------------------------

CoordSet make_helix(int n) {
    // Standard alpha-helix C-alpha geometry (rise 1.495 A, radius 2.27 A,
    // 99.6 deg/residue), rescaled so consecutive spacing is exactly 0.38 nm.
    const double dphi = 99.6 * M_PI / 180.0;
    double r = 0.2270, rise = 0.1495;
    const double chord =
        std::sqrt(2.0 * r * r * (1.0 - std::cos(dphi)) + rise * rise);
    const double s = kCaSpacingNm / chord;
    r *= s;
    rise *= s;
    CoordSet c;
    c.pos.reserve(n);
    for (int i = 0; i < n; ++i) {
        c.pos.push_back({r * std::cos(i * dphi), r * std::sin(i * dphi), i * rise});
    }
    return c;
}

CoordSet make_strand(int n) {
    // Zigzag with extension 0.33 nm/residue; the perpendicular amplitude
    // keeps consecutive spacing at exactly 0.38 nm and i..i+2 at 0.66 nm.
    const double a = 0.33;
    const double h = 0.5 * std::sqrt(kCaSpacingNm * kCaSpacingNm - a * a);
    CoordSet c;
    c.pos.reserve(n);
    for (int i = 0; i < n; ++i) {
        c.pos.push_back({i * a, (i % 2 == 0) ? h : -h, 0.0});
    }
    return c;
}

namespace {

Vec3 random_unit(Rng& rng) {
    Vec3 v;
    double n;
    do {
        v = {rng.normal(), rng.normal(), rng.normal()};
        n = norm3(v);
    } while (n < 1e-9);
    return scale3(v, 1.0 / n);
}

bool too_close(const std::vector<Vec3>& pts, const Vec3& p, int skip_last, double min_d) {
    const int n = static_cast<int>(pts.size());
    for (int i = 0; i < n - skip_last; ++i) {
        if (norm3(sub3(pts[i], p)) < min_d) return true;
    }
    return false;
}

}  // namespace

CoordSet make_coil(int n, Rng& rng) {
    // Fixed-step random walk with bond turn angles in [72, 108] degrees and
    // a 0.30 nm excluded-volume check against non-adjacent residues.
    CoordSet c;
    c.pos.push_back({0, 0, 0});
    if (n == 1) return c;
    Vec3 dir = random_unit(rng);
    c.pos.push_back(scale3(dir, kCaSpacingNm));
    while (c.length() < n) {
        bool placed = false;
        for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
            double theta = rng.uniform(72.0, 108.0) * M_PI / 180.0;
            Vec3 axis = any_orthogonal(dir);
            double roll = rng.uniform(0.0, 2.0 * M_PI);
            // rotate `axis` around dir by roll to sample the turn plane
            Vec3 k = dir;
            Vec3 u = add3(scale3(axis, std::cos(roll)),
                          scale3(cross3(k, axis), std::sin(roll)));
            Vec3 nd = add3(scale3(dir, std::cos(theta)), scale3(u, std::sin(theta)));
            nd = normalize3(nd);
            Vec3 p = add3(c.pos.back(), scale3(nd, kCaSpacingNm));
            if (too_close(c.pos, p, 1, 0.30)) continue;
            c.pos.push_back(p);
            dir = nd;
            placed = true;
        }
        if (!placed) {
            // stuck: back off a couple of residues and retry
            int drop = std::min(2, c.length() - 2);
            for (int i = 0; i < drop; ++i) c.pos.pop_back();
            dir = normalize3(sub3(c.pos.back(), c.pos[c.length() - 2]));
        }
    }
    return c;
}

namespace {

/// Append `seg` (canonical pose) to `chain`, randomly reoriented, entering
/// from the current endpoint with one exact 0.38 nm step. Rejects a few
/// badly overlapping placements before accepting.
void append_segment(std::vector<Vec3>& chain, const CoordSet& seg, Rng& rng) {
    if (seg.length() == 0) return;
    for (int attempt = 0;; ++attempt) {
        Mat3 r = random_rotation(rng);
        CoordSet rs = apply_rotation(seg, r);
        Vec3 base;
        if (chain.empty()) {
            base = {0, 0, 0};
        } else {
            Vec3 step = random_unit(rng);
            base = add3(chain.back(), scale3(step, kCaSpacingNm));
        }
        Vec3 shift = sub3(base, rs.pos[0]);
        bool ok = true;
        if (attempt < 20 && !chain.empty()) {
            for (const Vec3& p : rs.pos) {
                if (too_close(chain, add3(p, shift), 1, 0.25)) {
                    ok = false;
                    break;
                }
            }
        }
        if (!ok) continue;
        for (const Vec3& p : rs.pos) chain.push_back(add3(p, shift));
        return;
    }
}

CoordSet make_sheet_stack(int n, Rng& rng) {
    // Hairpin stack assembled from exact 0.38 nm steps: zigzag strands
    // alternating direction, joined by two-step turns that advance 0.5 nm
    // across the sheet.
    const double a = 0.33;
    const double h = 0.5 * std::sqrt(kCaSpacingNm * kCaSpacingNm - a * a);
    const double c = std::sqrt(kCaSpacingNm * kCaSpacingNm - 0.05 * 0.05 - 0.25 * 0.25);
    const int strand_len = static_cast<int>(rng.uniform_int(8, 14));
    std::vector<Vec3> pts{{0, 0, 0}};
    int dir = 1, phase = 0;
    int in_strand = 1;
    while (static_cast<int>(pts.size()) < n) {
        if (in_strand < strand_len) {
            Vec3 step{dir * a, 0.0, (phase % 2 == 0) ? 2 * h : -2 * h};
            pts.push_back(add3(pts.back(), step));
            ++phase;
            ++in_strand;
        } else {
            pts.push_back(add3(pts.back(), Vec3{0.05 * dir, 0.25, c}));
            if (static_cast<int>(pts.size()) >= n) break;
            pts.push_back(add3(pts.back(), Vec3{0.05 * dir, 0.25, -c}));
            dir = -dir;
            phase = 0;
            in_strand = 0;
        }
    }
    pts.resize(n);
    CoordSet out;
    out.pos = std::move(pts);
    return out;
}

}  // namespace

CoordSet make_chain(ChainClass cls, int n, Rng& rng) {
    std::vector<Vec3> chain;
    switch (cls) {
        case ChainClass::AllHelix: {
            int remaining = n;
            while (remaining > 0) {
                int seg = remaining <= 60 ? remaining
                                          : static_cast<int>(rng.uniform_int(40, 56));
                append_segment(chain, make_helix(seg), rng);
                remaining -= seg;
            }
            break;
        }
        case ChainClass::AllSheet: {
            CoordSet s = make_sheet_stack(n, rng);
            Mat3 r = random_rotation(rng);
            s = apply_rotation(s, r);
            chain = std::move(s.pos);
            break;
        }
        case ChainClass::Mixed: {
            int remaining = n;
            bool helix_turn = rng.uniform() < 0.5;
            while (remaining > 0) {
                int seg = helix_turn ? static_cast<int>(rng.uniform_int(8, 16))
                                     : static_cast<int>(rng.uniform_int(6, 12));
                seg = std::min(seg, remaining);
                append_segment(chain, helix_turn ? make_helix(seg) : make_strand(seg), rng);
                remaining -= seg;
                if (remaining > 0) {
                    int link = std::min(remaining, static_cast<int>(rng.uniform_int(2, 3)));
                    append_segment(chain, make_coil(link, rng), rng);
                    remaining -= link;
                }
                helix_turn = !helix_turn;
            }
            break;
        }
        case ChainClass::Coil: {
            CoordSet s = make_coil(n, rng);
            chain = std::move(s.pos);
            break;
        }
    }
    CoordSet out;
    out.pos = std::move(chain);
    out.pos.resize(n);
    if (cls == ChainClass::AllHelix || cls == ChainClass::Mixed) {
        Mat3 r = random_rotation(rng);
        out = apply_rotation(out, r);
    }
    return center(out);
}

std::vector<LabeledChain> synth_corpus(int n, const CorpusConfig& cfg, uint64_t seed) {
    if (cfg.max_len > kMaxLength) {
        throw std::invalid_argument("synth_corpus: max_len exceeds " +
                                    std::to_string(kMaxLength));
    }
    double total = cfg.class_mix[0] + cfg.class_mix[1] + cfg.class_mix[2] + cfg.class_mix[3];
    std::vector<LabeledChain> out;
    out.reserve(n);
    Rng base(seed);
    for (int i = 0; i < n; ++i) {
        Rng rng = base.derive(static_cast<uint64_t>(i));
        double u = rng.uniform() * total;
        int cls = 0;
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) {
            acc += cfg.class_mix[k];
            if (u < acc) {
                cls = k;
                break;
            }
        }
        int len = static_cast<int>(rng.uniform_int(cfg.min_len, cfg.max_len));
        LabeledChain lc;
        lc.coords = make_chain(static_cast<ChainClass>(cls), len, rng);
        lc.label = cls;
        out.push_back(std::move(lc));
    }
    return out;
}

// ---- Frechet ---------------------------------------------------------------

double frechet_distance(const std::vector<std::vector<double>>& feats_a,
                        const std::vector<std::vector<double>>& feats_b) {
    if (feats_a.size() < 2 || feats_b.size() < 2) {
        throw std::invalid_argument("frechet_distance: need >= 2 samples per side");
    }
    const int d = static_cast<int>(feats_a[0].size());
    for (const auto& f : feats_a) {
        if (static_cast<int>(f.size()) != d) {
            throw std::invalid_argument("frechet_distance: ragged features");
        }
    }
    for (const auto& f : feats_b) {
        if (static_cast<int>(f.size()) != d) {
            throw std::invalid_argument("frechet_distance: feature dimension mismatch");
        }
    }
    auto stats = [d](const std::vector<std::vector<double>>& feats,
                     std::vector<double>& mu, std::vector<double>& cov) {
        const double n = static_cast<double>(feats.size());
        mu.assign(d, 0.0);
        for (const auto& f : feats) {
            for (int i = 0; i < d; ++i) mu[i] += f[i];
        }
        for (int i = 0; i < d; ++i) mu[i] /= n;
        cov.assign(static_cast<size_t>(d) * d, 0.0);
        for (const auto& f : feats) {
            for (int i = 0; i < d; ++i) {
                const double di = f[i] - mu[i];
                for (int j = i; j < d; ++j) {
                    cov[static_cast<size_t>(i) * d + j] += di * (f[j] - mu[j]);
                }
            }
        }
        for (int i = 0; i < d; ++i) {
            for (int j = i; j < d; ++j) {
                cov[static_cast<size_t>(i) * d + j] /= n;
                cov[static_cast<size_t>(j) * d + i] = cov[static_cast<size_t>(i) * d + j];
            }
        }
    };
    std::vector<double> mu1, mu2, s1, s2;
    stats(feats_a, mu1, s1);
    stats(feats_b, mu2, s2);

    auto matmul_d = [d](const std::vector<double>& x, const std::vector<double>& y) {
        std::vector<double> z(static_cast<size_t>(d) * d, 0.0);
        for (int i = 0; i < d; ++i) {
            for (int k = 0; k < d; ++k) {
                const double xv = x[static_cast<size_t>(i) * d + k];
                if (xv == 0.0) continue;
                for (int j = 0; j < d; ++j) {
                    z[static_cast<size_t>(i) * d + j] += xv * y[static_cast<size_t>(k) * d + j];
                }
            }
        }
        return z;
    };
    auto sqrt_psd = [d](std::vector<double> m) {
        std::vector<double> ev, vecs;
        sym_eig(m, d, ev, vecs);
        std::vector<double> out(static_cast<size_t>(d) * d, 0.0);
        for (int c = 0; c < d; ++c) {
            const double s = std::sqrt(std::max(ev[c], 0.0));
            for (int i = 0; i < d; ++i) {
                const double vi = vecs[static_cast<size_t>(i) * d + c] * s;
                for (int j = 0; j < d; ++j) {
                    out[static_cast<size_t>(i) * d + j] +=
                        vi * vecs[static_cast<size_t>(j) * d + c];
                }
            }
        }
        return out;
    };

    // Tr((S1 S2)^{1/2}) = Tr((sqrt(S1) S2 sqrt(S1))^{1/2}), the symmetric form.
    std::vector<double> r1 = sqrt_psd(s1);
    std::vector<double> inner = matmul_d(matmul_d(r1, s2), r1);
    std::vector<double> ev, vecs;
    sym_eig(inner, d, ev, vecs);
    double tr_sqrt = 0.0;
    for (double e : ev) tr_sqrt += std::sqrt(std::max(e, 0.0));

    double mean_term = 0.0, tr1 = 0.0, tr2 = 0.0;
    for (int i = 0; i < d; ++i) {
        const double dm = mu1[i] - mu2[i];
        mean_term += dm * dm;
        tr1 += s1[static_cast<size_t>(i) * d + i];
        tr2 += s2[static_cast<size_t>(i) * d + i];
    }
    return std::max(mean_term + tr1 + tr2 - 2.0 * tr_sqrt, 0.0);
}

// ---- file I/O ---------------------------------------------------------------

void write_coords(const CoordSet& c, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_coords: cannot open " + path);
    f.precision(9);
    for (int i = 0; i < c.length(); ++i) {
        f << (i + 1) << " " << c.pos[i][0] << " " << c.pos[i][1] << " " << c.pos[i][2]
          << "\n";
    }
    if (!f) throw std::runtime_error("write_coords: write failed for " + path);
}

CoordSet read_coords(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_coords: cannot open " + path);
    CoordSet c;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream is(line);
        int idx;
        double x, y, z;
        if (!(is >> idx >> x >> y >> z)) {
            throw std::runtime_error(path + ": malformed coordinate line " +
                                     std::to_string(lineno));
        }
        c.pos.push_back({x, y, z});
    }
    if (c.length() == 0) throw std::runtime_error(path + ": no residues");
    return c;
}

CoordSet read_pdb_ca(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_pdb_ca: cannot open " + path);
    CoordSet c;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.rfind("ATOM", 0) != 0 || line.size() < 54) continue;
        std::string atom = line.substr(12, 4);
        // trim
        atom.erase(0, atom.find_first_not_of(' '));
        atom.erase(atom.find_last_not_of(' ') + 1);
        if (atom != "CA") continue;
        const char alt = line[16];
        if (alt != ' ' && alt != 'A') continue;
        try {
            double x = std::stod(line.substr(30, 8));
            double y = std::stod(line.substr(38, 8));
            double z = std::stod(line.substr(46, 8));
            c.pos.push_back({x / 10.0, y / 10.0, z / 10.0});  // A -> nm
        } catch (const std::exception&) {
            throw std::runtime_error(path + ": malformed ATOM record at line " +
                                     std::to_string(lineno));
        }
    }
    if (c.length() == 0) throw std::runtime_error(path + ": no CA atoms");
    return c;
}

Tensor to_tensor(const CoordSet& c) {
    std::vector<float> v(static_cast<size_t>(c.length()) * 3);
    for (int i = 0; i < c.length(); ++i) {
        for (int j = 0; j < 3; ++j) v[static_cast<size_t>(i) * 3 + j] =
            static_cast<float>(c.pos[i][j]);
    }
    return Tensor::from({c.length(), 3}, std::move(v));
}

CoordSet from_tensor(const Tensor& t) {
    if (t.rank() != 2 || t.dim(1) != 3) {
        throw std::invalid_argument("from_tensor: expected [L,3], got " +
                                    shape_str(t.shape()));
    }
    CoordSet c;
    c.pos.resize(t.dim(0));
    const float* v = t.data();
    for (int i = 0; i < t.dim(0); ++i) {
        c.pos[i] = {v[i * 3], v[i * 3 + 1], v[i * 3 + 2]};
    }
    return c;
}

}  // namespace chaintok::geometry
