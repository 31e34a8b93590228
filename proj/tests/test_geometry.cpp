#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "chaintok/geometry.hpp"

using namespace chaintok;
using namespace chaintok::geometry;

TEST_SUITE_BEGIN("geometry");

namespace {

double vnorm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

Vec3 vsub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

CoordSet translated(const CoordSet& c, const Vec3& t) {
    CoordSet out = c;
    for (Vec3& p : out.pos) {
        p[0] += t[0];
        p[1] += t[1];
        p[2] += t[2];
    }
    return out;
}

/// Independent superposition via Horn's quaternion method (power iteration
/// on the 4x4 profile matrix); used as the oracle for tm_score.
Mat3 horn_rotation(const CoordSet& a, const CoordSet& b) {
    double s[3][3] = {};
    for (int i = 0; i < a.length(); ++i) {
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) s[r][c] += a.pos[i][r] * b.pos[i][c];
        }
    }
    const double k[4][4] = {
        {s[0][0] + s[1][1] + s[2][2], s[1][2] - s[2][1], s[2][0] - s[0][2], s[0][1] - s[1][0]},
        {s[1][2] - s[2][1], s[0][0] - s[1][1] - s[2][2], s[0][1] + s[1][0], s[2][0] + s[0][2]},
        {s[2][0] - s[0][2], s[0][1] + s[1][0], -s[0][0] + s[1][1] - s[2][2], s[1][2] + s[2][1]},
        {s[0][1] - s[1][0], s[2][0] + s[0][2], s[1][2] + s[2][1], -s[0][0] - s[1][1] + s[2][2]}};
    double shift = 1.0;
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) shift += std::abs(k[i][j]);
    }
    double q[4] = {1.0, 0.1, 0.2, 0.3};
    for (int it = 0; it < 2000; ++it) {
        double next[4];
        for (int i = 0; i < 4; ++i) {
            next[i] = shift * q[i];
            for (int j = 0; j < 4; ++j) next[i] += k[i][j] * q[j];
        }
        double norm = 0.0;
        for (double v : next) norm += v * v;
        norm = std::sqrt(norm);
        for (int i = 0; i < 4; ++i) q[i] = next[i] / norm;
    }
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    return Mat3{{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
                 {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
                 {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

double tm_via_horn(const CoordSet& a, const CoordSet& b) {
    CoordSet ac = center(a), bc = center(b);
    Mat3 r = horn_rotation(ac, bc);
    std::vector<double> d(ac.length());
    for (int i = 0; i < ac.length(); ++i) {
        Vec3 ra{r[0][0] * ac.pos[i][0] + r[0][1] * ac.pos[i][1] + r[0][2] * ac.pos[i][2],
                r[1][0] * ac.pos[i][0] + r[1][1] * ac.pos[i][1] + r[1][2] * ac.pos[i][2],
                r[2][0] * ac.pos[i][0] + r[2][1] * ac.pos[i][1] + r[2][2] * ac.pos[i][2]};
        d[i] = 10.0 * vnorm(vsub(ra, bc.pos[i]));
    }
    return tm_from_distances(d, ac.length());
}

}  // namespace

TEST_CASE("center basics") {
    CoordSet single;
    single.pos = {{1, 2, 3}};
    CoordSet c = center(single);
    CHECK(vnorm(c.pos[0]) < 1e-12);

    CoordSet two;
    two.pos = {{0, 0, 0}, {2, 0, 0}};
    CoordSet c2 = center(two);
    CHECK(c2.pos[0][0] == doctest::Approx(-1.0));
    CHECK(c2.pos[1][0] == doctest::Approx(1.0));

    // idempotence
    CoordSet c3 = center(c2);
    for (int i = 0; i < 2; ++i) {
        CHECK(vnorm(vsub(c3.pos[i], c2.pos[i])) < 1e-12);
    }
}

TEST_CASE("random rotations are orthogonal with unit determinant") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        Mat3 r = random_rotation(rng);
        // R^T R = I
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                double acc = 0.0;
                for (int k = 0; k < 3; ++k) acc += r[k][i] * r[k][j];
                CHECK(std::abs(acc - (i == j ? 1.0 : 0.0)) < 1e-6);
            }
        }
        const double det =
            r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) -
            r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
            r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        CHECK(det == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("rotation ensemble mean vanishes (uniform SO(3))") {
    Rng rng(99);
    double mean[3][3] = {};
    const int n = 10000;
    for (int t = 0; t < n; ++t) {
        Mat3 r = random_rotation(rng);
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) mean[i][j] += r[i][j];
        }
    }
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) CHECK(std::abs(mean[i][j] / n) < 0.05);
    }
}

TEST_CASE("fixed seed reproduces the rotation") {
    Rng a(5), b(5);
    Mat3 ra = random_rotation(a), rb = random_rotation(b);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) CHECK(ra[i][j] == rb[i][j]);
    }
}

TEST_CASE("kabsch rmsd vanishes under rigid motion") {
    Rng rng(21);
    CoordSet a = make_helix(24);
    Mat3 r = random_rotation(rng);
    CoordSet b = translated(apply_rotation(a, r), {1.0, -2.0, 0.5});
    CHECK(kabsch_rmsd(a, b) < 1e-5);
    CHECK(kabsch_rmsd(a, a) == doctest::Approx(0.0));
}

TEST_CASE("kabsch rmsd matches a 1-degree rotation grid search") {
    // unit segment vs the same segment with one endpoint displaced 0.2 off-axis
    CoordSet a, b;
    a.pos = {{0, 0, 0}, {1, 0, 0}};
    b.pos = {{0, 0, 0}, {1, 0.2, 0}};
    const double lib = kabsch_rmsd(a, b);

    CoordSet ac = center(a), bc = center(b);
    const Vec3 u = ac.pos[1];
    const Vec3 w = bc.pos[1];
    const double deg = M_PI / 180.0;
    std::vector<double> cs(360), sn(360);
    for (int i = 0; i < 360; ++i) {
        cs[i] = std::cos(i * deg);
        sn[i] = std::sin(i * deg);
    }
    double best = 1e300;
    // z-y-z Euler grid at 1 degree; RMSD over the symmetric +-u pair reduces
    // to |R u - w|
    for (int a1 = 0; a1 < 360; ++a1) {
        for (int b1 = 0; b1 <= 180; ++b1) {
            for (int c1 = 0; c1 < 360; ++c1) {
                double x = u[0], y = u[1], z = u[2];
                double x1 = cs[c1] * x - sn[c1] * y, y1 = sn[c1] * x + cs[c1] * y;
                const double cb = std::cos(b1 * deg), sb = std::sin(b1 * deg);
                double x2 = cb * x1 + sb * z, z2 = -sb * x1 + cb * z;
                double x3 = cs[a1] * x2 - sn[a1] * y1, y3 = sn[a1] * x2 + cs[a1] * y1;
                const double dx = x3 - w[0], dy = y3 - w[1], dz = z2 - w[2];
                const double d2 = dx * dx + dy * dy + dz * dz;
                if (d2 < best) best = d2;
            }
        }
    }
    const double grid = std::sqrt(best);
    CHECK(lib == doctest::Approx(grid).epsilon(1e-3));
}

TEST_CASE("tm score basics") {
    CoordSet a = make_helix(40);
    CHECK(tm_score(a, a) == doctest::Approx(1.0));

    // all distances equal to d0 give exactly one half
    const double d0 = 1.24 * std::cbrt(40.0 - 15.0) - 1.8;
    std::vector<double> d(40, d0);
    CHECK(tm_from_distances(d, 40) == doctest::Approx(0.5));
}

TEST_CASE("tm score agrees with an independent superposition") {
    Rng rng(31);
    CoordSet a = make_coil(30, rng);
    CoordSet b = make_coil(30, rng);
    CHECK(tm_score(a, b) == doctest::Approx(tm_via_horn(a, b)).epsilon(1e-6));
    // symmetry under swapping (identity correspondence)
    CHECK(std::abs(tm_score(a, b) - tm_score(b, a)) < 1e-9);
}

TEST_CASE("tm and rmsd reject length mismatches") {
    CoordSet a = make_helix(10), b = make_helix(12);
    CHECK_THROWS_AS(tm_score(a, b), std::invalid_argument);
    CHECK_THROWS_AS(kabsch_rmsd(a, b), std::invalid_argument);
}

TEST_CASE("sse labels ideal geometry") {
    CoordSet helix = make_helix(48);
    auto hl = assign_sse(helix);
    CHECK(sse_fraction(hl, Sse::Helix) >= 0.9);

    CoordSet strand = make_strand(30);
    auto sl = assign_sse(strand);
    CHECK(sse_fraction(sl, Sse::Sheet) >= 0.9);

    // random self-avoiding coils carry little structure signal
    Rng rng(77);
    double frac = 0.0;
    const int trials = 20;
    for (int t = 0; t < trials; ++t) {
        CoordSet coil = make_coil(40, rng);
        auto cl = assign_sse(coil);
        frac += sse_fraction(cl, Sse::Helix) + sse_fraction(cl, Sse::Sheet);
    }
    CHECK(frac / trials < 0.30);
}

TEST_CASE("sse of short chains is all coil") {
    CoordSet tiny = make_helix(4);
    auto labels = assign_sse(tiny);
    REQUIRE(labels.size() == 4);
    for (auto l : labels) CHECK(l == Sse::Coil);
}

TEST_CASE("synthetic corpus construction invariants") {
    CorpusConfig cfg;
    cfg.min_len = 20;
    cfg.max_len = 64;
    auto corpus = synth_corpus(40, cfg, 1234);
    REQUIRE(corpus.size() == 40);
    for (const auto& lc : corpus) {
        REQUIRE(lc.coords.length() >= 20);
        REQUIRE(lc.coords.length() <= 256);
        // centered
        Vec3 mu = centroid(lc.coords);
        CHECK(vnorm(mu) < 1e-6);
        // exact spacing, no coincident consecutive points
        for (int i = 0; i + 1 < lc.coords.length(); ++i) {
            const double d = vnorm(vsub(lc.coords.pos[i + 1], lc.coords.pos[i]));
            CHECK(std::abs(d - 0.38) < 1e-6);
        }
    }
    // deterministic
    auto again = synth_corpus(40, cfg, 1234);
    for (size_t i = 0; i < corpus.size(); ++i) {
        REQUIRE(again[i].label == corpus[i].label);
        REQUIRE(again[i].coords.length() == corpus[i].coords.length());
        for (int j = 0; j < corpus[i].coords.length(); ++j) {
            CHECK(again[i].coords.pos[j][0] == corpus[i].coords.pos[j][0]);
        }
    }
}

TEST_CASE("all-helix class labels as helix") {
    Rng rng(5);
    CoordSet chain = make_chain(ChainClass::AllHelix, 48, rng);
    auto labels = assign_sse(chain);
    CHECK(sse_fraction(labels, Sse::Helix) >= 0.9);
}

TEST_CASE("frechet distance closed forms") {
    Rng rng(8);
    std::vector<std::vector<double>> a, b;
    for (int i = 0; i < 200; ++i) {
        a.push_back({rng.normal(), rng.normal()});
    }
    b = a;
    CHECK(frechet_distance(a, b) < 1e-6);

    // pure translation: distance is |v|^2
    std::vector<std::vector<double>> shifted;
    for (const auto& f : a) shifted.push_back({f[0] + 1.0, f[1] - 2.0});
    CHECK(frechet_distance(a, shifted) == doctest::Approx(5.0).epsilon(1e-6));
}

TEST_CASE("frechet distance on 1-d gaussians matches the closed form") {
    Rng rng(44);
    const int n = 100000;
    std::vector<std::vector<double>> a(n), b(n);
    for (int i = 0; i < n; ++i) {
        a[i] = {rng.normal()};
        b[i] = {rng.normal() + 3.0};
    }
    const double fd = frechet_distance(a, b);
    // oracle: (mu1-mu2)^2 + (s1-s2)^2 from the sample statistics themselves
    auto stats = [&](const std::vector<std::vector<double>>& f) {
        double mu = 0.0;
        for (const auto& x : f) mu += x[0];
        mu /= f.size();
        double var = 0.0;
        for (const auto& x : f) var += (x[0] - mu) * (x[0] - mu);
        return std::make_pair(mu, std::sqrt(var / f.size()));
    };
    auto [m1, s1] = stats(a);
    auto [m2, s2] = stats(b);
    const double oracle = (m1 - m2) * (m1 - m2) + (s1 - s2) * (s1 - s2);
    CHECK(fd == doctest::Approx(oracle).epsilon(1e-9));
    CHECK(std::abs(fd - 9.0) < 0.2);
}

TEST_CASE("frechet dimension mismatch throws") {
    std::vector<std::vector<double>> a{{1.0, 2.0}, {0.0, 1.0}};
    std::vector<std::vector<double>> b{{1.0}, {2.0}};
    CHECK_THROWS_AS(frechet_distance(a, b), std::invalid_argument);
}

TEST_CASE("coordinate file round trip and pdb reader") {
    namespace fs = std::filesystem;
    CoordSet c = center(make_helix(12));
    const std::string path = (fs::temp_directory_path() / "ctk_coords.txt").string();
    write_coords(c, path);
    CoordSet back = read_coords(path);
    REQUIRE(back.length() == 12);
    for (int i = 0; i < 12; ++i) {
        CHECK(vnorm(vsub(back.pos[i], c.pos[i])) < 1e-7);
    }
    std::remove(path.c_str());

    const std::string pdb = (fs::temp_directory_path() / "ctk_test.pdb").string();
    {
        std::ofstream f(pdb);
        f << "HEADER    TEST\n";
        f << "ATOM      1  N   ALA A   1      11.104   6.134  -6.504  1.00  0.00           N\n";
        f << "ATOM      2  CA  ALA A   1      11.639   6.071  -5.147  1.00  0.00           C\n";
        f << "ATOM      3  C   ALA A   1      12.420   7.340  -4.850  1.00  0.00           C\n";
        f << "ATOM      4  CA  GLY A   2      14.280   9.000  -4.300  1.00  0.00           C\n";
        f << "END\n";
    }
    CoordSet ca = read_pdb_ca(pdb);
    REQUIRE(ca.length() == 2);
    CHECK(ca.pos[0][0] == doctest::Approx(1.1639));  // Angstrom -> nm
    CHECK(ca.pos[1][2] == doctest::Approx(-0.43));
    std::remove(pdb.c_str());
}

TEST_CASE("malformed coordinate file names the line") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "ctk_bad_coords.txt").string();
    {
        std::ofstream f(path);
        f << "1 0.0 0.0 0.0\n";
        f << "2 nonsense here\n";
    }
    try {
        read_coords(path);
        FAIL("expected throw");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_SUITE_END();
