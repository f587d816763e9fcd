#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "isd/metrics.hpp"
#include "isd/objectives.hpp"
#include "testutil.hpp"

using isd::Shape;
using isd::Tensor;
using testutil::fd_check;
using testutil::random_tensor;

namespace {
using Td = Tensor<double>;

// Gram-Schmidt orthonormalization of a random square matrix.
Td random_orthogonal(std::size_t n, isd::rng::Xoshiro256& g) {
    std::vector<std::vector<double>> rows(n, std::vector<double>(n));
    for (auto& r : rows)
        for (auto& x : r) x = g.uniform(-1.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            double dot = 0;
            for (std::size_t k = 0; k < n; ++k) dot += rows[i][k] * rows[j][k];
            for (std::size_t k = 0; k < n; ++k) rows[i][k] -= dot * rows[j][k];
        }
        double norm = 0;
        for (std::size_t k = 0; k < n; ++k) norm += rows[i][k] * rows[i][k];
        norm = std::sqrt(norm);
        for (std::size_t k = 0; k < n; ++k) rows[i][k] /= norm;
    }
    std::vector<double> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return Td::from({n, n}, std::move(flat));
}

}  // namespace

TEST_CASE("ssim identity and constant-vs-constant closed forms") {
    auto g = isd::rng::substream(1, isd::rng::kTagTest);
    const Td x = random_tensor({3, 6, 6}, g, 0.0, 1.0, false);
    CHECK(isd::ssim(x, x).item() == 1.0);

    const Td a = Td::full({2, 4}, 1.0);
    const Td b = Td::zeros({2, 4});
    const double expect = isd::kSsimC1 / (1.0 + isd::kSsimC1);
    CHECK(isd::ssim(a, b).item() == doctest::Approx(expect).epsilon(1e-9));
    CHECK(expect == doctest::Approx(9.999e-5).epsilon(1e-3));
}

TEST_CASE("ssim is symmetric to machine precision") {
    auto g = isd::rng::substream(2, isd::rng::kTagTest);
    for (int t = 0; t < 10; ++t) {
        const Td a = random_tensor({3, 5, 5}, g, 0.0, 1.0, false);
        const Td b = random_tensor({3, 5, 5}, g, 0.0, 1.0, false);
        CHECK(isd::ssim(a, b).item() == isd::ssim(b, a).item());
    }
}

TEST_CASE("ssim approaches 1 monotonically as noise shrinks") {
    auto g = isd::rng::substream(3, isd::rng::kTagTest);
    const Td a = random_tensor({3, 6, 6}, g, 0.2, 0.8, false);
    const Td noise = random_tensor({3, 6, 6}, g, -1.0, 1.0, false);
    double prev = -2.0;
    for (const double eps : {0.3, 0.1, 0.03, 0.01, 0.003, 0.0}) {
        const Td noisy = isd::add(a, isd::scale(noise, eps));
        const double s = isd::ssim(a, noisy).item();
        CHECK(s >= prev);
        prev = s;
    }
    CHECK(prev == 1.0);
}

TEST_CASE("ssim_loss composition (Eq.-14 shape) and range") {
    auto g = isd::rng::substream(4, isd::rng::kTagTest);
    std::vector<Td> originals, recon_t, recon_p;
    for (int i = 0; i < 3; ++i) {
        originals.push_back(random_tensor({3, 4, 4}, g, 0.0, 1.0, false));
        recon_t.push_back(originals.back());
        recon_p.push_back(random_tensor({3, 4, 4}, g, 0.0, 1.0, false));
    }
    // Perfect reconstruction on both branches -> 0.
    const double zero = isd::ssim_loss<double>(originals, originals, originals).item();
    CHECK(zero == doctest::Approx(0.0).epsilon(1e-9));

    // One branch perfect: loss is the mean 1-SSIM of the other branch.
    double expect = 0.0;
    for (int i = 0; i < 3; ++i) expect += (1.0 - isd::ssim(originals[i], recon_p[i]).item()) / 3.0;
    const double loss = isd::ssim_loss<double>(originals, recon_t, recon_p).item();
    CHECK(loss == doctest::Approx(expect).epsilon(1e-9));
    CHECK(loss >= 0.0);
    CHECK(loss <= 4.0);
}

TEST_CASE("contrastive loss: single sample is exactly zero") {
    const Td f = Td::from({1, 4}, {0.3, -0.2, 0.9, 0.1});
    CHECK(isd::contrastive_loss(f, f).item() == 0.0);
}

TEST_CASE("contrastive loss: B=2 orthonormal identity closed form") {
    const Td eye = Td::from({2, 2}, {1, 0, 0, 1});
    const double loss = isd::contrastive_loss(eye, eye).item();
    CHECK(loss == doctest::Approx(0.067659).epsilon(1e-4));
}

TEST_CASE("contrastive loss: zero-norm row is degenerate") {
    const Td f = Td::from({2, 2}, {1, 0, 0, 0});
    CHECK_THROWS_AS(isd::contrastive_loss(f, f), isd::DomainError);
}

TEST_CASE("contrastive loss is invariant under a common rotation") {
    auto g = isd::rng::substream(5, isd::rng::kTagTest);
    for (int t = 0; t < 5; ++t) {
        const Td ft = random_tensor({4, 6}, g, -1.0, 1.0, false);
        const Td fp = random_tensor({4, 6}, g, -1.0, 1.0, false);
        const Td q = random_orthogonal(6, g);
        const double base = isd::contrastive_loss(ft, fp).item();
        const double rotated = isd::contrastive_loss(isd::matmul(ft, q), isd::matmul(fp, q)).item();
        CHECK(rotated == doctest::Approx(base).epsilon(1e-8));
    }
}

TEST_CASE("contrastive loss: diagonal pairing beats a permuted pairing") {
    const std::size_t b = 4;
    std::vector<double> eye(b * b, 0.0);
    for (std::size_t i = 0; i < b; ++i) eye[i * b + i] = 1.0;
    const Td f = Td::from({b, b}, std::move(eye));
    // Cyclic row permutation of f.
    std::vector<double> perm(b * b, 0.0);
    for (std::size_t i = 0; i < b; ++i) perm[i * b + (i + 1) % b] = 1.0;
    const Td fperm = Td::from({b, b}, std::move(perm));
    CHECK(isd::contrastive_loss(f, f).item() < isd::contrastive_loss(f, fperm).item());
}

TEST_CASE("total loss is a bit-exact sum and zero in the perfect B=1 case") {
    auto g = isd::rng::substream(6, isd::rng::kTagTest);
    std::vector<Td> originals = {random_tensor({3, 4, 4}, g, 0.0, 1.0, false)};
    std::vector<Td> recon_t = {originals[0]}, recon_p = {originals[0]};
    const Td f = Td::from({1, 3}, {0.2, 0.4, -0.1});
    const auto tl = isd::total_loss<double>(originals, recon_t, recon_p, f, f);
    CHECK(tl.report.total == tl.report.ssim_loss + tl.report.contrastive_loss);
    CHECK(tl.report.total == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(tl.report.ssim_t == doctest::Approx(1.0).epsilon(1e-9));

    std::vector<Td> recon_q = {random_tensor({3, 4, 4}, g, 0.0, 1.0, false)};
    const auto tl2 = isd::total_loss<double>(originals, recon_t, recon_q, f, f);
    CHECK(tl2.report.total == tl2.report.ssim_loss + tl2.report.contrastive_loss);
}

TEST_CASE("windowed ssim: identity, range, fd") {
    auto g = isd::rng::substream(9, isd::rng::kTagTest);
    const Td x = random_tensor({3, 16, 16}, g, 0.0, 1.0, false);
    CHECK(isd::ssim_windowed(x, x).item() == doctest::Approx(1.0).epsilon(1e-9));

    const Td y = random_tensor({3, 16, 16}, g, 0.0, 1.0, false);
    const double s = isd::ssim_windowed(x, y).item();
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
    CHECK(isd::ssim_windowed(x, y).item() == isd::ssim_windowed(y, x).item());

    CHECK_THROWS_AS(isd::ssim_windowed(random_tensor({3, 8, 8}, g, 0.0, 1.0, false),
                                       random_tensor({3, 8, 8}, g, 0.0, 1.0, false)),
                    isd::ShapeError);  // window larger than the image

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto gg = isd::rng::substream(seed + 800, isd::rng::kTagTest);
        Td a = random_tensor({2, 7, 7}, gg, 0.1, 0.9);
        Td b = random_tensor({2, 7, 7}, gg, 0.1, 0.9);
        fd_check([&] { return isd::ssim_windowed(a, b, 5, 1.5); }, {&a, &b});
    }

    // The loss plumbing accepts the windowed mode.
    std::vector<Td> orig = {x}, rec = {y};
    const double wl = isd::ssim_loss<double>(orig, rec, rec, isd::SsimMode::Windowed).item();
    CHECK(wl == doctest::Approx(2.0 * (1.0 - s)).epsilon(1e-9));
}

TEST_CASE("fd: ssim, ssim_loss, contrastive") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto g = isd::rng::substream(seed + 700, isd::rng::kTagTest);
        Td a = random_tensor({3, 4, 4}, g, 0.1, 0.9);
        Td b = random_tensor({3, 4, 4}, g, 0.1, 0.9);
        fd_check([&] { return isd::ssim(a, b); }, {&a, &b});

        Td ft = random_tensor({3, 5}, g, -1.0, 1.0);
        Td fp = random_tensor({3, 5}, g, -1.0, 1.0);
        fd_check([&] { return isd::contrastive_loss(ft, fp); }, {&ft, &fp});
    }
}

// --- evaluation metrics ---

namespace {

// Test-side oracle: literal set arithmetic over explicit coordinate lists.
double dice_oracle(const std::vector<int>& a, const std::vector<int>& b) {
    std::size_t inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += a[i] != 0;
        nb += b[i] != 0;
        inter += a[i] != 0 && b[i] != 0;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * double(inter) / double(na + nb);
}

double hausdorff_oracle(const std::vector<int>& a, const std::vector<int>& b, std::size_t w) {
    auto pts = [&](const std::vector<int>& m) {
        std::vector<std::pair<double, double>> out;
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m[i]) out.emplace_back(double(i / w), double(i % w));
        return out;
    };
    const auto pa = pts(a), pb = pts(b);
    auto directed = [](const auto& from, const auto& to) {
        double worst = 0;
        for (const auto& p : from) {
            double best = 1e300;
            for (const auto& q : to)
                best = std::min(best, std::hypot(p.first - q.first, p.second - q.second));
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::max(directed(pa, pb), directed(pb, pa));
}

isd::Tensor<float> mask_from(const std::vector<int>& bits, std::size_t h, std::size_t w) {
    std::vector<float> v(bits.begin(), bits.end());
    return isd::Tensor<float>::from({h, w}, std::move(v));
}

}  // namespace

TEST_CASE("dice spot values") {
    const auto a = mask_from({1, 1, 0, 1, 0, 0, 0, 0, 0}, 3, 3);
    CHECK(isd::metrics::dice(a, a) == 1.0);
    const auto b = mask_from({0, 0, 1, 0, 1, 1, 0, 0, 0}, 3, 3);
    CHECK(isd::metrics::dice(a, b) == 0.0);
    const auto c = mask_from({1, 1, 1, 0, 0, 0, 0, 0, 0}, 3, 3);
    const auto d = mask_from({0, 1, 1, 1, 0, 0, 0, 0, 0}, 3, 3);
    CHECK(isd::metrics::dice(c, d) == doctest::Approx(4.0 / 6.0));
    const auto empty = mask_from(std::vector<int>(9, 0), 3, 3);
    CHECK(isd::metrics::dice(empty, empty) == 1.0);
}

TEST_CASE("hausdorff spot values and empty-mask error") {
    const auto a = mask_from({1, 0, 0, 0}, 2, 2);
    CHECK(isd::metrics::hausdorff(a, a) == 0.0);

    std::vector<int> p(5 * 5, 0), q(5 * 5, 0);
    p[0] = 1;          // (0,0)
    q[3 * 5 + 4] = 1;  // (3,4)
    CHECK(isd::metrics::hausdorff(mask_from(p, 5, 5), mask_from(q, 5, 5)) == doctest::Approx(5.0));

    std::vector<int> r(11 * 11, 0), s(11 * 11, 0);
    r[0] = 1;
    r[10 * 11] = 1;  // (0,0) and (10,0)
    s[0] = 1;        // (0,0)
    CHECK(isd::metrics::hausdorff(mask_from(r, 11, 11), mask_from(s, 11, 11)) == doctest::Approx(10.0));

    const auto empty = mask_from(std::vector<int>(4, 0), 2, 2);
    CHECK_THROWS_AS(isd::metrics::hausdorff(a, empty), isd::DomainError);
}

TEST_CASE("dice and hausdorff match oracles on random 8x8 masks") {
    auto g = isd::rng::substream(11, isd::rng::kTagTest);
    for (int t = 0; t < 200; ++t) {
        std::vector<int> a(64), b(64);
        bool any_a = false, any_b = false;
        for (int i = 0; i < 64; ++i) {
            a[i] = g.bernoulli(0.3);
            b[i] = g.bernoulli(0.3);
            any_a = any_a || a[i];
            any_b = any_b || b[i];
        }
        const auto ta = mask_from(a, 8, 8), tb = mask_from(b, 8, 8);
        CHECK(isd::metrics::dice(ta, tb) == doctest::Approx(dice_oracle(a, b)).epsilon(1e-12));
        if (any_a && any_b)
            CHECK(isd::metrics::hausdorff(ta, tb) ==
                  doctest::Approx(hausdorff_oracle(a, b, 8)).epsilon(1e-12));
    }
}

TEST_CASE("roc_auc spot values and pair counting") {
    const std::vector<double> s1 = {0.9, 0.8, 0.2, 0.1};
    const std::vector<std::uint8_t> l1 = {1, 1, 0, 0};
    CHECK(isd::metrics::roc_auc(s1, l1) == 1.0);

    const std::vector<double> s2 = {0.5, 0.5, 0.5, 0.5};
    CHECK(isd::metrics::roc_auc(s2, l1) == 0.5);

    const std::vector<double> s3 = {0.9, 0.5, 0.4};
    const std::vector<std::uint8_t> l3 = {1, 0, 1};
    CHECK(isd::metrics::roc_auc(s3, l3) == doctest::Approx(0.5));

    CHECK_THROWS_AS(isd::metrics::roc_auc(s3, std::vector<std::uint8_t>{1, 1, 1}), isd::DomainError);

    auto g = isd::rng::substream(12, isd::rng::kTagTest);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 2 + g.next_below(40);
        std::vector<double> scores(n);
        std::vector<std::uint8_t> labels(n);
        bool has0 = false, has1 = false;
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = double(g.next_below(8)) / 8.0;  // force ties
            labels[i] = std::uint8_t(g.bernoulli(0.5));
            has0 = has0 || labels[i] == 0;
            has1 = has1 || labels[i] == 1;
        }
        if (!has0 || !has1) continue;
        double wins = 0, pairs = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                if (labels[i] != 1 || labels[j] != 0) continue;
                pairs += 1;
                if (scores[i] > scores[j]) wins += 1;
                else if (scores[i] == scores[j]) wins += 0.5;
            }
        CHECK(isd::metrics::roc_auc(scores, labels) == doctest::Approx(wins / pairs).epsilon(1e-12));
    }
}

TEST_CASE("bce closed forms") {
    using Tf = Tensor<float>;
    CHECK(isd::bce_loss(Tf::full({3}, 20.0f), Tf::full({3}, 1.0f)).item() < 1e-6f);
    CHECK(isd::bce_loss(Tf::zeros({5}), Tf::full({5}, 1.0f)).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-6));
}
