#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <unistd.h>

#include "cspn/abcspn.hpp"
#include "cspn/circuit.hpp"
#include "helpers.hpp"

using namespace cspn;
namespace fs = std::filesystem;

namespace {

// Binarized 2x2 images, two classes: class 0 favours the left column lit,
// class 1 the right column; some noise keeps leaves off the boundary.
void tiny_binary_data(int n, std::uint64_t seed, Eigen::MatrixXd& images,
                      std::vector<int>& labels) {
    Rng rng(seed);
    images.resize(n, 4);
    labels.resize(n);
    for (int i = 0; i < n; ++i) {
        labels[i] = rng.bernoulli(0.5) ? 1 : 0;
        for (int p = 0; p < 4; ++p) {
            const bool left = p % 2 == 0;
            const double on = (labels[i] == 0) == left ? 0.85 : 0.2;
            images(i, p) = rng.bernoulli(on) ? 1.0 : 0.0;
        }
    }
}

LearnParams tiny_params(std::uint64_t seed) {
    LearnParams p;
    p.min_instances = 64;
    p.seed = seed;
    return p;
}

}  // namespace

TEST_CASE("block grid tiling and conditioning arithmetic") {
    const BlockGrid grid = BlockGrid::make(4, 4, 2, 2);
    CHECK(grid.num_blocks() == 4);
    CHECK(grid.block_pixel_count() == 4);
    CHECK(grid.block_pixels(0) == std::vector<int>{0, 1, 4, 5});
    CHECK(grid.block_pixels(1) == std::vector<int>{2, 3, 6, 7});
    CHECK(grid.block_pixels(2) == std::vector<int>{8, 9, 12, 13});
    CHECK_THROWS_AS(BlockGrid::make(4, 4, 3, 2), ValidationError);

    // third block (index 2) conditions on 8 pixels + one-hot class
    Eigen::MatrixXd images(20, 16);
    images.setZero();
    std::vector<int> labels(20, 0);
    for (int i = 10; i < 20; ++i) labels[i] = 1;
    Rng rng(1);
    for (int i = 0; i < 20; ++i)
        for (int p = 0; p < 16; ++p) images(i, p) = rng.uniform();
    const auto result = abcspn_train(images, labels, grid, 2, tiny_params(1));
    CHECK(result.model.blocks[2].num_x() == 8 + 2);
    CHECK(result.model.blocks[0].num_x() == 0 + 2);  // first block sees only the class
    CHECK(result.model.blocks[3].num_x() == 12 + 2);
}

TEST_CASE("1x1 grid degenerates to class prior times one circuit") {
    Eigen::MatrixXd images;
    std::vector<int> labels;
    tiny_binary_data(200, 3, images, labels);
    const BlockGrid grid = BlockGrid::make(2, 2, 1, 1);
    const auto result = abcspn_train(images, labels, grid, 2, tiny_params(3), true);
    CHECK(result.model.blocks.size() == 1);
    const double ll = abcspn_log_likelihood(result.model, images.row(0).transpose(), labels[0]);
    const Eigen::VectorXd x = [&] {
        Eigen::VectorXd enc = Eigen::VectorXd::Zero(2);
        enc[labels[0]] = 1.0;
        return enc;
    }();
    const double manual = std::log(result.model.class_prior[labels[0]]) +
                          result.model.blocks[0].log_density(
                              Evidence::observed(x, images.row(0).transpose()));
    CHECK(ll == doctest::Approx(manual).epsilon(1e-12));
}

TEST_CASE("joint normalization over all images and classes (binary 2x2)") {
    Eigen::MatrixXd images;
    std::vector<int> labels;
    tiny_binary_data(300, 7, images, labels);
    const BlockGrid grid = BlockGrid::make(2, 2, 2, 2);  // 4 blocks of one pixel
    const auto result = abcspn_train(images, labels, grid, 2, tiny_params(7), true);
    double total = 0.0;
    for (int cls = 0; cls < 2; ++cls)
        for (int mask = 0; mask < 16; ++mask) {
            Eigen::VectorXd img(4);
            for (int p = 0; p < 4; ++p) img[p] = (mask >> p) & 1 ? 1.0 : 0.0;
            total += std::exp(abcspn_log_likelihood(result.model, img, cls));
        }
    CHECK(std::abs(total - 1.0) < 1e-8);
}

TEST_CASE("log-likelihood composes the per-block circuit evaluations") {
    Rng rng(12);
    Eigen::MatrixXd images(150, 16);
    std::vector<int> labels(150);
    for (int i = 0; i < 150; ++i) {
        labels[i] = rng.bernoulli(0.5) ? 1 : 0;
        for (int p = 0; p < 16; ++p)
            images(i, p) = std::clamp(0.5 + (labels[i] ? 0.2 : -0.2) + 0.2 * rng.normal(), 0.0, 1.0);
    }
    const BlockGrid grid = BlockGrid::make(4, 4, 2, 2);
    const auto result = abcspn_train(images, labels, grid, 2, tiny_params(5));
    const AbcspnModel& model = result.model;

    const Eigen::VectorXd image = images.row(3).transpose();
    const int cls = labels[3];
    Eigen::VectorXd enc = Eigen::VectorXd::Zero(2);
    enc[cls] = 1.0;
    double manual = std::log(model.class_prior[cls]);
    for (int b = 0; b < 4; ++b) {
        const auto pixels = grid.block_pixels(b);
        Eigen::VectorXd y(4);
        for (int j = 0; j < 4; ++j) y[j] = image[pixels[j]];
        Eigen::VectorXd x(b * 4 + 2);
        int at = 0;
        for (int prev = 0; prev < b; ++prev)
            for (int px : grid.block_pixels(prev)) x[at++] = image[px];
        x.tail(2) = enc;
        manual += model.blocks[b].log_density(Evidence::observed(x, y));
    }
    CHECK(abcspn_log_likelihood(model, image, cls) == doctest::Approx(manual).epsilon(1e-12));

    // assembly determinism: earlier blocks never read future-block pixels
    Eigen::VectorXd permuted = image;
    std::swap(permuted[10], permuted[11]);  // inside the last block
    std::swap(permuted[14], permuted[15]);
    for (int b = 0; b < 3; ++b) {
        const auto pixels = grid.block_pixels(b);
        Eigen::VectorXd y(4);
        for (int j = 0; j < 4; ++j) y[j] = permuted[pixels[j]];
        Eigen::VectorXd x(b * 4 + 2);
        int at = 0;
        for (int prev = 0; prev < b; ++prev)
            for (int px : grid.block_pixels(prev)) x[at++] = permuted[px];
        x.tail(2) = enc;
        const double term = model.blocks[b].log_density(Evidence::observed(x, y));
        Eigen::VectorXd y0(4);
        for (int j = 0; j < 4; ++j) y0[j] = image[pixels[j]];
        Eigen::VectorXd x0(b * 4 + 2);
        at = 0;
        for (int prev = 0; prev < b; ++prev)
            for (int px : grid.block_pixels(prev)) x0[at++] = image[px];
        x0.tail(2) = enc;
        CHECK(term == model.blocks[b].log_density(Evidence::observed(x0, y0)));
    }
}

TEST_CASE("constant-image training puts the mode at the constant") {
    Eigen::MatrixXd images = Eigen::MatrixXd::Constant(120, 16, 0.5);
    std::vector<int> labels(120, 0);
    const BlockGrid grid = BlockGrid::make(4, 4, 2, 2);
    const auto result = abcspn_train(images, labels, grid, 1, tiny_params(9));
    const AbcspnModel& model = result.model;
    const double ll_mid =
        abcspn_log_likelihood(model, Eigen::VectorXd::Constant(16, 0.5), 0);
    const double ll_zero = abcspn_log_likelihood(model, Eigen::VectorXd::Zero(16), 0);
    CHECK(ll_mid >= ll_zero);

    Rng rng(4);
    const Eigen::VectorXd weights = Eigen::VectorXd::Ones(1);
    int close = 0;
    for (int s = 0; s < 20; ++s) {
        const Eigen::VectorXd img = abcspn_sample(model, weights, rng);
        for (int p = 0; p < 16; ++p) close += std::abs(img[p] - 0.5) <= 0.1;
    }
    CHECK(close >= 0.95 * 20 * 16);
}

TEST_CASE("class-mixture sampling interpolates between dark and bright") {
    int between = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(100 + seed);
        const int n = 200;
        Eigen::MatrixXd images(n, 16);
        std::vector<int> labels(n);
        for (int i = 0; i < n; ++i) {
            labels[i] = i % 2;
            const double base = labels[i] ? 0.9 : 0.1;
            for (int p = 0; p < 16; ++p)
                images(i, p) = std::clamp(base + 0.05 * rng.normal(), 0.0, 1.0);
        }
        const BlockGrid grid = BlockGrid::make(4, 4, 2, 2);
        const auto result = abcspn_train(images, labels, grid, 2, tiny_params(seed));
        Eigen::VectorXd mix(2);
        mix << 0.5, 0.5;
        Rng srng(seed);
        double mean = 0.0;
        for (int s = 0; s < 8; ++s) mean += abcspn_sample(result.model, mix, srng).mean();
        mean /= 8;
        if (mean > 0.15 && mean < 0.85) ++between;
    }
    CHECK(between >= 9);
}

TEST_CASE("sampling is reproducible for a fixed seed") {
    Eigen::MatrixXd images;
    std::vector<int> labels;
    tiny_binary_data(150, 21, images, labels);
    const BlockGrid grid = BlockGrid::make(2, 2, 2, 2);
    const auto result = abcspn_train(images, labels, grid, 2, tiny_params(21), true);
    Eigen::VectorXd w(2);
    w << 1.0, 0.0;
    Rng a(5), b(5);
    for (int s = 0; s < 10; ++s) {
        const Eigen::VectorXd ia = abcspn_sample(result.model, w, a);
        const Eigen::VectorXd ib = abcspn_sample(result.model, w, b);
        CHECK((ia - ib).norm() == 0.0);
    }
}

TEST_CASE("per-block CI test count is quadratic in the block size") {
    Rng rng(31);
    const int n = 400;
    Eigen::MatrixXd images(n, 16);
    std::vector<int> labels(n, 0);
    for (int i = 0; i < n; ++i)
        for (int p = 0; p < 16; ++p) images(i, p) = rng.uniform();
    const BlockGrid grid = BlockGrid::make(4, 4, 2, 2);
    LearnParams params = tiny_params(2);
    params.min_instances = 64;  // ensures the root SplitLabels runs
    const auto result = abcspn_train(images, labels, grid, 1, params);
    const int block_size = grid.block_pixel_count();
    const int expected_pairs = block_size * (block_size - 1) / 2;
    for (const auto& stats : result.block_stats) {
        REQUIRE(stats.split_labels_calls >= 1);
        CHECK(stats.pairs_per_call[0] == expected_pairs);
    }
}

TEST_CASE("model directory round trip") {
    Eigen::MatrixXd images;
    std::vector<int> labels;
    tiny_binary_data(150, 33, images, labels);
    const BlockGrid grid = BlockGrid::make(2, 2, 2, 2);
    const auto result = abcspn_train(images, labels, grid, 2, tiny_params(33), true);
    const fs::path dir =
        fs::temp_directory_path() / ("cspn_abc_" + std::to_string(::getpid()));
    save_abcspn(result.model, dir.string());
    const AbcspnModel back = load_abcspn(dir.string());
    CHECK(back.binary == result.model.binary);
    CHECK((back.class_prior - result.model.class_prior).norm() == 0.0);
    for (int i = 0; i < 10; ++i) {
        const double a =
            abcspn_log_likelihood(result.model, images.row(i).transpose(), labels[i]);
        const double b = abcspn_log_likelihood(back, images.row(i).transpose(), labels[i]);
        CHECK(a == b);
    }
    fs::remove_all(dir);
}
