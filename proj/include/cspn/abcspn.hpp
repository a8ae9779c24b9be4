#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "cspn/circuit.hpp"
#include "cspn/learn.hpp"

namespace cspn {

/** Tiling of an H x W image into equally sized pixel blocks, indexed in raster
 * scan order (row by row, left to right). block_rows/block_cols count blocks,
 * not pixels, and must divide the image dimensions.
 */
struct BlockGrid {
    int height = 0, width = 0;
    int block_rows = 1, block_cols = 1;

    static BlockGrid make(int height, int width, int block_rows, int block_cols);

    int num_blocks() const { return block_rows * block_cols; }
    int block_height() const { return height / block_rows; }
    int block_width() const { return width / block_cols; }
    int block_pixel_count() const { return block_height() * block_width(); }

    /// Image raster indices of block b's pixels, in image raster order.
    std::vector<int> block_pixels(int b) const;
};

/** Autoregressive block-wise model: p(image, class) decomposes into the class
 * prior times a raster-ordered product of per-block circuits, block i
 * conditioned on the pixels of blocks 0..i-1 followed by the one-hot class.
 */
struct AbcspnModel {
    BlockGrid grid;
    int num_classes = 0;
    Eigen::VectorXd class_prior;  // add-one smoothed empirical frequencies
    std::vector<Circuit> blocks;
    bool binary = false;  // bernoulli pixel leaves instead of gaussian
};

struct AbcspnTrainResult {
    AbcspnModel model;
    std::vector<LearnStats> block_stats;
};

/// images: n x (H*W) rows with values in [0,1]; labels in 0..num_classes-1.
AbcspnTrainResult abcspn_train(const Eigen::MatrixXd& images, const std::vector<int>& labels,
                               const BlockGrid& grid, int num_classes, const LearnParams& params,
                               bool binary_mode = false);

/// log p(class) + sum over blocks of the block circuit's conditional log-density.
double abcspn_log_likelihood(const AbcspnModel& model, const Eigen::VectorXd& image, int cls);

/** Ancestral image sample. class_weights is a point on the simplex over
 * classes; a mixed vector is fed to every block as the class encoding, which
 * is how conditioning on a blend of classes is expressed.
 */
Eigen::VectorXd abcspn_sample(const AbcspnModel& model, const Eigen::VectorXd& class_weights,
                              Rng& rng);

/// Model directory: manifest.json plus one circuit file per block
/// (block_0000.json ... in raster order).
void save_abcspn(const AbcspnModel& model, const std::string& dir);
AbcspnModel load_abcspn(const std::string& dir);

}  // namespace cspn
