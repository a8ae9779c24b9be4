#include "cspn/abcspn.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>

#include <json.hpp>

#include "cspn/circuit_io.hpp"
#include "cspn/dataset.hpp"

namespace cspn {

namespace fs = std::filesystem;

BlockGrid BlockGrid::make(int height, int width, int block_rows, int block_cols) {
    if (height < 1 || width < 1 || block_rows < 1 || block_cols < 1)
        throw ValidationError("BlockGrid: dimensions must be positive");
    if (height % block_rows != 0 || width % block_cols != 0)
        throw ValidationError("BlockGrid: " + std::to_string(block_rows) + "x" +
                              std::to_string(block_cols) + " blocks do not tile a " +
                              std::to_string(height) + "x" + std::to_string(width) + " image");
    return {height, width, block_rows, block_cols};
}

std::vector<int> BlockGrid::block_pixels(int b) const {
    if (b < 0 || b >= num_blocks()) throw ValidationError("BlockGrid: block index out of range");
    const int br = b / block_cols;
    const int bc = b % block_cols;
    std::vector<int> pixels;
    pixels.reserve(block_pixel_count());
    for (int r = br * block_height(); r < (br + 1) * block_height(); ++r)
        for (int c = bc * block_width(); c < (bc + 1) * block_width(); ++c)
            pixels.push_back(r * width + c);
    return pixels;
}

namespace {

// Conditioning vector for block b: pixels of all preceding blocks in raster
// order, then the (possibly mixed) one-hot class encoding.
Eigen::VectorXd conditioning_vector(const BlockGrid& grid, const Eigen::VectorXd& image,
                                    const Eigen::VectorXd& class_enc, int block) {
    const int prefix = block * grid.block_pixel_count();
    Eigen::VectorXd x(prefix + class_enc.size());
    int at = 0;
    for (int b = 0; b < block; ++b)
        for (int px : grid.block_pixels(b)) x[at++] = image[px];
    x.tail(class_enc.size()) = class_enc;
    return x;
}

Dataset block_dataset(const Eigen::MatrixXd& images, const std::vector<int>& labels,
                      const BlockGrid& grid, int num_classes, int block, bool binary_mode) {
    const int n = static_cast<int>(images.rows());
    const auto pixels = grid.block_pixels(block);
    const int prefix = block * grid.block_pixel_count();
    const int num_x = prefix + num_classes;
    Eigen::MatrixXd values(n, static_cast<int>(pixels.size()) + num_x);
    for (int i = 0; i < n; ++i) {
        for (size_t j = 0; j < pixels.size(); ++j) values(i, static_cast<int>(j)) = images(i, pixels[j]);
        Eigen::VectorXd cls = Eigen::VectorXd::Zero(num_classes);
        cls[labels[i]] = 1.0;
        values.row(i).tail(num_x) =
            conditioning_vector(grid, images.row(i).transpose(), cls, block).transpose();
    }
    std::vector<ColumnSpec> schema;
    const ColumnType pixel_type = binary_mode ? ColumnType::Binary : ColumnType::Continuous;
    for (size_t j = 0; j < pixels.size(); ++j)
        schema.push_back({"p" + std::to_string(pixels[j]), pixel_type, ColumnRole::Y, 0});
    for (int j = 0; j < num_x; ++j)
        schema.push_back({"x" + std::to_string(j), ColumnType::Continuous, ColumnRole::X, 0});
    return Dataset(std::move(values), std::move(schema));
}

}  // namespace

AbcspnTrainResult abcspn_train(const Eigen::MatrixXd& images, const std::vector<int>& labels,
                               const BlockGrid& grid, int num_classes, const LearnParams& params,
                               bool binary_mode) {
    const int n = static_cast<int>(images.rows());
    if (n == 0) throw ValidationError("abcspn_train: no images");
    if (static_cast<int>(labels.size()) != n)
        throw ValidationError("abcspn_train: image/label count mismatch");
    if (images.cols() != static_cast<long>(grid.height) * grid.width)
        throw ValidationError("abcspn_train: image size does not match grid");
    for (int l : labels)
        if (l < 0 || l >= num_classes)
            throw ValidationError("abcspn_train: class id out of range");

    AbcspnTrainResult out;
    out.model.grid = grid;
    out.model.num_classes = num_classes;
    out.model.binary = binary_mode;
    out.model.class_prior.resize(num_classes);
    for (int c = 0; c < num_classes; ++c) out.model.class_prior[c] = 1.0;  // add-one smoothing
    for (int l : labels) out.model.class_prior[l] += 1.0;
    out.model.class_prior /= out.model.class_prior.sum();

    out.model.blocks.resize(grid.num_blocks());
    out.block_stats.resize(grid.num_blocks());

    auto train_block = [&](int b) {
        const Dataset data = block_dataset(images, labels, grid, num_classes, b, binary_mode);
        LearnParams block_params = params;
        block_params.seed = Rng::stream(params.seed, 17, static_cast<std::uint64_t>(b)).next_u64();
        try {
            out.model.blocks[b] = learn_cspn(data, block_params, &out.block_stats[b]);
        } catch (const Error& e) {
            throw NumericError("block " + std::to_string(b) + ": " + e.what());
        }
    };

    if (params.threads > 1) {
        std::vector<std::future<void>> futures;
        for (int b = 0; b < grid.num_blocks(); ++b)
            futures.push_back(std::async(std::launch::async, train_block, b));
        for (auto& f : futures) f.get();
    } else {
        for (int b = 0; b < grid.num_blocks(); ++b) train_block(b);
    }
    return out;
}

double abcspn_log_likelihood(const AbcspnModel& model, const Eigen::VectorXd& image, int cls) {
    if (cls < 0 || cls >= model.num_classes)
        throw ValidationError("abcspn_log_likelihood: class out of range");
    if (image.size() != static_cast<long>(model.grid.height) * model.grid.width)
        throw ValidationError("abcspn_log_likelihood: image size mismatch");
    Eigen::VectorXd class_enc = Eigen::VectorXd::Zero(model.num_classes);
    class_enc[cls] = 1.0;
    double ll = std::log(model.class_prior[cls]);
    for (int b = 0; b < model.grid.num_blocks(); ++b) {
        const auto pixels = model.grid.block_pixels(b);
        Eigen::VectorXd y(pixels.size());
        for (size_t j = 0; j < pixels.size(); ++j) y[static_cast<int>(j)] = image[pixels[j]];
        const Eigen::VectorXd x = conditioning_vector(model.grid, image, class_enc, b);
        ll += model.blocks[b].log_density(Evidence::observed(x, y));
    }
    return ll;
}

Eigen::VectorXd abcspn_sample(const AbcspnModel& model, const Eigen::VectorXd& class_weights,
                              Rng& rng) {
    if (class_weights.size() != model.num_classes)
        throw ValidationError("abcspn_sample: class weight size mismatch");
    if ((class_weights.array() < -1e-12).any() || std::abs(class_weights.sum() - 1.0) > 1e-6)
        throw ValidationError("abcspn_sample: class weights must lie on the simplex");
    Eigen::VectorXd image =
        Eigen::VectorXd::Zero(static_cast<long>(model.grid.height) * model.grid.width);
    for (int b = 0; b < model.grid.num_blocks(); ++b) {
        const Eigen::VectorXd x = conditioning_vector(model.grid, image, class_weights, b);
        const Eigen::VectorXd y = model.blocks[b].sample(x, rng);
        const auto pixels = model.grid.block_pixels(b);
        for (size_t j = 0; j < pixels.size(); ++j)
            image[pixels[j]] = std::clamp(y[static_cast<int>(j)], 0.0, 1.0);
    }
    return image;
}

void save_abcspn(const AbcspnModel& model, const std::string& dir) {
    fs::create_directories(dir);
    std::ostringstream manifest;
    manifest << "{\"format_version\":1,\"height\":" << model.grid.height
             << ",\"width\":" << model.grid.width << ",\"block_rows\":" << model.grid.block_rows
             << ",\"block_cols\":" << model.grid.block_cols
             << ",\"num_classes\":" << model.num_classes << ",\"binary\":"
             << (model.binary ? "true" : "false") << ",\"prior\":[";
    for (int c = 0; c < model.num_classes; ++c) {
        if (c) manifest << ',';
        char buf[64];
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), model.class_prior[c],
                                       std::chars_format::general, 17);
        manifest.write(buf, ptr - buf);
    }
    manifest << "]}";
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw IoError("cannot write manifest in " + dir);
    out << manifest.str() << '\n';
    for (size_t b = 0; b < model.blocks.size(); ++b) {
        char name[32];
        std::snprintf(name, sizeof(name), "block_%04zu.json", b);
        save_circuit(model.blocks[b], (fs::path(dir) / name).string());
    }
}

AbcspnModel load_abcspn(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw IoError("cannot open manifest in " + dir);
    std::stringstream buf;
    buf << in.rdbuf();
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(buf.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("manifest: ") + e.what());
    }
    AbcspnModel model;
    model.grid = BlockGrid::make(doc.at("height").get<int>(), doc.at("width").get<int>(),
                                 doc.at("block_rows").get<int>(), doc.at("block_cols").get<int>());
    model.num_classes = doc.at("num_classes").get<int>();
    model.binary = doc.value("binary", false);
    const auto prior = doc.at("prior");
    if (static_cast<int>(prior.size()) != model.num_classes)
        throw ParseError("manifest: prior size does not match num_classes");
    model.class_prior.resize(model.num_classes);
    for (int c = 0; c < model.num_classes; ++c) model.class_prior[c] = prior[c].get<double>();
    model.blocks.resize(model.grid.num_blocks());
    for (int b = 0; b < model.grid.num_blocks(); ++b) {
        char name[32];
        std::snprintf(name, sizeof(name), "block_%04d.json", b);
        model.blocks[b] = load_circuit((fs::path(dir) / name).string());
    }
    return model;
}

}  // namespace cspn
