// Batch command-line surface over the CSPN library: structure learning,
// end-to-end refinement, evaluation, sampling, CI testing, and the
// autoregressive block-wise image model.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "cspn/abcspn.hpp"
#include "cspn/circuit_io.hpp"
#include "cspn/citest.hpp"
#include "cspn/dataset.hpp"
#include "cspn/learn.hpp"
#include "cspn/optimize.hpp"

namespace fs = std::filesystem;
using namespace cspn;

namespace {

struct CommonOpts {
    std::uint64_t seed = 0;
    int threads = 1;
    std::string out = ".";
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--seed", opts.seed, "random seed");
    cmd->add_option("--threads", opts.threads, "worker threads for inner parallelism")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--out", opts.out, "output directory");
}

void write_resolved_config(const CLI::App& app, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::ofstream out(fs::path(out_dir) / "run_config.txt");
    out << app.config_to_str(true, false);
}

std::string fmt(double v, bool full) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v,
                                   std::chars_format::general, full ? 17 : 6);
    return std::string(buf, ptr - buf);
}

Dataset load_dataset(const std::string& data_path, const std::string& schema_path,
                     double evidence_fraction, std::uint64_t seed) {
    if (!schema_path.empty()) return load_csv(data_path, schema_path);
    if (evidence_fraction > 0.0)
        return load_binary_benchmark(data_path, evidence_fraction, seed);
    throw ValidationError("provide --schema or --evidence-fraction for " + data_path);
}

struct ImageTable {
    Eigen::MatrixXd images;  // n x (H*W), values in [0,1]
    std::vector<int> labels;
};

ImageTable load_image_csv(const std::string& path, int pixels, double max_value,
                          double binarize_threshold) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open image table: " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) row.push_back(std::stod(field));
        if (static_cast<int>(row.size()) != pixels + 1)
            throw ParseError(path + ": row " + std::to_string(rows.size()) + " has " +
                             std::to_string(row.size()) + " fields, expected " +
                             std::to_string(pixels + 1) + " (pixels + label)");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParseError(path + ": no rows");
    ImageTable table;
    table.images.resize(static_cast<int>(rows.size()), pixels);
    table.labels.resize(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        for (int p = 0; p < pixels; ++p) {
            double v = rows[i][p] / max_value;
            if (binarize_threshold >= 0.0) v = v >= binarize_threshold ? 1.0 : 0.0;
            table.images(static_cast<int>(i), p) = std::clamp(v, 0.0, 1.0);
        }
        table.labels[i] = static_cast<int>(rows[i][pixels]);
    }
    return table;
}

std::string cluster_method_name(ClusterMethod m) {
    return m == ClusterMethod::KMeans ? "kmeans" : "random_split";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"conditional sum-product networks: learning, inference, image models"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key=value config file; flags override file values");

    // ---- learn ----
    auto* learn_cmd = app.add_subcommand("learn", "learn a CSPN structure from data");
    CommonOpts learn_common;
    add_common(learn_cmd, learn_common);
    std::string learn_data, learn_schema;
    double learn_evidence = 0.0;
    LearnParams learn_params;
    std::string learn_cluster = "kmeans";
    learn_cmd->add_option("--data", learn_data, "training CSV")->required();
    learn_cmd->add_option("--schema", learn_schema, "schema sidecar file");
    learn_cmd->add_option("--evidence-fraction", learn_evidence,
                          "all-binary benchmark mode: seeded column mask, this share becomes X");
    learn_cmd->add_option("--min-instances", learn_params.min_instances,
                          "factorize below this many rows");
    learn_cmd->add_option("--alpha", learn_params.alpha, "CI test significance");
    learn_cmd->add_option("--clusters", learn_params.clusters, "K for instance splits");
    learn_cmd->add_option("--cluster-method", learn_cluster, "kmeans | random_split");
    learn_cmd->add_option("--min-frac", learn_params.min_fraction,
                          "also factorize below this share of all rows");
    learn_cmd->add_option("--max-depth", learn_params.max_depth, "0 = unlimited");
    learn_cmd->add_option("--rff-y", learn_params.citest.rff_y, "RFF features per label");
    learn_cmd->add_option("--rff-x", learn_params.citest.rff_x, "RFF features for X");

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "end-to-end refinement of all parameters");
    CommonOpts train_common;
    add_common(train_cmd, train_common);
    std::string train_model, train_data, train_schema, train_valid;
    double train_evidence = 0.0, valid_frac = 0.2;
    bool merge_valid = false;
    OptControl opt_ctrl;
    train_cmd->add_option("--model", train_model, "initial model file")->required();
    train_cmd->add_option("--data", train_data, "training CSV")->required();
    train_cmd->add_option("--schema", train_schema, "schema sidecar file");
    train_cmd->add_option("--evidence-fraction", train_evidence, "benchmark mask mode");
    train_cmd->add_option("--valid", train_valid, "validation CSV (same schema)");
    train_cmd->add_option("--valid-frac", valid_frac,
                          "held-out share of --data when --valid is absent");
    train_cmd->add_flag("--merge-valid", merge_valid,
                        "train on train+valid (validation still drives early stopping)");
    train_cmd->add_option("--step", opt_ctrl.step, "step size");
    train_cmd->add_option("--batch", opt_ctrl.batch, "mini-batch size");
    train_cmd->add_option("--epochs", opt_ctrl.max_epochs, "max epochs");
    train_cmd->add_option("--patience", opt_ctrl.patience, "early-stop patience");

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "mean CLL and mean-prediction RMSE on a dataset");
    CommonOpts eval_common;
    add_common(eval_cmd, eval_common);
    std::string eval_model, eval_data, eval_schema;
    double eval_evidence = 0.0;
    std::string precision = "short";
    eval_cmd->add_option("--model", eval_model)->required();
    eval_cmd->add_option("--data", eval_data)->required();
    eval_cmd->add_option("--schema", eval_schema);
    eval_cmd->add_option("--evidence-fraction", eval_evidence);
    eval_cmd->add_option("--precision", precision, "short | full (17 significant digits)");

    // ---- sample ----
    auto* sample_cmd = app.add_subcommand("sample", "draw Y samples conditioned on each X row");
    CommonOpts sample_common;
    add_common(sample_cmd, sample_common);
    std::string sample_model, sample_data, sample_schema;
    double sample_evidence = 0.0;
    int num_samples = 1;
    sample_cmd->add_option("--model", sample_model)->required();
    sample_cmd->add_option("--data", sample_data)->required();
    sample_cmd->add_option("--schema", sample_schema);
    sample_cmd->add_option("--evidence-fraction", sample_evidence);
    sample_cmd->add_option("--num-samples", num_samples, "draws per row")
        ->check(CLI::PositiveNumber);

    // ---- mpe ----
    auto* mpe_cmd = app.add_subcommand("mpe", "max-product decode per X row");
    CommonOpts mpe_common;
    add_common(mpe_cmd, mpe_common);
    std::string mpe_model, mpe_data, mpe_schema;
    double mpe_evidence = 0.0;
    mpe_cmd->add_option("--model", mpe_model)->required();
    mpe_cmd->add_option("--data", mpe_data)->required();
    mpe_cmd->add_option("--schema", mpe_schema);
    mpe_cmd->add_option("--evidence-fraction", mpe_evidence);

    // ---- citest ----
    auto* citest_cmd = app.add_subcommand("citest", "pairwise conditional independence tests");
    CommonOpts citest_common;
    add_common(citest_cmd, citest_common);
    std::string ci_data, ci_schema;
    double ci_evidence = 0.0, ci_alpha = 0.05;
    CiTestOptions ci_opts;
    citest_cmd->add_option("--data", ci_data)->required();
    citest_cmd->add_option("--schema", ci_schema);
    citest_cmd->add_option("--evidence-fraction", ci_evidence);
    citest_cmd->add_option("--alpha", ci_alpha, "significance threshold");
    citest_cmd->add_option("--rff-y", ci_opts.rff_y);
    citest_cmd->add_option("--rff-x", ci_opts.rff_x);

    // ---- abcspn-train ----
    auto* ab_train_cmd = app.add_subcommand("abcspn-train", "train a block-wise image model");
    CommonOpts ab_train_common;
    add_common(ab_train_cmd, ab_train_common);
    std::string ab_images;
    int ab_height = 0, ab_width = 0, ab_block_rows = 1, ab_block_cols = 1, ab_classes = 0;
    double ab_max_value = 1.0, ab_binarize = -1.0;
    LearnParams ab_params;
    ab_train_cmd->add_option("--images", ab_images, "CSV: H*W pixel columns then a class label")
        ->required();
    ab_train_cmd->add_option("--height", ab_height)->required();
    ab_train_cmd->add_option("--width", ab_width)->required();
    ab_train_cmd->add_option("--block-rows", ab_block_rows)->required();
    ab_train_cmd->add_option("--block-cols", ab_block_cols)->required();
    ab_train_cmd->add_option("--classes", ab_classes, "class count (default: max label + 1)");
    ab_train_cmd->add_option("--max-value", ab_max_value, "divide raw pixels by this");
    ab_train_cmd->add_option("--binarize", ab_binarize,
                             "threshold in [0,1]; enables bernoulli pixel leaves");
    ab_train_cmd->add_option("--min-instances", ab_params.min_instances);
    ab_train_cmd->add_option("--alpha", ab_params.alpha);
    ab_train_cmd->add_option("--clusters", ab_params.clusters);
    ab_train_cmd->add_option("--max-depth", ab_params.max_depth);

    // ---- abcspn-eval ----
    auto* ab_eval_cmd = app.add_subcommand("abcspn-eval", "joint log-likelihood of labeled images");
    CommonOpts ab_eval_common;
    add_common(ab_eval_cmd, ab_eval_common);
    std::string ab_eval_dir, ab_eval_images;
    double ab_eval_max = 1.0, ab_eval_binarize = -1.0;
    ab_eval_cmd->add_option("--model-dir", ab_eval_dir)->required();
    ab_eval_cmd->add_option("--images", ab_eval_images)->required();
    ab_eval_cmd->add_option("--max-value", ab_eval_max);
    ab_eval_cmd->add_option("--binarize", ab_eval_binarize);

    // ---- abcspn-sample ----
    auto* ab_sample_cmd = app.add_subcommand("abcspn-sample", "sample images as PGM files");
    CommonOpts ab_sample_common;
    add_common(ab_sample_cmd, ab_sample_common);
    std::string ab_sample_dir, class_weights_text;
    int sample_class = -1, ab_num = 1;
    ab_sample_cmd->add_option("--model-dir", ab_sample_dir)->required();
    ab_sample_cmd->add_option("--class", sample_class, "condition on one class id");
    ab_sample_cmd->add_option("--class-weights", class_weights_text,
                              "comma-separated class mixture, e.g. 0.5,0.5");
    ab_sample_cmd->add_option("--num", ab_num, "number of images")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: validation: " << e.what() << '\n';
        return 1;
    }

    try {
        if (*learn_cmd) {
            if (learn_cluster == "kmeans")
                learn_params.cluster_method = ClusterMethod::KMeans;
            else if (learn_cluster == "random_split")
                learn_params.cluster_method = ClusterMethod::RandomSplit;
            else
                throw ValidationError("unknown --cluster-method " + learn_cluster);
            learn_params.seed = learn_common.seed;
            learn_params.threads = learn_common.threads;
            const Dataset data =
                load_dataset(learn_data, learn_schema, learn_evidence, learn_common.seed);
            LearnStats stats;
            const Circuit model = learn_cspn(data, learn_params, &stats);
            write_resolved_config(app, learn_common.out);
            save_circuit(model, (fs::path(learn_common.out) / "model.json").string());
            std::ofstream summary(fs::path(learn_common.out) / "structure.txt");
            summary << model.summary().to_string() << "ci pairs tested: " << stats.ci_pairs_tested
                    << "\nsplit_labels calls: " << stats.split_labels_calls << '\n';
            std::cout << "learned model on " << data.rows() << " rows (|Y|=" << data.num_y()
                      << ", |X|=" << data.num_x() << ")\n"
                      << model.summary().to_string();
        } else if (*train_cmd) {
            opt_ctrl.seed = train_common.seed;
            const Circuit model = load_circuit(train_model);
            const Dataset data =
                load_dataset(train_data, train_schema, train_evidence, train_common.seed);
            Eigen::MatrixXd ytr, xtr, yva, xva;
            if (!train_valid.empty()) {
                const Dataset valid =
                    load_dataset(train_valid, train_schema, train_evidence, train_common.seed);
                ytr = data.y_matrix();
                xtr = data.x_matrix();
                yva = valid.y_matrix();
                xva = valid.x_matrix();
            } else {
                Rng rng(train_common.seed);
                const auto perm = rng.permutation(data.rows());
                const int n_valid = std::max(1, static_cast<int>(valid_frac * data.rows()));
                const Eigen::MatrixXd y = data.y_matrix(), x = data.x_matrix();
                yva.resize(n_valid, y.cols());
                xva.resize(n_valid, x.cols());
                ytr.resize(data.rows() - n_valid, y.cols());
                xtr.resize(data.rows() - n_valid, x.cols());
                for (int i = 0; i < n_valid; ++i) {
                    yva.row(i) = y.row(perm[i]);
                    xva.row(i) = x.row(perm[i]);
                }
                for (int i = n_valid; i < data.rows(); ++i) {
                    ytr.row(i - n_valid) = y.row(perm[i]);
                    xtr.row(i - n_valid) = x.row(perm[i]);
                }
            }
            if (merge_valid) {
                Eigen::MatrixXd ym(ytr.rows() + yva.rows(), ytr.cols());
                ym << ytr, yva;
                Eigen::MatrixXd xm(xtr.rows() + xva.rows(), xtr.cols());
                xm << xtr, xva;
                ytr = ym;
                xtr = xm;
            }
            const TrainResult result = train(model, ytr, xtr, yva, xva, opt_ctrl);
            write_resolved_config(app, train_common.out);
            save_circuit(result.model, (fs::path(train_common.out) / "model.json").string());
            write_training_log(result.log,
                               (fs::path(train_common.out) / "training_log.csv").string());
            std::cout << "best epoch " << result.best_epoch << " valid CLL "
                      << fmt(result.best_valid_cll, false) << " (init "
                      << fmt(result.initial_valid_cll, false) << ")\n";
        } else if (*eval_cmd) {
            const bool full = precision == "full";
            const Circuit model = load_circuit(eval_model);
            const Dataset data =
                load_dataset(eval_data, eval_schema, eval_evidence, eval_common.seed);
            fs::create_directories(eval_common.out);
            std::ofstream per_sample(fs::path(eval_common.out) / "per_sample_cll.csv");
            per_sample << "row,cll\n";
            double total = 0.0, se = 0.0;
            long se_count = 0;
            for (int i = 0; i < data.rows(); ++i) {
                const Eigen::VectorXd x = data.x_row(i);
                const Eigen::VectorXd y = data.y_row(i);
                const double cll = model.log_density(Evidence::observed(x, y));
                total += cll;
                per_sample << i << ',' << fmt(cll, true) << '\n';
                const Eigen::VectorXd mean = model.predict_mean(x);
                se += (mean - y).squaredNorm();
                se_count += y.size();
            }
            const double mean_cll = total / data.rows();
            const double rmse = std::sqrt(se / static_cast<double>(se_count));
            write_resolved_config(app, eval_common.out);
            std::ofstream metrics(fs::path(eval_common.out) / "metrics.csv");
            metrics << "metric,value\nmean_cll," << fmt(mean_cll, true) << "\nrmse,"
                    << fmt(rmse, true) << "\nrows," << data.rows() << '\n';
            std::cout << "mean CLL " << fmt(mean_cll, full) << "  rmse " << fmt(rmse, full)
                      << "  rows " << data.rows() << '\n';
        } else if (*sample_cmd) {
            const Circuit model = load_circuit(sample_model);
            const Dataset data =
                load_dataset(sample_data, sample_schema, sample_evidence, sample_common.seed);
            fs::create_directories(sample_common.out);
            write_resolved_config(app, sample_common.out);
            std::ofstream out(fs::path(sample_common.out) / "samples.csv");
            Rng rng(sample_common.seed);
            for (int i = 0; i < data.rows(); ++i) {
                const Eigen::VectorXd x = data.x_row(i);
                for (int s = 0; s < num_samples; ++s) {
                    const Eigen::VectorXd y = model.sample(x, rng);
                    out << i;
                    for (int j = 0; j < y.size(); ++j) out << ',' << fmt(y[j], true);
                    out << '\n';
                }
            }
            std::cout << "wrote " << data.rows() * num_samples << " samples\n";
        } else if (*mpe_cmd) {
            const Circuit model = load_circuit(mpe_model);
            const Dataset data = load_dataset(mpe_data, mpe_schema, mpe_evidence, mpe_common.seed);
            fs::create_directories(mpe_common.out);
            write_resolved_config(app, mpe_common.out);
            std::ofstream out(fs::path(mpe_common.out) / "mpe.csv");
            for (int i = 0; i < data.rows(); ++i) {
                const Eigen::VectorXd y = model.mpe(data.x_row(i));
                out << i;
                for (int j = 0; j < y.size(); ++j) out << ',' << fmt(y[j], true);
                out << '\n';
            }
            std::cout << "wrote " << data.rows() << " decodes\n";
        } else if (*citest_cmd) {
            const Dataset data = load_dataset(ci_data, ci_schema, ci_evidence, citest_common.seed);
            std::vector<CiTestResult> results;
            split_labels(data, ci_alpha, citest_common.seed, ci_opts, &results,
                         citest_common.threads);
            fs::create_directories(citest_common.out);
            write_resolved_config(app, citest_common.out);
            std::ofstream out(fs::path(citest_common.out) / "citest.csv");
            out << "i,j,statistic,p_value,method\n";
            int at = 0;
            for (int i = 0; i < data.num_y(); ++i)
                for (int j = i + 1; j < data.num_y(); ++j, ++at)
                    out << i << ',' << j << ',' << fmt(results[at].statistic, true) << ','
                        << fmt(results[at].p_value, true) << ','
                        << null_method_name(results[at].method) << '\n';
            std::cout << "tested " << at << " pairs\n";
        } else if (*ab_train_cmd) {
            ab_params.seed = ab_train_common.seed;
            ab_params.threads = ab_train_common.threads;
            const ImageTable table =
                load_image_csv(ab_images, ab_height * ab_width, ab_max_value, ab_binarize);
            int classes = ab_classes;
            if (classes <= 0)
                classes = *std::max_element(table.labels.begin(), table.labels.end()) + 1;
            const BlockGrid grid = BlockGrid::make(ab_height, ab_width, ab_block_rows, ab_block_cols);
            const auto result = abcspn_train(table.images, table.labels, grid, classes, ab_params,
                                             ab_binarize >= 0.0);
            write_resolved_config(app, ab_train_common.out);
            const std::string model_dir = (fs::path(ab_train_common.out) / "abcspn_model").string();
            save_abcspn(result.model, model_dir);
            std::cout << "trained " << grid.num_blocks() << " block models over "
                      << table.images.rows() << " images; saved to " << model_dir << '\n';
        } else if (*ab_eval_cmd) {
            const AbcspnModel model = load_abcspn(ab_eval_dir);
            const ImageTable table = load_image_csv(
                ab_eval_images, model.grid.height * model.grid.width, ab_eval_max, ab_eval_binarize);
            fs::create_directories(ab_eval_common.out);
            write_resolved_config(app, ab_eval_common.out);
            std::ofstream out(fs::path(ab_eval_common.out) / "per_image_ll.csv");
            out << "row,log_likelihood\n";
            double total = 0.0;
            for (int i = 0; i < table.images.rows(); ++i) {
                const double ll =
                    abcspn_log_likelihood(model, table.images.row(i).transpose(), table.labels[i]);
                total += ll;
                out << i << ',' << fmt(ll, true) << '\n';
            }
            std::cout << "mean log-likelihood " << fmt(total / table.images.rows(), false)
                      << " over " << table.images.rows() << " images\n";
        } else if (*ab_sample_cmd) {
            const AbcspnModel model = load_abcspn(ab_sample_dir);
            Eigen::VectorXd weights = Eigen::VectorXd::Zero(model.num_classes);
            if (!class_weights_text.empty()) {
                std::stringstream ss(class_weights_text);
                std::string field;
                int at = 0;
                while (std::getline(ss, field, ',')) {
                    if (at >= model.num_classes)
                        throw ValidationError("--class-weights has too many entries");
                    weights[at++] = std::stod(field);
                }
                if (at != model.num_classes)
                    throw ValidationError("--class-weights needs " +
                                          std::to_string(model.num_classes) + " entries");
            } else if (sample_class >= 0) {
                if (sample_class >= model.num_classes)
                    throw ValidationError("--class out of range");
                weights[sample_class] = 1.0;
            } else {
                weights = model.class_prior;
            }
            fs::create_directories(ab_sample_common.out);
            write_resolved_config(app, ab_sample_common.out);
            Rng rng(ab_sample_common.seed);
            for (int s = 0; s < ab_num; ++s) {
                const Eigen::VectorXd image = abcspn_sample(model, weights, rng);
                char name[32];
                std::snprintf(name, sizeof(name), "sample_%04d.pgm", s);
                write_pgm((fs::path(ab_sample_common.out) / name).string(), model.grid.height,
                          model.grid.width, image);
            }
            std::cout << "wrote " << ab_num << " images to " << ab_sample_common.out << '\n';
        }
    } catch (const ParseError& e) {
        std::cerr << "error: io: " << e.what() << '\n';
        return 3;
    } catch (const IoError& e) {
        std::cerr << "error: io: " << e.what() << '\n';
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "error: numeric: " << e.what() << '\n';
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: validation: " << e.what() << '\n';
        return 1;
    } catch (const DomainError& e) {
        std::cerr << "error: validation: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: validation: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
