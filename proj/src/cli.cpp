#include "qtseg/cli.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qtseg/checkpoint.hpp"
#include "qtseg/complexity.hpp"
#include "qtseg/data.hpp"
#include "qtseg/errors.hpp"
#include "qtseg/image_io.hpp"
#include "qtseg/metrics.hpp"
#include "qtseg/model.hpp"
#include "qtseg/ops.hpp"
#include "qtseg/train.hpp"

namespace qtseg {

namespace {

// Sources with more channels than the model expects keep the leading ones;
// grayscale datasets arrive gray-replicated, so channel 0 is exact.
Tensor adapt_channels(const Tensor& image, int64_t want) {
  const int64_t have = image.dim(image.rank() - 3);
  if (have == want) return image;
  if (have < want) {
    throw ShapeError("image has " + std::to_string(have) +
                     " channels but the model expects " + std::to_string(want));
  }
  return ops::slice_channels(image, 0, want);
}

std::vector<Sample> load_named_samples(const DatasetIndex& idx,
                                       const std::vector<std::string>& names,
                                       const ModelConfig& cfg) {
  std::vector<Sample> out;
  out.reserve(names.size());
  for (const std::string& name : names) {
    Sample s = load_sample(idx.image_paths.at(name), idx.mask_paths.at(name),
                           cfg.input_size, cfg.num_classes);
    s.image = adapt_channels(s.image, cfg.input_channels);
    out.push_back(std::move(s));
  }
  return out;
}

void print_metrics(const MetricsReport& m) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << "Images   " << m.images << "\n"
     << "Dice     " << m.dice << "\n"
     << "IoU      " << m.iou << "\n"
     << "Acc      " << m.acc << "\n"
     << "MAE      " << m.mae << "\n";
  if (m.dice_per_class.size() > 1) {
    for (size_t c = 0; c < m.dice_per_class.size(); ++c) {
      os << "  class " << c + 1 << "   Dice " << m.dice_per_class[c]
         << "   IoU " << m.iou_per_class[c] << "\n";
    }
  }
  std::cout << os.str() << std::flush;
}

struct TrainArgs {
  std::string config_path;
  std::string data_dir;
  bool synthetic = false;
  std::string out_path;
  int64_t steps = 2000;
  int64_t batch_size = 8;
  double lr = 1e-3;
  bool no_augment = false;
};

void cmd_train(const TrainArgs& a) {
  if (!a.synthetic && a.data_dir.empty()) {
    throw ConfigError("train needs --data <dir> or --synthetic");
  }
  ModelConfig cfg = ModelConfig::load_file(a.config_path);
  QTSegModel model = QTSegModel::build(cfg);

  std::vector<Sample> train_set, held_out;
  if (a.synthetic) {
    train_set = synth_dataset(200, cfg.input_size, cfg.num_classes, cfg.seed);
    held_out = synth_dataset(50, cfg.input_size, cfg.num_classes, cfg.seed + 1);
    for (Sample& s : train_set) s.image = adapt_channels(s.image, cfg.input_channels);
    for (Sample& s : held_out) s.image = adapt_channels(s.image, cfg.input_channels);
  } else {
    DatasetIndex idx = scan_dataset(a.data_dir);
    train_set = load_named_samples(idx, idx.names, cfg);
  }

  TrainOptions opt;
  opt.max_steps = a.steps;
  opt.batch_size = a.batch_size;
  opt.base_lr = a.lr;
  opt.augment = !a.no_augment;
  opt.shuffle_seed = cfg.seed;
  TrainResult res = train_model(model, train_set, held_out, opt);

  save_model(a.out_path, model);
  std::cout << "saved " << a.out_path << " after " << res.steps << " steps\n";
  if (!held_out.empty()) print_metrics(res.final_metrics);
}

struct EvalArgs {
  std::string ckpt_path;
  std::string data_dir;
  int fold = -1;
  int folds = 0;
};

void cmd_eval(const EvalArgs& a) {
  QTSegModel model = load_model(a.ckpt_path);
  DatasetIndex idx = scan_dataset(a.data_dir);

  std::vector<std::string> names = idx.names;
  if (a.folds != 0 || a.fold >= 0) {
    if (a.folds == 0 || a.fold < 0) {
      throw ConfigError("--fold and --folds must be given together");
    }
    names = kfold_split(idx.names_per_class, a.folds, a.fold).test;
  }
  std::vector<Sample> samples = load_named_samples(idx, names, model.config);
  print_metrics(evaluate_model(model, samples));
}

struct PredictArgs {
  std::string ckpt_path;
  std::string image_path;
  std::string out_path;
};

void cmd_predict(const PredictArgs& a) {
  QTSegModel model = load_model(a.ckpt_path);
  const ModelConfig& cfg = model.config;

  Tensor image = io::read_image(a.image_path);
  image = ops::resize_to(image, cfg.input_size, cfg.input_size,
                         ops::ResizeMode::kBilinear);
  image = adapt_channels(image, cfg.input_channels);

  Tensor labels = predict_labels(model.forward(image), cfg.num_classes);
  io::write_mask_png(a.out_path, labels, cfg.num_classes);
  std::cout << "wrote " << a.out_path << "\n";
}

struct InspectArgs {
  std::string config_path;
  int64_t input_size = 0;
};

void cmd_inspect(const InspectArgs& a) {
  ModelConfig cfg = a.config_path.empty() ? ModelConfig{}
                                          : ModelConfig::load_file(a.config_path);
  const int64_t size = a.input_size > 0 ? a.input_size : cfg.input_size;
  std::cout << format_report(count_flops(cfg, size)) << std::flush;
}

struct SplitArgs {
  std::string data_dir;
  int folds = 5;
  std::string out_dir;
};

void write_manifest(const std::filesystem::path& path,
                    const std::vector<std::string>& names) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const std::string& name : names) out << name << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

void cmd_split_folds(const SplitArgs& a) {
  DatasetIndex idx = scan_dataset(a.data_dir);
  const std::filesystem::path out_dir =
      a.out_dir.empty() ? a.data_dir : a.out_dir;
  std::filesystem::create_directories(out_dir);

  for (int k = 0; k < a.folds; ++k) {
    FoldSpec fs = kfold_split(idx.names_per_class, a.folds, k);
    const std::string tag = "fold_" + std::to_string(k);
    write_manifest(out_dir / (tag + "_train.txt"), fs.train);
    write_manifest(out_dir / (tag + "_test.txt"), fs.test);
  }
  std::cout << "wrote " << 2 * a.folds << " manifests to " << out_dir.string()
            << "\n";
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"QTSeg: query-token segmentation for 2D medical images"};
  app.require_subcommand(1);

  TrainArgs ta;
  CLI::App* train = app.add_subcommand("train", "Fit a model and save a checkpoint");
  train->add_option("--config", ta.config_path, "model configuration JSON")
      ->required();
  CLI::Option* data = train->add_option("--data", ta.data_dir,
                                        "dataset directory (images/ + masks/)");
  CLI::Option* synth =
      train->add_flag("--synthetic", ta.synthetic, "built-in synthetic task");
  data->excludes(synth);
  synth->excludes(data);
  train->add_option("--out", ta.out_path, "checkpoint output path")->required();
  train->add_option("--steps", ta.steps, "optimization step budget");
  train->add_option("--batch-size", ta.batch_size, "mini-batch size");
  train->add_option("--lr", ta.lr, "base learning rate");
  train->add_flag("--no-augment", ta.no_augment, "disable flip/rotation augmentation");
  train->callback([&ta] { cmd_train(ta); });

  EvalArgs ea;
  CLI::App* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  eval->add_option("--ckpt", ea.ckpt_path, "checkpoint path")->required();
  eval->add_option("--data", ea.data_dir, "dataset directory")->required();
  eval->add_option("--fold", ea.fold, "evaluate this fold's test split");
  eval->add_option("--folds", ea.folds, "total fold count");
  eval->callback([&ea] { cmd_eval(ea); });

  PredictArgs pa;
  CLI::App* predict =
      app.add_subcommand("predict", "Segment one image into a PNG mask");
  predict->add_option("--ckpt", pa.ckpt_path, "checkpoint path")->required();
  predict->add_option("--image", pa.image_path, "input image")->required();
  predict->add_option("--out", pa.out_path, "output mask PNG")->required();
  predict->callback([&pa] { cmd_predict(pa); });

  InspectArgs ia;
  CLI::App* inspect =
      app.add_subcommand("inspect", "Print the parameter/FLOP report");
  inspect->add_option("--config", ia.config_path,
                      "model configuration JSON (default config if omitted)");
  inspect->add_option("--input-size", ia.input_size,
                      "override the accounting input size");
  inspect->callback([&ia] { cmd_inspect(ia); });

  SplitArgs sa;
  CLI::App* split =
      app.add_subcommand("split-folds", "Write deterministic fold manifests");
  split->add_option("--data", sa.data_dir, "dataset directory")->required();
  split->add_option("--folds", sa.folds, "fold count")->required();
  split->add_option("--out", sa.out_dir, "manifest directory (default: --data)");
  split->callback([&sa] { cmd_split_folds(sa); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 4;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace qtseg
