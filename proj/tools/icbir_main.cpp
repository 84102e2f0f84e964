#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "icbir/commands.hpp"

namespace {

icbir::Orientation parse_render(const std::string& name) {
  return icbir::orientation_from_string(name);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Content-based retrieval for 3-D volumes: per-slice latent embeddings, "
      "prototype block-vote detection, gallery search, and voxel probability maps."};
  app.require_subcommand(1);

  // ---- gen-synthetic ----
  icbir::GenSyntheticArgs gen;
  CLI::App* sub_gen =
      app.add_subcommand("gen-synthetic", "Generate a phantom dataset with manifest");
  sub_gen->add_option("--out", gen.out_dir, "output directory")->required();
  sub_gen->add_option("--count", gen.train_per_class, "training volumes per class")
      ->capture_default_str();
  sub_gen->add_option("--test-count", gen.test_per_class, "test volumes per class")
      ->capture_default_str();
  sub_gen->add_option("--classes", gen.classes, "number of classes (must be 2)")
      ->capture_default_str();
  sub_gen->add_option("--grid", gen.grid, "cubic grid edge")->capture_default_str();
  sub_gen->add_option("--sigma", gen.noise_sigma, "additive noise sigma")
      ->capture_default_str();
  sub_gen->add_option("--jitter", gen.jitter, "max center jitter in voxels")
      ->capture_default_str();
  sub_gen
      ->add_option("--anomaly-scale", gen.anomaly_scale,
                   "inner-structure radius ratio, class 2 vs class 1")
      ->capture_default_str();
  sub_gen->add_option("--seed", gen.seed, "master seed")->capture_default_str();
  sub_gen->add_flag("--force", gen.force, "write into a non-empty directory");
  sub_gen->callback([&]() { icbir::cmd_gen_synthetic(gen, std::cout); });

  // ---- train ----
  icbir::TrainArgs train_args;
  CLI::App* sub_train =
      app.add_subcommand("train", "Train embeddings + prototypes, write a checkpoint");
  sub_train->add_option("--manifest", train_args.manifest_path, "dataset manifest")
      ->required();
  sub_train->add_option("--out", train_args.checkpoint_path, "checkpoint output path")
      ->required();
  icbir::RunConfig& rc = train_args.config;
  sub_train->add_option("--s", rc.s, "canonical grid edge")->capture_default_str();
  sub_train->add_option("--hidden", rc.h, "hidden width")->capture_default_str();
  sub_train->add_option("--latent", rc.l, "latent dimension")->capture_default_str();
  sub_train->add_option("--beta", rc.beta, "KL weight")->capture_default_str();
  sub_train->add_option("--gamma", rc.gamma, "classification weight")
      ->capture_default_str();
  sub_train->add_option("--lr", rc.lr, "Adam learning rate")->capture_default_str();
  sub_train->add_option("--epochs", rc.epochs, "training epochs")->capture_default_str();
  sub_train->add_option("--batch", rc.batch, "batch size in slices")
      ->capture_default_str();
  sub_train->add_option("--seed", rc.seed, "master seed")->capture_default_str();
  sub_train->add_option("--block-n", rc.block_n, "slices per block")
      ->capture_default_str();
  sub_train->add_option("--block-m", rc.block_m, "block stride")->capture_default_str();
  sub_train->add_option("--xi", rc.xi, "vote threshold(s), shared or per class")
      ->capture_default_str();
  sub_train->add_option("--r", rc.r, "orientations required for a volume label")
      ->capture_default_str();
  sub_train->add_option("--k", rc.k, "retrieval neighbors")->capture_default_str();
  sub_train->add_option("--highlight", rc.highlight, "overlay highlight threshold")
      ->capture_default_str();
  sub_train->add_option("--temperature", rc.temperature, "softmax temperature")
      ->capture_default_str();
  sub_train->add_option("--normal-class", rc.normal_class, "background class index")
      ->capture_default_str();
  sub_train->add_option("--class-names", rc.class_names, "class names, in label order")
      ->capture_default_str();
  sub_train->add_option("--threads", rc.threads, "worker threads (0 = auto)")
      ->capture_default_str();
  sub_train->callback([&]() { icbir::cmd_train(train_args, std::cout); });

  // ---- index ----
  icbir::IndexArgs index_args;
  CLI::App* sub_index =
      app.add_subcommand("index", "Build a gallery index from a manifest split");
  sub_index->add_option("--checkpoint", index_args.checkpoint_path, "checkpoint file")
      ->required();
  sub_index->add_option("--manifest", index_args.manifest_path, "dataset manifest")
      ->required();
  sub_index->add_option("--out", index_args.index_path, "index output path")
      ->required();
  sub_index->add_option("--split", index_args.split, "manifest split to index")
      ->capture_default_str();
  sub_index->add_option("--block-n", index_args.block_n,
                        "slices per block (0 = checkpoint value)");
  sub_index->add_option("--block-m", index_args.block_m,
                        "block stride (0 = checkpoint value)");
  sub_index->add_option("--threads", index_args.threads, "worker threads (0 = auto)");
  sub_index->callback([&]() { icbir::cmd_index(index_args, std::cout); });

  // ---- query ----
  icbir::QueryArgs query_args;
  CLI::App* sub_query =
      app.add_subcommand("query", "Rank gallery entries against a query volume");
  sub_query->add_option("--checkpoint", query_args.checkpoint_path, "checkpoint file")
      ->required();
  sub_query->add_option("--index", query_args.index_path, "gallery index")->required();
  sub_query->add_option("--volume", query_args.volume_path, "query volume")->required();
  sub_query->add_option("--k", query_args.k, "matches to return")
      ->capture_default_str();
  sub_query->add_option("--threads", query_args.threads, "worker threads (0 = auto)");
  sub_query->callback([&]() { icbir::cmd_query(query_args, std::cout); });

  // ---- detect ----
  icbir::DetectArgs detect_args;
  CLI::App* sub_detect =
      app.add_subcommand("detect", "Block-vote detection with per-section rationale");
  sub_detect->add_option("--checkpoint", detect_args.checkpoint_path, "checkpoint file")
      ->required();
  sub_detect->add_option("--volume", detect_args.volume_path, "volume to label")
      ->required();
  sub_detect->add_option("--xi", detect_args.knobs.xi,
                         "vote threshold(s) (default: checkpoint value)");
  sub_detect->add_option("--r", detect_args.knobs.r,
                         "orientations required (0 = checkpoint value)");
  sub_detect->add_option("--block-n", detect_args.knobs.block_n,
                         "slices per block (0 = checkpoint value)");
  sub_detect->add_option("--block-m", detect_args.knobs.block_m,
                         "block stride (0 = checkpoint value)");
  sub_detect->add_option("--temperature", detect_args.knobs.temperature,
                         "softmax temperature (0 = checkpoint value)");
  sub_detect->callback([&]() { icbir::cmd_detect(detect_args, std::cout); });

  // ---- probmap ----
  icbir::ProbmapArgs probmap_args;
  std::string probmap_mode = "mean";
  std::string probmap_render = "axial";
  CLI::App* sub_probmap = app.add_subcommand(
      "probmap", "Write per-class probability volumes and highlight overlays");
  sub_probmap
      ->add_option("--checkpoint", probmap_args.checkpoint_path, "checkpoint file")
      ->required();
  sub_probmap->add_option("--volume", probmap_args.volume_path, "volume to map")
      ->required();
  sub_probmap->add_option("--out", probmap_args.out_dir, "output directory")
      ->required();
  sub_probmap->add_option("--class", probmap_args.target_class,
                          "class to overlay (0 = every non-normal class)");
  sub_probmap->add_option("--threshold", probmap_args.threshold,
                          "highlight threshold (negative = checkpoint value)");
  sub_probmap->add_option("--temperature", probmap_args.knobs.temperature,
                          "softmax temperature (0 = checkpoint value)");
  sub_probmap->add_option("--mode", probmap_mode, "orientation aggregation")
      ->check(CLI::IsMember({"mean", "geometric"}))
      ->capture_default_str();
  sub_probmap->add_option("--render", probmap_render, "overlay slicing orientation")
      ->check(CLI::IsMember({"axial", "coronal", "sagittal"}))
      ->capture_default_str();
  sub_probmap->callback([&]() {
    probmap_args.mode = probmap_mode == "geometric" ? icbir::AggregateMode::Geometric
                                                    : icbir::AggregateMode::Mean;
    probmap_args.render = parse_render(probmap_render);
    icbir::cmd_probmap(probmap_args, std::cout);
  });

  // ---- eval ----
  icbir::EvalArgs eval_args;
  CLI::App* sub_eval = app.add_subcommand(
      "eval", "Detection + retrieval evaluation report over a manifest split");
  sub_eval->add_option("--checkpoint", eval_args.checkpoint_path, "checkpoint file")
      ->required();
  sub_eval->add_option("--index", eval_args.index_path, "gallery index")->required();
  sub_eval->add_option("--manifest", eval_args.manifest_path, "dataset manifest")
      ->required();
  sub_eval->add_option("--report", eval_args.report_path, "JSON report output path");
  sub_eval->add_option("--tsv", eval_args.tsv_path, "TSV summary output path");
  sub_eval->add_option("--split", eval_args.split, "manifest split to evaluate")
      ->capture_default_str();
  sub_eval->add_option("--xi", eval_args.knobs.xi,
                       "vote threshold(s) (default: checkpoint value)");
  sub_eval->add_option("--r", eval_args.knobs.r,
                       "orientations required (0 = checkpoint value)");
  sub_eval->add_option("--block-n", eval_args.knobs.block_n,
                       "slices per block (0 = checkpoint value)");
  sub_eval->add_option("--block-m", eval_args.knobs.block_m,
                       "block stride (0 = checkpoint value)");
  sub_eval->add_option("--temperature", eval_args.knobs.temperature,
                       "softmax temperature (0 = checkpoint value)");
  sub_eval->add_option("--threads", eval_args.threads, "worker threads (0 = auto)");
  sub_eval->callback([&]() { icbir::cmd_eval(eval_args, std::cout); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const icbir::Error& e) {
    std::cerr << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "[E_INTERNAL] " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
