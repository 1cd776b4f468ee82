#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "metalens/cli/commands.hpp"
#include "metalens/io/png_io.hpp"
#include "metalens/optics/scene.hpp"

// Full command-line pipeline on one 64x64 pair. Takes tens of minutes on a
// single core, so it is only registered with the slow suite.
TEST(CliPipeline, SinglePairOverfitsThroughEveryCommand) {
  namespace fs = std::filesystem;
  using metalens::cli::run;
  const fs::path root = fs::temp_directory_path() / "metalens_cli_pipeline";
  fs::remove_all(root);
  fs::create_directories(root / "clean");
  metalens::io::write_png(root / "clean" / "scene.png", metalens::optics::random_scene(31, 64, 64), 16);
  const std::string r = root.string();

  ASSERT_EQ(run({"synth-psf", "--kernel", "9", "--severity", "1", "--seed", "1", "--out", r + "/psf.mltn"}), 0);
  ASSERT_EQ(run({"simulate", "--clean", r + "/clean", "--psf", r + "/psf.mltn", "--seed", "2", "--out", r + "/sim"}),
            0);
  ASSERT_EQ(run({"train", "--pairs", r + "/sim/manifest.json", "--steps", "2000", "--seed", "3", "--out",
                 r + "/model.mlck"}),
            0);
  ASSERT_EQ(run({"restore", "--in", r + "/sim/scene.png", "--psf", r + "/psf.mltn", "--ckpt", r + "/model.mlck",
                 "--out", r + "/restored/scene.png"}),
            0);
  ASSERT_EQ(run({"eval", "--restored", r + "/restored", "--clean", r + "/clean", "--report", r + "/report.json",
                 "--ckpt", r + "/model.mlck"}),
            0);

  std::ifstream in(root / "report.json");
  const auto report = nlohmann::json::parse(in);
  const double db = report.at("aggregate").at("psnr_db").get<double>();
  std::printf("restored PSNR %.2f dB\n", db);
  EXPECT_GT(db, 35.0);
  fs::remove_all(root);
}
