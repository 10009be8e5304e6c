// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#include "helpers.hpp"

#include <fstream>
#include <map>
#include <set>

#include "dolg/dataset.hpp"

using namespace dolg;

TEST_CASE("dataset manifest round trip with relative paths") {
  const std::string dir = testutil::scratch_dir("manifest");
  std::filesystem::create_directories(dir + "/sub");
  save_dataset_manifest(dir + "/m.txt", {{"sub/a.ppm", 0}, {"sub/b.ppm", 1}, {"sub/c.ppm", 1}});
  const LabeledDataset ds = load_dataset_manifest(dir + "/m.txt");
  REQUIRE(ds.items.size() == 3);
  REQUIRE(ds.class_count == 2);
  REQUIRE(ds.items[0].id == "a");
  REQUIRE(ds.items[0].label == 0);
  REQUIRE(ds.items[1].path.find(dir) == 0);  // resolved against the manifest dir
}

TEST_CASE("malformed manifest rows are reported with their line number") {
  const std::string dir = testutil::scratch_dir("manifest-bad");
  {
    std::ofstream out(dir + "/m.txt");
    out << "img0.ppm 0\n";
    out << "img1.ppm not-a-label\n";
  }
  try {
    load_dataset_manifest(dir + "/m.txt");
    FAIL("expected data_error");
  } catch (const data_error& e) {
    REQUIRE(std::string(e.what()).find("line 2") != std::string::npos);
  }
  REQUIRE_THROWS_AS(load_dataset_manifest(dir + "/missing.txt"), data_error);
}

TEST_CASE("stratified split keeps both sides non-empty per class") {
  LabeledDataset ds;
  ds.class_count = 3;
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < 10; ++k)
      ds.items.push_back({"p" + std::to_string(c * 10 + k), "id", c});
  const SplitIndices split = stratified_split(ds, 0.8, 7);
  REQUIRE(split.train.size() == 24);
  REQUIRE(split.val.size() == 6);

  std::map<int, int> train_per_class, val_per_class;
  for (std::size_t i : split.train) ++train_per_class[ds.items[i].label];
  for (std::size_t i : split.val) ++val_per_class[ds.items[i].label];
  for (int c = 0; c < 3; ++c) {
    REQUIRE(train_per_class[c] == 8);
    REQUIRE(val_per_class[c] == 2);
  }

  // partition: no index in both sides, all indices covered
  std::set<std::size_t> seen(split.train.begin(), split.train.end());
  for (std::size_t i : split.val) REQUIRE(seen.insert(i).second);
  REQUIRE(seen.size() == ds.items.size());

  // deterministic per seed
  const SplitIndices again = stratified_split(ds, 0.8, 7);
  REQUIRE(again.train == split.train);
  const SplitIndices other = stratified_split(ds, 0.8, 8);
  REQUIRE(other.train != split.train);

  REQUIRE_THROWS_AS(stratified_split(ds, 0.0, 1), config_error);
  REQUIRE_THROWS_AS(stratified_split(ds, 1.0, 1), config_error);
}

TEST_CASE("random resized crop is deterministic and in range") {
  Rng rng_img(1);
  Image img = Image::blank(40, 40);
  for (auto& v : img.data) v = rng_img.uniform();
  AugmentConfig cfg;
  Rng a(5), b(5);
  const Image ia = random_resized_crop(img, a, cfg, 32);
  const Image ib = random_resized_crop(img, b, cfg, 32);
  REQUIRE(ia.height == 32);
  REQUIRE(ia.width == 32);
  REQUIRE(ia.data == ib.data);
  for (double v : ia.data) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
}

TEST_CASE("ppm io round trip") {
  const std::string dir = testutil::scratch_dir("ppm");
  Rng rng(2);
  Image img = Image::blank(9, 13);
  for (auto& v : img.data) v = rng.uniform();
  write_ppm(dir + "/x.ppm", img);
  const Image back = read_ppm(dir + "/x.ppm");
  REQUIRE(back.height == 9);
  REQUIRE(back.width == 13);
  // 8-bit quantization
  for (std::size_t i = 0; i < img.data.size(); ++i)
    REQUIRE(std::abs(back.data[i] - img.data[i]) <= 0.5 / 255.0 + 1e-12);

  {
    std::ofstream out(dir + "/trunc.ppm", std::ios::binary);
    out << "P6\n4 4\n255\n";
    out << "abc";  // 3 bytes instead of 48
  }
  REQUIRE_THROWS_AS(read_ppm(dir + "/trunc.ppm"), format_error);
}

TEST_CASE("toy dataset generation: files, labels, ground truth, determinism") {
  const std::string dir = testutil::scratch_dir("toy");
  const ToyDatasetFiles files = generate_toy_dataset(dir + "/d1", 4, 8, 48, 99);

  const LabeledDataset ds = load_dataset_manifest(files.manifest);
  REQUIRE(ds.items.size() == 32);
  REQUIRE(ds.class_count == 4);

  const LabeledDataset queries = load_dataset_manifest(files.queries_manifest);
  REQUIRE(queries.items.size() == 4);

  const RetrievalGroundTruth gt = load_ground_truth(files.ground_truth);
  REQUIRE(gt.database.size() == 32);
  REQUIRE(gt.queries.size() == 4);
  for (const QueryGt& q : gt.queries) {
    REQUIRE(!q.easy.empty());
    REQUIRE(!q.hard.empty());
    // the query junks itself
    REQUIRE(std::find(q.junk.begin(), q.junk.end(), q.id) != q.junk.end());
  }
  REQUIRE(gt.queries[0].crop.has_value());
  REQUIRE(gt.queries[1].crop.has_value());

  // deterministic relative to the seed
  const ToyDatasetFiles again = generate_toy_dataset(dir + "/d2", 4, 8, 48, 99);
  const Image a = read_ppm(ds.items[5].path);
  const Image b = read_ppm(load_dataset_manifest(again.manifest).items[5].path);
  REQUIRE(a.data == b.data);

  // images of the same class at low severity look alike in hue; just verify
  // pixel range and that files decode
  for (double v : a.data) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
}

TEST_CASE("ground truth validation rejects inconsistent references") {
  RetrievalGroundTruth gt;
  gt.database = {"a", "b"};
  QueryGt q;
  q.id = "q";
  q.easy = {"a"};
  q.hard = {"zzz"};  // not in database
  gt.queries.push_back(q);
  REQUIRE_THROWS_AS(gt.validate(), data_error);

  gt.queries[0].hard = {"a"};  // overlaps easy
  REQUIRE_THROWS_AS(gt.validate(), data_error);

  gt.queries[0].hard = {"b"};
  REQUIRE_NOTHROW(gt.validate());
}
