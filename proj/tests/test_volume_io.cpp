/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "thalseg/volume_io.hpp"

using namespace thalseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("thalseg_io_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Volume sample_volume(VoxelType dtype) {
  Geometry g;
  g.shape = {5, 4, 3};
  g.spacing = {0.7, 0.5, 0.7};
  g.orientation = kCanonicalOrientation;
  g.affine = Affine::Identity();
  g.affine(0, 0) = 0.7;
  g.affine(1, 1) = 0.5;
  g.affine(2, 2) = 0.7;
  g.affine(0, 3) = -1.4;
  g.affine(1, 3) = -0.75;
  g.affine(2, 3) = -0.7;
  std::vector<double> data(static_cast<size_t>(g.voxels()));
  for (size_t i = 0; i < data.size(); ++i) {
    switch (dtype) {
      case VoxelType::U8: data[i] = static_cast<double>(i % 251); break;
      case VoxelType::I16: data[i] = static_cast<double>(static_cast<int>(i) * 37 - 900); break;
      case VoxelType::I32: data[i] = static_cast<double>(static_cast<int>(i) * 100003 - 11); break;
      case VoxelType::F32: data[i] = static_cast<double>(0.125f * static_cast<float>(i) - 3.5f); break;
      case VoxelType::F64: data[i] = 0.1 * static_cast<double>(i) - 2.000000001; break;
    }
  }
  return Volume(g, std::move(data), Contrast::WMN, dtype);
}

}  // namespace

TEST_CASE("write/read round-trips data, spacing, affine and datatype") {
  TempDir tmp;
  for (VoxelType t : {VoxelType::U8, VoxelType::I16, VoxelType::I32, VoxelType::F32,
                      VoxelType::F64}) {
    for (const char* name : {"vol.nii", "vol.nii.gz"}) {
      const Volume v = sample_volume(t);
      const fs::path p = tmp.path / name;
      write_nifti(v, p);
      const Volume r = read_volume(p);
      CHECK(r.dtype() == t);
      CHECK(r.geo().shape == v.geo().shape);
      for (int k = 0; k < 3; ++k)
        CHECK(r.geo().spacing[k] == doctest::Approx(v.geo().spacing[k]).epsilon(1e-6));
      // affine stored as float32 rows
      CHECK((r.geo().affine - v.geo().affine).cwiseAbs().maxCoeff() < 1e-6);
      if (t == VoxelType::F64) {
        CHECK(r.data() == v.data());  // bit exact
      } else {
        for (size_t i = 0; i < r.data().size(); ++i) CHECK(r.data()[i] == v.data()[i]);
      }
    }
  }
}

TEST_CASE("label maps round-trip with their intent tag") {
  TempDir tmp;
  Geometry g;
  g.shape = {4, 4, 4};
  g.spacing = {1, 1, 1};
  g.affine = Affine::Identity();
  std::vector<int32_t> labels(64, 0);
  labels[10] = 5;
  labels[32] = 12;
  const LabelMap m(g, labels, &Taxonomy::nuclei());
  const fs::path p = tmp.path / "labels.nii.gz";
  write_nifti(m, p);

  const LabelMap r = read_labelmap(p, Taxonomy::nuclei());
  CHECK(r.labels() == m.labels());
  CHECK(r.dtype() == VoxelType::I16);

  // generic reader recognizes the label intent
  const auto any = read_nifti(p);
  CHECK(std::holds_alternative<LabelMap>(any));

  // an all-zero label map round-trips as zeros
  const LabelMap zeros(g, std::vector<int32_t>(64, 0), &Taxonomy::nuclei());
  write_nifti(zeros, tmp.path / "zeros.nii.gz");
  CHECK(read_labelmap(tmp.path / "zeros.nii.gz", Taxonomy::nuclei()).labels() ==
        std::vector<int32_t>(64, 0));
}

TEST_CASE("reader rejects bad magic, unsupported types and truncation") {
  TempDir tmp;
  const Volume v = sample_volume(VoxelType::F32);
  const fs::path good = tmp.path / "good.nii";
  write_nifti(v, good);

  SUBCASE("bad magic") {
    auto bytes = [&] {
      std::ifstream in(good, std::ios::binary);
      return std::string((std::istreambuf_iterator<char>(in)), {});
    }();
    bytes[344] = 'x';
    std::ofstream out(tmp.path / "badmagic.nii", std::ios::binary);
    out << bytes;
    out.close();
    CHECK_THROWS_WITH_AS(read_volume(tmp.path / "badmagic.nii"),
                         doctest::Contains("magic"), Error);
  }

  SUBCASE("unsupported datatype code is named") {
    auto bytes = [&] {
      std::ifstream in(good, std::ios::binary);
      return std::string((std::istreambuf_iterator<char>(in)), {});
    }();
    bytes[70] = 32;  // complex64
    bytes[71] = 0;
    std::ofstream out(tmp.path / "cplx.nii", std::ios::binary);
    out << bytes;
    out.close();
    CHECK_THROWS_WITH_AS(read_volume(tmp.path / "cplx.nii"), doctest::Contains("32"), Error);
  }

  SUBCASE("truncated data section -> corruption error, no partial volume") {
    auto bytes = [&] {
      std::ifstream in(good, std::ios::binary);
      return std::string((std::istreambuf_iterator<char>(in)), {});
    }();
    std::ofstream out(tmp.path / "trunc.nii", std::ios::binary);
    out << bytes.substr(0, bytes.size() - 40);
    out.close();
    CHECK_THROWS_WITH_AS(read_volume(tmp.path / "trunc.nii"),
                         doctest::Contains("truncated"), Error);
  }

  SUBCASE("missing file") { CHECK_THROWS_AS(read_volume(tmp.path / "nope.nii"), Error); }
}

TEST_CASE("sform spacing 0.7x0.5x0.7 is parsed back exactly enough") {
  TempDir tmp;
  const Volume v = sample_volume(VoxelType::F32);
  write_nifti(v, tmp.path / "sp.nii");
  const Volume r = read_volume(tmp.path / "sp.nii");
  CHECK(r.geo().spacing[0] == doctest::Approx(0.7).epsilon(1e-6));
  CHECK(r.geo().spacing[1] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(r.geo().spacing[2] == doctest::Approx(0.7).epsilon(1e-6));
  CHECK(r.geo().orientation.str() == "RAS");
}

TEST_CASE("volumes with NaN are rejected at write") {
  TempDir tmp;
  Volume v = sample_volume(VoxelType::F32);
  v.mutable_data()[7] = std::nan("");
  CHECK_THROWS_AS(write_nifti(v, tmp.path / "nan.nii"), Error);
}

TEST_CASE("manifest loads, counts cohorts and validates") {
  TempDir tmp;
  const Volume v = sample_volume(VoxelType::F32);
  for (int i = 0; i < 4; ++i) write_nifti(v, tmp.path / ("img" + std::to_string(i) + ".nii"));

  SUBCASE("cohort counts are reported per cohort") {
    std::ofstream out(tmp.path / "manifest.tsv");
    out << "subject_id\timage\tlabels\tcohort\tfield\tcontrast\n";
    out << "s0\timg0.nii\t-\tcontrol\t7T\twmn\n";
    out << "s1\timg1.nii\t-\tms\t7T\twmn\n";
    out << "s2\timg2.nii\t-\tms\t7T\twmn\n";
    out << "s3\timg3.nii\t-\tet\t3T\twmn\n";
    out.close();
    const DatasetManifest m = load_manifest(tmp.path / "manifest.tsv");
    CHECK(m.size() == 4);
    CHECK(m.cohort_count(Cohort::CONTROL) == 1);
    CHECK(m.cohort_count(Cohort::MS) == 2);
    CHECK(m.cohort_count(Cohort::ET) == 1);
    CHECK(m.entries[0].image_path.is_absolute());
  }

  SUBCASE("empty manifest is valid with zero entries") {
    std::ofstream(tmp.path / "empty.tsv").close();
    CHECK(load_manifest(tmp.path / "empty.tsv").size() == 0);
  }

  SUBCASE("missing file fails naming the path") {
    std::ofstream out(tmp.path / "broken.tsv");
    out << "subject_id\timage\tlabels\tcohort\tfield\tcontrast\n";
    out << "s0\tdoes_not_exist.nii\t-\tcontrol\t7T\twmn\n";
    out.close();
    CHECK_THROWS_WITH_AS(load_manifest(tmp.path / "broken.tsv"),
                         doctest::Contains("does_not_exist.nii"), Error);
  }

  SUBCASE("duplicate ids and unknown tags are itemized") {
    std::ofstream out(tmp.path / "dup.tsv");
    out << "subject_id\timage\tlabels\tcohort\tfield\tcontrast\n";
    out << "s0\timg0.nii\t-\tcontrol\t7T\twmn\n";
    out << "s0\timg1.nii\t-\tbananas\t7T\twmn\n";
    out.close();
    try {
      load_manifest(tmp.path / "dup.tsv");
      FAIL("expected validation failure");
    } catch (const Error& e) {
      const std::string msg = e.what();
      CHECK(msg.find("duplicate") != std::string::npos);
      CHECK(msg.find("bananas") != std::string::npos);
    }
  }

  SUBCASE("save/load round trip") {
    DatasetManifest m;
    m.entries.push_back({"a", tmp.path / "img0.nii", tmp.path / "img1.nii", Cohort::SYNTHETIC,
                         FieldStrength::NA, Contrast::WMN});
    m.entries.push_back({"b", tmp.path / "img2.nii", std::nullopt, Cohort::CONTROL,
                         FieldStrength::T7, Contrast::CSFN});
    save_manifest(m, tmp.path / "rt.tsv");
    const DatasetManifest r = load_manifest(tmp.path / "rt.tsv");
    REQUIRE(r.size() == 2);
    CHECK(r.entries[0].subject_id == "a");
    CHECK(r.entries[0].label_path.has_value());
    CHECK(!r.entries[1].label_path.has_value());
    CHECK(r.entries[1].contrast == Contrast::CSFN);
  }
}

TEST_CASE("loading never mutates the file on disk") {
  TempDir tmp;
  const Volume v = sample_volume(VoxelType::I16);
  const fs::path p = tmp.path / "ro.nii.gz";
  write_nifti(v, p);
  auto bytes = [&] {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
  };
  const std::string before = bytes();
  (void)read_volume(p);
  (void)read_volume(p);
  CHECK(bytes() == before);
}
