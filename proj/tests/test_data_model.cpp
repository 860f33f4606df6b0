#include "test_util.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

using namespace imputmae;
namespace fs = std::filesystem;

namespace {

const std::map<ModalityKind, ModalitySpec>& micro_specs() {
  static const auto specs = micro_profile().specs;
  return specs;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("imputmae_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

std::set<std::string> ids(const Dataset& ds) {
  std::set<std::string> out;
  for (const auto& r : ds.records) out.insert(r.id);
  return out;
}

}  // namespace

TEST(LoadDataset, PresenceMirrorsFiles) {
  Dataset ds = synthesize_dataset(3, micro_specs(), {}, 1);
  const fs::path root = fresh_dir("presence");
  save_dataset(ds, root);
  fs::remove(root / ds.records[1].id / io::file_name(ModalityKind::MRI));
  Dataset back = load_dataset(root, micro_specs());
  ASSERT_EQ(back.size(), 3u);
  EXPECT_TRUE(back.records[0].presence().at(ModalityKind::MRI));
  EXPECT_FALSE(back.records[1].presence().at(ModalityKind::MRI));
  EXPECT_TRUE(back.records[2].presence().at(ModalityKind::MRI));
  EXPECT_EQ(back.records[0].modalities.at(ModalityKind::RNA), ds.records[0].modalities.at(ModalityKind::RNA));
  EXPECT_EQ(back.records[2].label.event, ds.records[2].label.event);
  fs::remove_all(root);
}

TEST(LoadDataset, RejectsNonPositiveTime) {
  const fs::path root = fresh_dir("time");
  std::ofstream(root / "manifest.json") << R"([{"id": "A", "time_days": -5, "event": 1, "clinical": null, "modalities": {}}])";
  EXPECT_NE(error_of([&] { load_dataset(root, micro_specs()); }).find("non-positive survival time"), std::string::npos);
  fs::remove_all(root);
}

TEST(LoadDataset, RejectsBetaOutOfRange) {
  const fs::path root = fresh_dir("beta");
  std::ofstream(root / "manifest.json")
      << R"([{"id": "A", "time_days": 10, "event": 1, "clinical": null, "modalities": {"dnam": "a.csv"}}])";
  {
    std::ofstream csv(root / "a.csv");
    for (int i = 0; i < 10; ++i) csv << (i == 4 ? 1.7 : 0.5) << "\n";
  }
  EXPECT_NE(error_of([&] { load_dataset(root, micro_specs()); }).find("beta value out of [0,1]"), std::string::npos);
  fs::remove_all(root);
}

TEST(LoadDataset, WrongShapeNamesPatientAndModality) {
  const fs::path root = fresh_dir("shape");
  std::ofstream(root / "manifest.json")
      << R"([{"id": "B7", "time_days": 10, "event": 0, "clinical": null, "modalities": {"rna": "r.csv"}}])";
  {
    std::ofstream csv(root / "r.csv");
    for (int i = 0; i < 5; ++i) csv << 1.0 << "\n";
  }
  const std::string msg = error_of([&] { load_dataset(root, micro_specs()); });
  EXPECT_NE(msg.find("B7"), std::string::npos);
  EXPECT_NE(msg.find("rna"), std::string::npos);
  fs::remove_all(root);
}

TEST(LoadDataset, RejectsNonFiniteAndMissingManifest) {
  const fs::path root = fresh_dir("nan");
  EXPECT_THROW(load_dataset(root, micro_specs()), Error);
  std::ofstream(root / "manifest.json")
      << R"([{"id": "A", "time_days": 10, "event": 0, "clinical": null, "modalities": {"rna": "r.csv"}}])";
  {
    std::ofstream csv(root / "r.csv");
    for (int i = 0; i < 12; ++i) csv << (i == 3 ? "nan" : "1.0") << "\n";
  }
  EXPECT_NE(error_of([&] { load_dataset(root, micro_specs()); }).find("non-finite"), std::string::npos);
  fs::remove_all(root);
}

TEST(Synthesize, DeterministicUnderSeed) {
  Dataset a = synthesize_dataset(100, micro_specs(), {}, 7);
  Dataset b = synthesize_dataset(100, micro_specs(), {}, 7);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.records[i].modalities, b.records[i].modalities);
    EXPECT_EQ(a.records[i].clinical, b.records[i].clinical);
    EXPECT_EQ(a.records[i].label.time, b.records[i].label.time);
    EXPECT_EQ(a.records[i].label.event, b.records[i].label.event);
  }
  Dataset c = synthesize_dataset(100, micro_specs(), {}, 8);
  EXPECT_NE(a.records[0].modalities, c.records[0].modalities);
}

TEST(Synthesize, MissingRateBinomialBoundAndRegressionCount) {
  Dataset ds = synthesize_dataset(200, micro_specs(), {{ModalityKind::MRI, 0.5}}, 7);
  const std::size_t n_mri = ds.count_present(ModalityKind::MRI);
  EXPECT_GE(n_mri, 80u);
  EXPECT_LE(n_mri, 120u);
  EXPECT_EQ(n_mri, 94u);  // recorded from this seeded run
  EXPECT_EQ(ds.count_present(ModalityKind::RNA), 200u);
}

TEST(Synthesize, PreconditionErrors) {
  EXPECT_NE(error_of([] { synthesize_dataset(10, micro_specs(), {{ModalityKind::RNA, 0.3}}, 1); })
                .find("RNA must always be present"),
            std::string::npos);
  EXPECT_THROW(synthesize_dataset(0, micro_specs(), {}, 1), Error);
  EXPECT_THROW(synthesize_dataset(5, micro_specs(), {{ModalityKind::MRI, 1.5}}, 1), Error);
  EXPECT_THROW(synthesize_dataset(5, micro_specs(), {{ModalityKind::MRI, -0.1}}, 1), Error);
}

TEST(Synthesize, CensoringAndValueRanges) {
  Dataset ds = synthesize_dataset(500, micro_specs(), {}, 3);
  std::size_t censored = 0;
  for (const auto& r : ds.records) {
    censored += r.label.event ? 0 : 1;
    EXPECT_GT(r.label.time, 0.0);
    for (Scalar v : r.modalities.at(ModalityKind::DNAM).data) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
    EXPECT_EQ(r.modalities.at(ModalityKind::WSI).shape[0], 10u);
  }
  const Scalar frac = static_cast<Scalar>(censored) / 500.0;
  EXPECT_GT(frac, 0.15);
  EXPECT_LT(frac, 0.45);
}

// Held-out R^2 of a least-squares predictor from RNA to each other modality.
TEST(Synthesize, CrossModalityLinearPredictability) {
  Dataset ds = synthesize_dataset(500, micro_specs(), {}, 11);
  auto matrix = [&](ModalityKind k, std::size_t from, std::size_t to) {
    const std::size_t dim = k == ModalityKind::WSI ? micro_specs().at(k).raw_size()
                                                   : ds.records[0].modalities.at(k).size();
    Mat m(static_cast<Eigen::Index>(to - from), static_cast<Eigen::Index>(dim));
    for (std::size_t i = from; i < to; ++i)
      for (std::size_t j = 0; j < dim; ++j)
        m(static_cast<Eigen::Index>(i - from), static_cast<Eigen::Index>(j)) =
            ds.records[i].modalities.at(k).data[j];
    return m;
  };
  auto with_bias = [](const Mat& x) {
    Mat out(x.rows(), x.cols() + 1);
    out << x, Mat::Ones(x.rows(), 1);
    return out;
  };
  const Mat x_train = with_bias(matrix(ModalityKind::RNA, 0, 400));
  const Mat x_test = with_bias(matrix(ModalityKind::RNA, 400, 500));
  for (auto k : {ModalityKind::DNAM, ModalityKind::MRI, ModalityKind::WSI}) {
    const Mat y_train = matrix(k, 0, 400), y_test = matrix(k, 400, 500);
    const Mat w = x_train.colPivHouseholderQr().solve(y_train);
    const Mat resid = y_test - x_test * w;
    const Mat centered = y_test.rowwise() - y_train.colwise().mean();
    const Scalar r2 = 1.0 - resid.squaredNorm() / centered.squaredNorm();
    EXPECT_GT(r2, 0.2) << modality_name(k);
  }
}

TEST(Split, EightyTwenty) {
  Dataset ds = synthesize_dataset(100, micro_specs(), {}, 2);
  auto [train, test] = split_train_test(ds, 0.2, 5);
  EXPECT_EQ(train.size(), 80u);
  EXPECT_EQ(test.size(), 20u);
  std::set<std::string> all = ids(train), t = ids(test);
  for (const auto& id : t) EXPECT_TRUE(all.insert(id).second);
  EXPECT_EQ(all, ids(ds));
}

TEST(Split, TinyDatasetKeepsOneTestRecord) {
  Dataset ds = synthesize_dataset(5, micro_specs(), {}, 2);
  auto [train, test] = split_train_test(ds, 0.2, 1);
  EXPECT_EQ(train.size(), 4u);
  EXPECT_EQ(test.size(), 1u);
}

TEST(Split, DeterministicAndStratified) {
  Dataset ds = synthesize_dataset(100, micro_specs(), {}, 4);
  auto a = split_train_test(ds, 0.2, 9), b = split_train_test(ds, 0.2, 9);
  EXPECT_EQ(ids(a.second), ids(b.second));
  std::size_t events = 0, test_events = 0;
  for (const auto& r : ds.records) events += r.label.event;
  for (const auto& r : a.second.records) test_events += r.label.event;
  EXPECT_LE(std::abs(static_cast<double>(test_events) - 0.2 * static_cast<double>(events)), 1.0);
  EXPECT_THROW(split_train_test(ds, 0.0, 1), Error);
  EXPECT_THROW(split_train_test(ds, 1.0, 1), Error);
}

TEST(KFold, FiveFoldsOfTwenty) {
  Dataset ds = synthesize_dataset(100, micro_specs(), {}, 2);
  auto folds = kfold_split(ds, 5, 3);
  ASSERT_EQ(folds.size(), 5u);
  std::multiset<std::string> seen;
  for (const auto& [train, valid] : folds) {
    EXPECT_EQ(valid.size(), 20u);
    EXPECT_EQ(train.size(), 80u);
    for (const auto& r : valid.records) seen.insert(r.id);
  }
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_EQ(std::set<std::string>(seen.begin(), seen.end()), ids(ds));
}

TEST(KFold, LeaveOneOut) {
  Dataset ds = synthesize_dataset(10, micro_specs(), {}, 2);
  auto folds = kfold_split(ds, 10, 3);
  ASSERT_EQ(folds.size(), 10u);
  for (const auto& [train, valid] : folds) {
    EXPECT_EQ(valid.size(), 1u);
    EXPECT_EQ(train.size(), 9u);
  }
  EXPECT_THROW(kfold_split(ds, 11, 3), Error);
  EXPECT_THROW(kfold_split(ds, 1, 3), Error);
}
