#include <doctest.h>

#include <algorithm>

#include "protodistill/pipeline.hpp"

using namespace protodistill;

TEST_SUITE("teacher training") {
  TEST_CASE("default data: four-block teacher fits within thirty epochs") {
    const auto data = generate(SyntheticSpec{}, 0);
    auto teacher = init_model(ModelConfig::teacher_default(), 0);
    TeacherRecipe recipe;
    REQUIRE(recipe.train.epochs <= 30);
    const auto result = train_teacher(teacher, data.train, recipe, 0);
    REQUIRE(result.history.size() == static_cast<std::size_t>(recipe.train.epochs));
    const double train_acc = accuracy(teacher, data.train);
    const double test_acc = accuracy(teacher, data.test);
    MESSAGE("train " << train_acc << " test " << test_acc);
    CHECK(train_acc >= 0.95);
    CHECK(test_acc >= 0.90);
  }

  TEST_CASE("shuffled motifs leave the teacher at chance on held-out data") {
    SyntheticSpec spec;
    spec.shuffle_motifs = true;
    const auto data = generate(spec, 0);
    auto teacher = init_model(ModelConfig::teacher_default(), 0);
    train_teacher(teacher, data.train, TeacherRecipe{}, 0);
    const double test_acc = accuracy(teacher, data.test);
    MESSAGE("shuffled test " << test_acc);
    // 80 test images, chance 1/8: the bound sits about 3.4 standard deviations above chance.
    CHECK(test_acc <= 0.25);
  }
}
