#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "tmc/ensembles.hpp"
#include "tmc/errors.hpp"
#include "tmc/losses.hpp"

using tmc::BaseModel;
using tmc::Dataset;
using tmc::ModelCollection;
using tmc::ParamVector;
using tmc::TangentModel;

namespace {

std::shared_ptr<const BaseModel> shared_anchor(std::uint64_t seed = 1) {
    const tmc::NetworkSpec spec = tmc::make_mlp(5, {8}, 3);
    return std::make_shared<const BaseModel>(spec, tmc::he_init(spec, seed));
}

ParamVector random_delta(std::size_t dim, std::uint64_t seed, double scale = 0.3) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    std::vector<double> v(dim);
    for (double& x : v) x = normal(rng);
    return ParamVector(std::move(v));
}

std::vector<double> random_input(int dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> x(dim);
    for (double& v : x) v = normal(rng);
    return x;
}

// feature vectors that are one-hot encodings of the label
Dataset one_hot_dataset(const std::vector<int>& labels, int k) {
    std::vector<double> feats;
    for (int y : labels) {
        for (int i = 0; i < k; ++i) feats.push_back(i == y ? 1.0 : 0.0);
    }
    return Dataset(std::move(feats), k, labels, k);
}

}  // namespace

TEST_CASE("soup of identical members is that member") {
    const auto base = shared_anchor();
    const std::vector<BaseModel> members{*base, *base, *base};
    const std::vector<double> w{1.0 / 3, 1.0 / 3, 1.0 / 3};
    const BaseModel s = tmc::soup(members, w);
    CHECK(tmc::max_abs_diff(s.weights(), base->weights()) < 1e-15);
}

TEST_CASE("soup with weights [1,0] returns the first member") {
    const auto base = shared_anchor();
    const BaseModel other(base->spec(), random_delta(base->weights().dim(), 9, 1.0));
    const std::vector<BaseModel> members{*base, other};
    const BaseModel s = tmc::soup(members, std::vector<double>{1.0, 0.0});
    CHECK(tmc::max_abs_diff(s.weights(), base->weights()) == 0.0);
}

TEST_CASE("soup of tangent-expressed members bridges to compose_many") {
    const auto base = shared_anchor();
    const std::size_t dim = base->weights().dim();
    std::vector<TangentModel> tangents;
    std::vector<BaseModel> shifted;
    for (int i = 0; i < 3; ++i) {
        const ParamVector d = random_delta(dim, 20 + i);
        tangents.emplace_back(base, d, 1);
        shifted.emplace_back(base->spec(), tmc::add(base->weights(), d));
    }
    const std::vector<double> w{0.2, 0.5, 0.3};
    const BaseModel s = tmc::soup(shifted, w);
    const TangentModel composed = tmc::compose_many(tangents, w);
    const ParamVector as_weights = tmc::add(base->weights(), composed.delta());
    CHECK(tmc::max_abs_diff(s.weights(), as_weights) < 1e-10);
}

TEST_CASE("soup rejects mismatched specs") {
    const auto a = shared_anchor();
    const tmc::NetworkSpec other_spec = tmc::make_mlp(5, {9}, 3);
    const BaseModel b(other_spec, tmc::he_init(other_spec, 2));
    const std::vector<BaseModel> members{*a, b};
    CHECK_THROWS_AS(tmc::soup(members, std::vector<double>{0.5, 0.5}), std::invalid_argument);
}

TEST_CASE("ensemble_logits of a single member is the member") {
    const auto base = shared_anchor();
    const ModelCollection c = ModelCollection::of_nonlinear({*base});
    const std::vector<double> x = random_input(5, 3);
    const std::vector<double> e = tmc::ensemble_logits(c, x);
    const std::vector<double> f = tmc::forward(*base, x);
    for (std::size_t i = 0; i < e.size(); ++i) CHECK(e[i] == f[i]);
}

TEST_CASE("ensemble of members with opposite logits cancels") {
    const tmc::NetworkSpec spec(2, {tmc::LayerDescriptor::dense(2, 2)});
    const ParamVector w = random_delta(spec.param_count(), 7, 1.0);
    const BaseModel plus(spec, w);
    const BaseModel minus(spec, tmc::scale(w, -1.0));
    const ModelCollection c = ModelCollection::of_nonlinear({plus, minus});
    const std::vector<double> e = tmc::ensemble_logits(c, random_input(2, 5));
    for (double v : e) CHECK(std::abs(v) < 1e-15);
}

TEST_CASE("tangent logit ensemble equals the composed model") {
    const auto base = shared_anchor();
    const std::size_t dim = base->weights().dim();
    std::vector<TangentModel> members;
    for (int i = 0; i < 4; ++i) members.emplace_back(base, random_delta(dim, 30 + i), 1);
    std::mt19937_64 rng(55);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> w(4);
    double sum = 0.0;
    for (double& v : w) {
        v = unif(rng) + 0.05;
        sum += v;
    }
    for (double& v : w) v /= sum;

    const ModelCollection c = ModelCollection::of_tangent(members, w);
    const TangentModel composed = tmc::compose_many(members, w);
    for (int trial = 0; trial < 50; ++trial) {
        const std::vector<double> x = random_input(5, 500 + trial);
        const std::vector<double> ens = tmc::ensemble_logits(c, x);
        const std::vector<double> comp = tmc::tangent_forward(composed, x);
        for (std::size_t i = 0; i < ens.size(); ++i) CHECK(std::abs(ens[i] - comp[i]) < 1e-10);
    }
}

TEST_CASE("ensemble_softmax") {
    SUBCASE("single member is its softmax") {
        const auto base = shared_anchor();
        const ModelCollection c = ModelCollection::of_nonlinear({*base});
        const std::vector<double> x = random_input(5, 2);
        const std::vector<double> p = tmc::ensemble_softmax(c, x);
        const std::vector<double> q = tmc::softmax(tmc::forward(*base, x));
        for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(q[i]).epsilon(1e-14));
    }
    SUBCASE("identical members equal a single member") {
        const auto base = shared_anchor();
        const ModelCollection one = ModelCollection::of_nonlinear({*base});
        const ModelCollection two = ModelCollection::of_nonlinear({*base, *base});
        const std::vector<double> x = random_input(5, 4);
        const std::vector<double> p = tmc::ensemble_softmax(one, x);
        const std::vector<double> q = tmc::ensemble_softmax(two, x);
        for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(q[i]).epsilon(1e-14));
    }
    SUBCASE("symmetric two-class members average to one half") {
        // bias-only models with logits [c, -c] and [-c, c]
        const tmc::NetworkSpec spec(2, {tmc::LayerDescriptor::dense(2, 2)});
        std::vector<double> wa(spec.param_count(), 0.0), wb(spec.param_count(), 0.0);
        wa[4] = 3.0;
        wa[5] = -3.0;
        wb[4] = -3.0;
        wb[5] = 3.0;
        const ModelCollection c =
            ModelCollection::of_nonlinear({BaseModel(spec, ParamVector(wa)), BaseModel(spec, ParamVector(wb))});
        const std::vector<double> p = tmc::ensemble_softmax(c, std::vector<double>{0.0, 0.0});
        CHECK(p[0] == doctest::Approx(0.5));
        CHECK(p[1] == doctest::Approx(0.5));
    }
    SUBCASE("output sums to one and rejects non-convex weights") {
        const auto base = shared_anchor();
        std::vector<TangentModel> members{TangentModel(base, random_delta(base->weights().dim(), 8), 1),
                                          TangentModel(base, random_delta(base->weights().dim(), 9), 1)};
        const ModelCollection c = ModelCollection::of_tangent(members, {0.25, 0.75});
        const std::vector<double> p = tmc::ensemble_softmax(c, random_input(5, 12));
        double s = 0.0;
        for (double v : p) s += v;
        CHECK(std::abs(s - 1.0) <= 1e-12);

        const ModelCollection bad = ModelCollection::of_tangent(members, {1.5, -0.5});
        CHECK_THROWS_AS(tmc::ensemble_softmax(bad, random_input(5, 13)), std::invalid_argument);
    }
}

TEST_CASE("evaluate") {
    SUBCASE("ground-truth oracle reaches accuracy 1") {
        const Dataset d = one_hot_dataset({0, 1, 2, 1, 0, 2}, 3);
        const tmc::Predictor oracle = [](std::span<const double> x) {
            return std::vector<double>(x.begin(), x.end());
        };
        CHECK(tmc::evaluate(oracle, d) == 1.0);
    }
    SUBCASE("constant predictor on a balanced set scores one half") {
        const Dataset d = one_hot_dataset({0, 1, 0, 1, 0, 1}, 2);
        const tmc::Predictor constant = [](std::span<const double>) {
            return std::vector<double>{0.7, 0.7};  // tie; breaks toward class 0
        };
        CHECK(tmc::evaluate(constant, d) == 0.5);
    }
    SUBCASE("singleton restriction containing the label is always right") {
        const Dataset d = one_hot_dataset({1, 1, 1}, 3);
        const tmc::Predictor adversarial = [](std::span<const double>) {
            return std::vector<double>{9.0, -9.0, 5.0};
        };
        const std::vector<int> only{1};
        CHECK(tmc::evaluate(adversarial, d, std::span<const int>(only)) == 1.0);
    }
    SUBCASE("empty dataset and empty restriction are errors") {
        const Dataset d = one_hot_dataset({0, 1}, 2);
        const tmc::Predictor p = [](std::span<const double>) { return std::vector<double>{0.0, 0.0}; };
        CHECK_THROWS_AS(tmc::evaluate(p, Dataset()), tmc::DataError);
        const std::vector<int> none;
        CHECK_THROWS_AS(tmc::evaluate(p, d, std::span<const int>(none)), std::invalid_argument);
    }
}

TEST_CASE("argmax is invariant to a common positive scaling of member logits") {
    const auto base = shared_anchor();
    const std::size_t dim = base->weights().dim();
    std::vector<TangentModel> members{TangentModel(base, random_delta(dim, 61), 1),
                                      TangentModel(base, random_delta(dim, 62), 1)};
    const ModelCollection c = ModelCollection::of_tangent(members);

    tmc::SyntheticSpec gen;
    gen.classes = 3;
    gen.dim = 5;
    gen.samples_per_class = 20;
    const Dataset d = tmc::generate_synthetic(gen, 71);

    const tmc::Predictor plain = tmc::logit_ensemble_predictor(c);
    const tmc::Predictor scaled = [&](std::span<const double> x) {
        std::vector<double> z = tmc::ensemble_logits(c, x);
        for (double& v : z) v *= 37.5;
        return z;
    };
    CHECK(tmc::evaluate(plain, d) == tmc::evaluate(scaled, d));
}

TEST_CASE("softmax ensemble is invariant to per-member logit shifts") {
    const auto base = shared_anchor();
    const std::size_t dim = base->weights().dim();
    const ParamVector d0 = random_delta(dim, 81);
    const ParamVector d1 = random_delta(dim, 82);

    // shift member 1's logits by a constant through its head biases
    std::vector<double> shifted = d1.raw();
    const auto& spec = base->spec();
    const std::size_t bias_off =
        spec.head_offset() + static_cast<std::size_t>(spec.layers().back().in) * spec.output_dim();
    for (int j = 0; j < spec.output_dim(); ++j) shifted[bias_off + j] += 11.25;

    const ModelCollection a =
        ModelCollection::of_tangent({TangentModel(base, d0, 1), TangentModel(base, d1, 1)});
    const ModelCollection b = ModelCollection::of_tangent(
        {TangentModel(base, d0, 1), TangentModel(base, ParamVector(shifted), 1)});
    for (int trial = 0; trial < 10; ++trial) {
        const std::vector<double> x = random_input(5, 900 + trial);
        const std::vector<double> pa = tmc::ensemble_softmax(a, x);
        const std::vector<double> pb = tmc::ensemble_softmax(b, x);
        for (std::size_t i = 0; i < pa.size(); ++i)
            CHECK(pa[i] == doctest::Approx(pb[i]).epsilon(1e-10));
    }
}

TEST_CASE("collections validate their members") {
    const auto base = shared_anchor();
    const auto other = shared_anchor(42);
    std::vector<TangentModel> mixed{TangentModel::fresh(base), TangentModel::fresh(other)};
    CHECK_THROWS_AS(ModelCollection::of_tangent(mixed), std::invalid_argument);
    CHECK_THROWS_AS(ModelCollection::of_nonlinear({}), std::invalid_argument);
}
