#include <doctest.h>

#include <cmath>
#include <numeric>

#include "psilab/errors.hpp"
#include "psilab/nogo.hpp"
#include "psilab/ontology.hpp"

using namespace psilab;

namespace {

OntModel two_outcome_uniform(const LambdaSpace& space, std::vector<double> d1, std::vector<double> d2) {
  std::vector<PreparationDensity> preps{make_density(space, "a", std::move(d1)),
                                        make_density(space, "b", std::move(d2))};
  UniversalResponse r{"s", {"0", "1"}, std::vector<double>(2 * space.size(), 0.5)};
  return OntModel(space, std::move(preps), std::move(r));
}

// Random contextual model over n points with two preparations and three outcomes.
OntModel random_contextual(std::size_t n, Rng& rng) {
  LambdaSpace space([&] {
    std::vector<LambdaPoint> pts;
    for (std::size_t l = 0; l < n; ++l) pts.push_back({static_cast<double>(l), 0.5 + rng.uniform()});
    return pts;
  }());
  auto density = [&](const std::string& label) {
    std::vector<double> d(n);
    double mass = 0.0;
    for (std::size_t l = 0; l < n; ++l) {
      d[l] = rng.uniform() < 0.3 ? 0.0 : rng.uniform();
      mass += d[l] * space.weight(l);
    }
    if (mass == 0.0) {
      d[0] = 1.0;
      mass = space.weight(0);
    }
    for (double& v : d) v /= mass;
    return make_density(space, label, d);
  };
  ContextualResponse resp;
  resp.outcomes = {"x", "y", "z"};
  for (const char* label : {"p", "q"}) {
    std::vector<double> t(3 * n);
    for (std::size_t l = 0; l < n; ++l) {
      const double a = rng.uniform(), b = rng.uniform(), c = rng.uniform();
      const double s = a + b + c;
      t[l] = a / s;
      t[n + l] = b / s;
      t[2 * n + l] = 1.0 - a / s - b / s;
    }
    resp.tables[{label, "m"}] = t;
  }
  return OntModel(space, {density("p"), density("q")}, resp);
}

}  // namespace

TEST_CASE("LambdaSpace and densities validate their invariants") {
  CHECK_THROWS_AS(LambdaSpace({}), DomainError);
  CHECK_THROWS_AS(LambdaSpace({{std::nullopt, 0.0}}), DomainError);
  const LambdaSpace s = LambdaSpace::uniform(4, 0.25);
  CHECK(s.total_weight() == doctest::Approx(1.0));
  CHECK_THROWS_AS(make_density(s, "x", {1.0, 1.0, 1.0, 0.0}), DomainError);
  CHECK_THROWS_AS(make_density(s, "x", {4.0, 0.5, -0.5, 0.0}), DomainError);
  CHECK_THROWS_AS(make_density(s, "x", {1.0, 1.0}), DomainError);
  CHECK_NOTHROW(make_density(s, "x", {4.0, 0.0, 0.0, 0.0}));
}

TEST_CASE("responses must be normalized probabilities") {
  const LambdaSpace s = LambdaSpace::uniform(2, 0.5);
  std::vector<PreparationDensity> p{make_density(s, "a", {1.0, 1.0})};
  CHECK_THROWS_AS(OntModel(s, p, UniversalResponse{"s", {"0", "1"}, {0.5, 0.5, 0.5, 0.6}}), DomainError);
  CHECK_THROWS_AS(OntModel(s, p, UniversalResponse{"s", {"0", "1"}, {1.5, 0.5, -0.5, 0.5}}), DomainError);
  ContextualResponse c;
  c.outcomes = {"0", "1"};
  c.tables[{"missing", "s"}] = {1, 1, 0, 0};
  CHECK_THROWS_AS(OntModel(s, p, c), DomainError);
}

TEST_CASE("predict examples") {
  SUBCASE("beam splitter, plus exits at gate 3") {
    const OntModel m = build_beam_splitter_model();
    CHECK(predict(m, "plus", "gates", "3") == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(predict(m, "minus", "gates", "4") == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::abs(predict(m, "psi_1", "gates", "3") - 0.5) < 1e-12);
    CHECK(std::abs(predict(m, "psi_2", "gates", "4") - 0.5) < 1e-12);
  }
  SUBCASE("constant one-half response gives one half for any density") {
    const LambdaSpace s = LambdaSpace::uniform(3);
    const OntModel m = two_outcome_uniform(s, {0.2, 0.3, 0.5}, {1.0, 0.0, 0.0});
    CHECK(predict(m, "a", "s", "0") == doctest::Approx(0.5));
    CHECK(predict(m, "b", "s", "1") == doctest::Approx(0.5));
  }
  SUBCASE("unknown names are lookup errors") {
    const OntModel m = build_beam_splitter_model();
    CHECK_THROWS_AS(predict(m, "nope", "gates", "3"), LookupError);
    CHECK_THROWS_AS(predict(m, "plus", "nope", "3"), LookupError);
    CHECK_THROWS_AS(predict(m, "plus", "gates", "5"), LookupError);
  }
}

TEST_CASE("predict_product examples") {
  const OntModel d = construct_disjoint_model(ket0(), ket_plus(), pbr_basis_2qubit());
  const MeasurementBasis phi = pbr_basis_2qubit();
  const std::vector<std::string> p11{"psi_1", "psi_1"}, p22{"psi_2", "psi_2"};
  CHECK(predict_product(d, p11, phi, 0) < 1e-12);
  CHECK(std::abs(predict_product(d, p11, phi, 3) - 0.5) < 1e-12);
  CHECK(std::abs(predict_product(d, p22, phi, 0) - 0.5) < 1e-12);

  SUBCASE("uniform one-quarter response") {
    const LambdaSpace s = LambdaSpace::uniform(3);
    std::vector<PreparationDensity> preps{make_density(s, "a", {0.5, 0.5, 0.0}),
                                          make_density(s, "b", {0.0, 0.2, 0.8})};
    const OntModel m(s, preps, UniversalResponse{"phi", phi.labels(), std::vector<double>(4 * 9, 0.25)}, 2);
    for (std::size_t i = 0; i < 4; ++i) {
      for (const char* j : {"a", "b"}) {
        for (const char* k : {"a", "b"}) {
          const std::vector<std::string> lk{j, k};
          CHECK(predict_product(m, lk, phi, i) == doctest::Approx(0.25));
        }
      }
    }
  }
  SUBCASE("arity mismatch") {
    const std::vector<std::string> one{"psi_1"};
    CHECK_THROWS_AS(predict_product(d, one, phi, 0), DomainError);
  }
}

TEST_CASE("support and overlap examples") {
  const LambdaSpace s = LambdaSpace::uniform(4);
  const PreparationDensity delta = make_density(s, "d", {0.0, 1.0, 0.0, 0.0});
  CHECK(support(delta) == std::vector<std::size_t>{1});
  CHECK(support(delta, 2.0).empty());

  const OntModel bs = build_beam_splitter_model(4);
  const auto s1 = support(bs.preparation("psi_1"));
  CHECK(s1 == std::vector<std::size_t>{0, 1, 2, 3});
  for (std::size_t l : s1) CHECK(*bs.space()[l].coordinate < 0.0);
  for (std::size_t l : support(bs.preparation("psi_2"))) CHECK(*bs.space()[l].coordinate > 0.0);

  CHECK(overlap(bs.space(), bs.preparation("psi_1"), bs.preparation("psi_2")) == 0.0);
  CHECK(overlap(bs.space(), bs.preparation("plus"), bs.preparation("minus")) ==
        doctest::Approx(bs.space().total_weight()));
  CHECK(overlap(bs.space(), bs.preparation("plus"), bs.preparation("psi_1")) > 0.0);
  CHECK(overlap(s, delta, delta) == doctest::Approx(1.0));
  const PreparationDensity wide = make_density(s, "w", {0.0, 0.5, 0.25, 0.25});
  CHECK(overlap(s, wide, wide) == doctest::Approx(3.0));
}

TEST_CASE("every built model's responses are normalized") {
  auto check = [](const OntModel& m) {
    auto column_sums = [](const std::vector<double>& table, std::size_t outcomes, std::size_t columns) {
      for (std::size_t t = 0; t < columns; ++t) {
        double s = 0.0;
        for (std::size_t o = 0; o < outcomes; ++o) s += table[o * columns + t];
        CHECK(std::abs(s - 1.0) < 1e-12);
      }
    };
    if (const auto* u = std::get_if<UniversalResponse>(&m.response())) {
      column_sums(u->table, u->outcomes.size(), m.tuple_count());
    } else {
      const auto& c = std::get<ContextualResponse>(m.response());
      for (const auto& [key, table] : c.tables) column_sums(table, c.outcomes.size(), m.space().size());
    }
  };
  check(build_beam_splitter_model(8));
  check(construct_disjoint_model(ket0(), ket_plus(), pbr_basis_2qubit()));
  check(contextual_escape(EscapeScene::SingleQubitOrthogonal));
  check(support_pattern_model(pbr_two_qubit_scene(), 3, 1));
  Rng rng(3);
  for (int i = 0; i < 20; ++i) check(random_contextual(4, rng));
}

TEST_CASE("classify examples") {
  CHECK(classify(construct_disjoint_model(ket0(), ket_plus(), pbr_basis_2qubit())) ==
        Classification::PsiOntic);
  CHECK(classify(build_beam_splitter_model()) == Classification::PsiEpistemic);
  const LambdaSpace s = LambdaSpace::uniform(3);
  CHECK(classify(two_outcome_uniform(s, {0.5, 0.5, 0.0}, {0.5, 0.5, 0.0})) == Classification::PsiEpistemic);
  const OntModel single(s, {make_density(s, "a", {1.0, 0.0, 0.0})},
                        UniversalResponse{"s", {"0"}, std::vector<double>(3, 1.0)});
  CHECK_THROWS_AS(classify(single), DomainError);
}

TEST_CASE("classify is invariant under relabeling and weight rescaling") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.next_u64() % 6;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.next_u64() % (i + 1)]);
    const double scale = 0.1 + 10.0 * rng.uniform();

    std::vector<double> a(n, 0.0), b(n, 0.0);
    for (std::size_t l = 0; l < n; ++l) {
      if (rng.uniform() < 0.5) a[l] = 1.0;
      if (rng.uniform() < 0.5) b[l] = 1.0;
    }
    a[0] = a[0] + (std::accumulate(a.begin(), a.end(), 0.0) == 0.0 ? 1.0 : 0.0);
    b[n - 1] = b[n - 1] + (std::accumulate(b.begin(), b.end(), 0.0) == 0.0 ? 1.0 : 0.0);
    auto normalized = [](std::vector<double> v, double w) {
      const double s = std::accumulate(v.begin(), v.end(), 0.0) * w;
      for (double& x : v) x /= s;
      return v;
    };
    const LambdaSpace base = LambdaSpace::uniform(n, 1.0);
    const OntModel m = two_outcome_uniform(base, normalized(a, 1.0), normalized(b, 1.0));

    std::vector<double> pa(n), pb(n);
    for (std::size_t l = 0; l < n; ++l) {
      pa[perm[l]] = a[l];
      pb[perm[l]] = b[l];
    }
    const LambdaSpace scaled = LambdaSpace::uniform(n, scale);
    const OntModel moved = two_outcome_uniform(scaled, normalized(pa, scale), normalized(pb, scale));
    CHECK(classify(m) == classify(moved));
  }
}

TEST_CASE("chain rule and outcome completeness for contextual models") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const OntModel m = random_contextual(2 + rng.next_u64() % 7, rng);
    const auto& resp = std::get<ContextualResponse>(m.response());
    for (const char* label : {"p", "q"}) {
      const auto joint = joint_distribution(m, label, "m");
      const auto& rho = m.preparation(label).density;
      const auto& table = resp.tables.at({label, "m"});
      const std::size_t n = m.space().size();
      double total = 0.0;
      for (std::size_t o = 0; o < 3; ++o) {
        double marginal = 0.0;
        for (std::size_t l = 0; l < n; ++l) {
          // P(alpha, lambda | Psi) = P(alpha | lambda, Psi) P(lambda | Psi)
          CHECK(joint[o][l] == table[o * n + l] * rho[l] * m.space().weight(l));
          marginal += joint[o][l];
        }
        CHECK(std::abs(marginal - predict(m, label, "m", resp.outcomes[o])) < 1e-12);
        total += predict(m, label, "m", resp.outcomes[o]);
      }
      CHECK(std::abs(total - 1.0) < 1e-10);
    }
  }
}

TEST_CASE("beam splitter model structure") {
  const OntModel m = build_beam_splitter_model(6);
  CHECK(m.is_contextual());
  CHECK(m.space().size() == 12);
  CHECK(std::abs(predict(m, "psi_1", "gates", "3") - 0.5) < 1e-12);
  CHECK(std::abs(predict(m, "minus", "gates", "4") - 1.0) < 1e-12);
  CHECK(overlap(m.space(), m.preparation("plus"), m.preparation("psi_1")) > 0.0);
  CHECK_THROWS_AS(build_beam_splitter_model(3), DomainError);
  CHECK_THROWS_AS(build_beam_splitter_model(0), DomainError);
}

TEST_CASE("JSON round trip is lossless") {
  Rng rng(23);
  std::vector<OntModel> models{build_beam_splitter_model(),
                               construct_disjoint_model(ket0(), ket_plus(), pbr_basis_2qubit()),
                               random_contextual(5, rng)};
  for (const OntModel& m : models) {
    const nlohmann::json j = to_json(m);
    const OntModel back = model_from_json(nlohmann::json::parse(j.dump()));
    CHECK(to_json(back) == j);
    CHECK(back.space().size() == m.space().size());
    for (std::size_t l = 0; l < m.space().size(); ++l) {
      CHECK(back.space().weight(l) == m.space().weight(l));
      CHECK(back.space()[l].coordinate == m.space()[l].coordinate);
    }
    for (const auto& [label, d] : m.preparations()) CHECK(back.preparation(label).density == d.density);
    CHECK(back.arity() == m.arity());
    CHECK(back.quantum().states.size() == m.quantum().states.size());
  }
}
