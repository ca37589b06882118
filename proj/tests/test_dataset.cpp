#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <fstream>

#include "helpers.hpp"
#include "jetlab/jets.hpp"

using namespace jetlab;

namespace {

ToyClassSpec gluon_like() { return {"gluon", 1, 0.0, 10.0, 0.45}; }
ToyClassSpec w_like() { return {"wboson", 2, 80.0, 5.0, 0.04}; }

std::string serialize(const DatasetSplit& ds) {
    std::string s;
    for (const auto* jets : {&ds.train, &ds.val, &ds.test})
        for (const auto& j : *jets) s += jet_to_line(j) + "\n";
    return s;
}

} // namespace

TEST_CASE("generate_toy is deterministic and splits 60/20/20") {
    const auto a = generate_toy(gluon_like(), w_like(), 100, 9);
    const auto b = generate_toy(gluon_like(), w_like(), 100, 9);
    REQUIRE(serialize(a) == serialize(b));
    REQUIRE(a.train.size() == 120);
    REQUIRE(a.val.size() == 40);
    REQUIRE(a.test.size() == 40);

    const auto c = generate_toy(gluon_like(), w_like(), 100, 10);
    REQUIRE(serialize(a) != serialize(c));
}

TEST_CASE("generate_toy keeps labels exactly balanced per split") {
    const auto ds = generate_toy(gluon_like(), w_like(), 50, 3);
    for (const auto* jets : {&ds.train, &ds.val, &ds.test}) {
        long pos = 0;
        for (const auto& j : *jets) pos += j.label;
        REQUIRE(pos * 2 == static_cast<long>(jets->size()));
    }
}

TEST_CASE("generated jets satisfy the Jet invariants") {
    const auto ds = generate_toy(gluon_like(), w_like(), 60, 12, 32);
    for (const auto& j : ds.train) {
        REQUIRE(j.is_pt_sorted());
        REQUIRE(j.constituents.size() >= 1);
        REQUIRE(j.constituents.size() <= 32);
        for (const auto& c : j.constituents) {
            REQUIRE(c.pt() > 0.0);
            REQUIRE(c.E > 0.0);
        }
    }
}

TEST_CASE("resonance class mass distribution peaks inside [70, 90]") {
    const auto ds = generate_toy(gluon_like(), w_like(), 1500, 4);
    std::vector<double> masses;
    for (const auto& j : ds.train)
        if (j.label == 1) masses.push_back(j.total().mass());
    REQUIRE(masses.size() == 900);

    // histogram mode with 4 GeV bins
    std::vector<int> hist(75, 0);
    for (double m : masses) {
        const int bin = static_cast<int>(m / 4.0);
        if (bin >= 0 && bin < 75) ++hist[bin];
    }
    const int mode = static_cast<int>(std::max_element(hist.begin(), hist.end()) - hist.begin());
    const double peak = mode * 4.0 + 2.0;
    REQUIRE(peak > 70.0);
    REQUIRE(peak < 90.0);
}

TEST_CASE("generate_toy rejects degenerate specs") {
    ToyClassSpec bad = w_like();
    bad.width = 0.0;
    REQUIRE_THROWS_AS(generate_toy(gluon_like(), bad, 100, 1), ConfigError);
    REQUIRE_THROWS_AS(generate_toy(gluon_like(), w_like(), 5, 1), ConfigError);
}

TEST_CASE("save/load round-trips a generated dataset") {
    testutil::TempDir tmp("jetio");
    const auto ds = generate_toy(gluon_like(), w_like(), 40, 21);
    save_dataset(tmp.path / "data", ds);

    LoadReport rep;
    const auto back = load_jets(tmp.path / "data", 32, &rep);
    REQUIRE(rep.warnings() == 0);
    REQUIRE(rep.skipped == 0);
    REQUIRE(serialize(back) == serialize(ds));
    REQUIRE(back.provenance == ds.provenance);
}

TEST_CASE("empty file loads as empty with zero warnings") {
    testutil::TempDir tmp("jetempty");
    { std::ofstream out(tmp.path / "empty.jsonl"); }
    LoadReport rep;
    const auto loaded = load_jet_file(tmp.path / "empty.jsonl", 32, &rep);
    REQUIRE(loaded.jets.empty());
    REQUIRE(rep.warnings() == 0);
    REQUIRE(rep.skipped == 0);
}

TEST_CASE("loader re-sorts unsorted jets and counts one warning") {
    testutil::TempDir tmp("jetsort");
    const auto file = tmp.path / "one.jsonl";
    {
        std::ofstream out(file);
        out << "#schema=jetlines-v1 split=test\n";
        out << R"({"label":1,"class":"x","constituents":[[10,1,0,9],[50,30,0,40]]})" << "\n";
    }
    LoadReport rep;
    const auto loaded = load_jet_file(file, 32, &rep);
    REQUIRE(rep.resorted == 1);
    REQUIRE(loaded.jets.size() == 1);
    REQUIRE(loaded.jets[0].is_pt_sorted());
    REQUIRE(loaded.jets[0].constituents[0].pt() == Catch::Approx(30.0));
}

TEST_CASE("loader reports parse errors with line numbers") {
    testutil::TempDir tmp("jetbad");
    const auto file = tmp.path / "bad.jsonl";
    {
        std::ofstream out(file);
        out << "#schema=jetlines-v1\n";
        out << R"({"label":0,"class":"g","constituents":[[10,1,0,5]]})" << "\n";
        out << "{not json\n";
    }
    try {
        load_jet_file(file);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        REQUIRE(std::string(e.what()).find(":3:") != std::string::npos);
    }
}

TEST_CASE("loader requires the schema header") {
    testutil::TempDir tmp("jethdr");
    const auto file = tmp.path / "nohdr.jsonl";
    {
        std::ofstream out(file);
        out << R"({"label":0,"class":"g","constituents":[[10,1,0,5]]})" << "\n";
    }
    REQUIRE_THROWS_AS(load_jet_file(file), DataError);
}

TEST_CASE("records with non-physical constituents are skipped and counted") {
    testutil::TempDir tmp("jetskip");
    const auto file = tmp.path / "mixed.jsonl";
    {
        std::ofstream out(file);
        out << "#schema=jetlines-v1 split=train\n";
        out << R"({"label":0,"class":"g","constituents":[[10,1,0,5]]})" << "\n";
        out << R"({"label":1,"class":"w","constituents":[[10,0,0,10]]})" << "\n"; // pT == 0
        out << R"({"label":1,"class":"w","constituents":[[8,2,0,4]]})" << "\n";
    }
    LoadReport rep;
    const auto loaded = load_jet_file(file, 32, &rep);
    REQUIRE(loaded.jets.size() == 2);
    REQUIRE(rep.skipped == 1);
    REQUIRE(loaded.split_name == "train");
}

TEST_CASE("smear_pt with sigma 0 is the identity and consumes no draws") {
    const auto ds = generate_toy(gluon_like(), w_like(), 20, 33);
    RngStream rng(5);
    const Jet& jet = ds.train[0];
    const Jet out = smear_pt(jet, 0.0, rng);
    REQUIRE(jet_to_line(out) == jet_to_line(jet));
    RngStream fresh(5);
    REQUIRE(rng.uniform() == fresh.uniform()); // no draws consumed
}

TEST_CASE("smear_pt preserves invariant mass and direction per constituent") {
    const auto ds = generate_toy(gluon_like(), w_like(), 20, 34);
    RngStream rng(6);
    for (int rep = 0; rep < 5; ++rep) {
        const Jet& jet = ds.train[rep];
        const Jet out = smear_pt(jet, 0.4, rng);
        REQUIRE(out.constituents.size() == jet.constituents.size());
        REQUIRE(out.is_pt_sorted());
        // match original constituents by direction (the smeared jet is re-sorted)
        for (const auto& c : jet.constituents) {
            double best_dot = -2.0;
            const FourVector* match = nullptr;
            for (const auto& s : out.constituents) {
                const double dot = (c.px * s.px + c.py * s.py + c.pz * s.pz) / (c.p() * s.p());
                if (dot > best_dot) { best_dot = dot; match = &s; }
            }
            REQUIRE(best_dot > 1.0 - 1e-12);
            const double scale = std::max(1.0, c.E * c.E);
            REQUIRE(std::abs(match->mass2() - c.mass2()) / scale < 1e-9);
            REQUIRE(std::abs(match->eta() - c.eta()) < 1e-12);
            REQUIRE(std::abs(wrap_phi(match->phi() - c.phi())) < 1e-12);
        }
    }
}

TEST_CASE("smear_pt mean pT ratio stays near one over 1e5 constituents") {
    // Monte-Carlo check of the scaling law: E[max(1 + sigma*eps, floor)] = 1
    // to within the floor correction at sigma = 0.1.
    Jet jet;
    jet.constituents.push_back(FourVector::massless(50.0, 0.3, 1.0));
    RngStream rng(77);
    double sum_ratio = 0.0;
    const long n = 100000;
    for (long i = 0; i < n; ++i) {
        const Jet out = smear_pt(jet, 0.1, rng);
        sum_ratio += out.constituents[0].pt() / jet.constituents[0].pt();
    }
    REQUIRE(sum_ratio / n == Catch::Approx(1.0).margin(0.002));
}

TEST_CASE("single-file load lands in the header-declared split") {
    testutil::TempDir tmp("jetsplit");
    const auto ds = generate_toy(gluon_like(), w_like(), 20, 60);
    save_jet_file(tmp.path / "v.jsonl", ds.val, "val", ds.provenance);
    const auto loaded = load_jets(tmp.path / "v.jsonl");
    REQUIRE(loaded.val.size() == ds.val.size());
    REQUIRE(loaded.train.empty());
    REQUIRE(loaded.test.empty());
}
