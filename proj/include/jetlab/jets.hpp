#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "jetlab/errors.hpp"
#include "jetlab/hash.hpp"
#include "jetlab/kinematics.hpp"
#include "jetlab/rng.hpp"

namespace jetlab {

inline constexpr int kDefaultNMax = 32;

/// One jet: constituents sorted by non-increasing pT, plus its class.
struct Jet {
    std::vector<FourVector> constituents;
    int label = 0;
    std::string class_name;

    FourVector total() const {
        FourVector sum;
        for (const auto& c : constituents) sum += c;
        return sum;
    }

    void sort_by_pt() {
        std::stable_sort(constituents.begin(), constituents.end(),
                         [](const FourVector& a, const FourVector& b) { return a.pt() > b.pt(); });
    }

    bool is_pt_sorted() const {
        for (std::size_t i = 1; i < constituents.size(); ++i)
            if (constituents[i].pt() > constituents[i - 1].pt()) return false;
        return true;
    }
};

struct DatasetSplit {
    std::vector<Jet> train, val, test;
    std::uint64_t seed = 0;
    std::string provenance;

    const std::vector<Jet>& split(const std::string& name) const {
        if (name == "train") return train;
        if (name == "val") return val;
        if (name == "test") return test;
        throw ContractError("unknown split: " + name);
    }
};

/// Generator knobs for one synthetic class. n_prongs == 1 gives a wide
/// single-core shower; n_prongs >= 2 gives an n-prong decay of a resonance
/// with the given mass peak, dressed with a little soft radiation.
struct ToyClassSpec {
    std::string name = "classA";
    int n_prongs = 1;
    double mass_peak = 0.0;         // GeV
    double width = 10.0;            // GeV, > 0
    double radiation_softness = 0.1;

    void validate() const {
        if (n_prongs < 1) throw ConfigError("ToyClassSpec: n_prongs must be >= 1");
        if (mass_peak < 0.0) throw ConfigError("ToyClassSpec: mass_peak must be >= 0");
        if (!(width > 0.0)) throw ConfigError("ToyClassSpec: width must be > 0");
        if (!(radiation_softness > 0.0)) throw ConfigError("ToyClassSpec: radiation_softness must be > 0");
    }

    std::string describe() const {
        std::ostringstream os;
        os << name << ":" << n_prongs << ":" << mass_peak << ":" << width << ":" << radiation_softness;
        return os.str();
    }
};

namespace detail {

inline void unit_sphere(RngStream& rng, double& nx, double& ny, double& nz) {
    nz = rng.uniform(-1.0, 1.0);
    const double phi = rng.uniform(0.0, 2.0 * kPi);
    const double r = std::sqrt(std::max(0.0, 1.0 - nz * nz));
    nx = r * std::cos(phi);
    ny = r * std::sin(phi);
}

/// Decay a resonance of mass m at rest into n massless momenta.
/// Sequential splitting: peel off one massless prong against a lighter
/// intermediate until two bodies remain.
inline void decay_massless(RngStream& rng, double m, int n, std::vector<FourVector>& out) {
    if (n == 2) {
        double nx, ny, nz;
        unit_sphere(rng, nx, ny, nz);
        const double e = 0.5 * m;
        out.push_back({e, e * nx, e * ny, e * nz});
        out.push_back({e, -e * nx, -e * ny, -e * nz});
        return;
    }
    const double m2 = m * rng.uniform(0.45, 0.75); // intermediate mass
    double nx, ny, nz;
    unit_sphere(rng, nx, ny, nz);
    const double eq = (m * m - m2 * m2) / (2.0 * m); // massless prong energy
    out.push_back({eq, eq * nx, eq * ny, eq * nz});
    // Intermediate recoils with momentum eq; decay it in its own rest frame
    // and boost back along -n.
    std::vector<FourVector> sub;
    decay_massless(rng, m2, n - 1, sub);
    const double yb = std::asinh(eq / m2);
    const BoostVector back(-nx, -ny, -nz, yb);
    for (const auto& v : sub) out.push_back(boost(v, back));
}

/// Split one prong into k nearly-collinear massless pieces around its axis.
inline void fragment_prong(RngStream& rng, const FourVector& prong, int k, double spread,
                           std::vector<FourVector>& out) {
    std::vector<double> w(k);
    double wsum = 0.0;
    for (auto& wi : w) {
        wi = -std::log(1.0 - rng.uniform()) + 0.05;
        wsum += wi;
    }
    const double pt = std::max(prong.pt(), kPtFloor);
    const double eta = std::asinh(prong.pz / pt);
    const double phi = prong.phi();
    for (int i = 0; i < k; ++i) {
        const double f = w[i] / wsum;
        const double deta = rng.normal(0.0, spread);
        const double dphi = rng.normal(0.0, spread);
        out.push_back(FourVector::massless(f * pt, eta + deta, wrap_phi(phi + dphi)));
    }
}

inline Jet generate_one(const ToyClassSpec& spec, int label, RngStream& rng, int n_max) {
    const double jet_pt = rng.uniform(400.0, 600.0);
    const double jet_eta = rng.uniform(-1.0, 1.0);
    const double jet_phi = rng.uniform(-kPi, kPi);

    Jet jet;
    jet.label = label;
    jet.class_name = spec.name;

    if (spec.n_prongs == 1) {
        const long n = rng.uniform_int(8, 20);
        std::vector<double> w(n);
        double wsum = 0.0;
        for (auto& wi : w) {
            wi = -std::log(1.0 - rng.uniform()) + 0.02;
            wsum += wi;
        }
        for (long i = 0; i < n; ++i) {
            const double deta = rng.normal(0.0, spec.radiation_softness);
            const double dphi = rng.normal(0.0, spec.radiation_softness);
            jet.constituents.push_back(FourVector::massless(
                w[i] / wsum * jet_pt, jet_eta + deta, wrap_phi(jet_phi + dphi)));
        }
    } else {
        const double m = std::max(1.0, rng.normal(spec.mass_peak, spec.width));
        const FourVector res = FourVector::massless(jet_pt, jet_eta, jet_phi); // direction carrier
        const double pmag = res.p();
        std::vector<FourVector> prongs;
        detail::decay_massless(rng, m, spec.n_prongs, prongs);
        const BoostVector to_lab(res.px / pmag, res.py / pmag, res.pz / pmag, std::asinh(pmag / m));
        for (auto& p : prongs) p = boost(p, to_lab);
        for (const auto& p : prongs) {
            const long k = rng.uniform_int(2, 5);
            fragment_prong(rng, p, static_cast<int>(k), spec.radiation_softness, jet.constituents);
        }
        // soft wide contamination so the classes differ by structure, not by count alone
        const long n_soft = rng.uniform_int(2, 4);
        for (long i = 0; i < n_soft; ++i) {
            const double f = rng.uniform(0.001, 0.005);
            const double deta = rng.normal(0.0, 0.25);
            const double dphi = rng.normal(0.0, 0.25);
            jet.constituents.push_back(FourVector::massless(
                f * jet_pt, jet_eta + deta, wrap_phi(jet_phi + dphi)));
        }
    }

    std::erase_if(jet.constituents, [](const FourVector& c) { return !(c.pt() > 10.0 * kPtFloor); });
    jet.sort_by_pt();
    if (static_cast<int>(jet.constituents.size()) > n_max)
        jet.constituents.resize(n_max);
    return jet;
}

} // namespace detail

/// Balanced two-class synthetic dataset, 60/20/20 split, deterministic in seed.
/// Jets are interleaved A,B within each split so labels stay exactly balanced.
inline DatasetSplit generate_toy(const ToyClassSpec& spec_a, const ToyClassSpec& spec_b,
                                 long n_per_class, std::uint64_t seed, int n_max = kDefaultNMax) {
    spec_a.validate();
    spec_b.validate();
    if (n_per_class < 10) throw ConfigError("generate_toy: n_per_class must be >= 10");

    std::vector<Jet> a, b;
    a.reserve(n_per_class);
    b.reserve(n_per_class);
    RngStream rng_a(derive_seed(seed, 0xA));
    RngStream rng_b(derive_seed(seed, 0xB));
    for (long i = 0; i < n_per_class; ++i) a.push_back(detail::generate_one(spec_a, 0, rng_a, n_max));
    for (long i = 0; i < n_per_class; ++i) b.push_back(detail::generate_one(spec_b, 1, rng_b, n_max));

    const long n_train = static_cast<long>(n_per_class * 6 / 10);
    const long n_val = static_cast<long>(n_per_class * 2 / 10);

    DatasetSplit ds;
    ds.seed = seed;
    ds.provenance = "toy:" + content_hash(spec_a.describe() + "|" + spec_b.describe() + "|" +
                                          std::to_string(n_per_class) + "|" + std::to_string(seed));
    auto emit = [&](std::vector<Jet>& dst, long lo, long hi) {
        for (long i = lo; i < hi; ++i) {
            dst.push_back(std::move(a[i]));
            dst.push_back(std::move(b[i]));
        }
    };
    emit(ds.train, 0, n_train);
    emit(ds.val, n_train, n_train + n_val);
    emit(ds.test, n_train + n_val, n_per_class);
    return ds;
}

/// Momentum-scale smearing: each constituent's three-momentum is scaled by
/// k = max(1 + sigma*eps, 0.01), eps ~ N(0,1); the energy is recomputed so the
/// constituent's invariant mass is preserved and eta/phi are untouched.
/// sigma == 0 returns the jet unchanged (and consumes no draws).
inline Jet smear_pt(const Jet& jet, double sigma, RngStream& rng) {
    if (sigma < 0.0) throw ConfigError("smear_pt: sigma must be >= 0");
    if (sigma == 0.0) return jet;
    Jet out = jet;
    for (auto& c : out.constituents) {
        const double k = std::max(1.0 + sigma * rng.normal(), 0.01);
        if (k == 1.0) continue;
        const double m2 = std::max(0.0, c.mass2());
        c.px *= k; c.py *= k; c.pz *= k;
        c.E = std::sqrt(m2 + c.p2());
    }
    out.sort_by_pt();
    return out;
}

// ---------------------------------------------------------------------------
// jetlines-v1 file format: one header line `#schema=jetlines-v1 ...`, then one
// jet per line as {"label":int,"class":str,"constituents":[[E,px,py,pz],...]}.
// ---------------------------------------------------------------------------

namespace detail {

inline void append_double(std::string& s, double v) {
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof(buf), v); // shortest round-trip form
    s.append(buf, r.ptr);
}

} // namespace detail

inline std::string jet_to_line(const Jet& jet) {
    std::string s;
    s.reserve(64 + jet.constituents.size() * 64);
    s += "{\"label\":";
    s += std::to_string(jet.label);
    s += ",\"class\":";
    s += nlohmann::json(jet.class_name).dump();
    s += ",\"constituents\":[";
    for (std::size_t i = 0; i < jet.constituents.size(); ++i) {
        const auto& c = jet.constituents[i];
        if (i) s += ',';
        s += '[';
        detail::append_double(s, c.E);
        s += ',';
        detail::append_double(s, c.px);
        s += ',';
        detail::append_double(s, c.py);
        s += ',';
        detail::append_double(s, c.pz);
        s += ']';
    }
    s += "]}";
    return s;
}

inline void save_jet_file(const std::filesystem::path& path, const std::vector<Jet>& jets,
                          const std::string& split_name, const std::string& provenance) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << "#schema=jetlines-v1 split=" << split_name << " n=" << jets.size()
        << " provenance=" << provenance << "\n";
    for (const auto& j : jets) out << jet_to_line(j) << "\n";
    if (!out) throw DataError("write failed: " + path.string());
}

inline void save_dataset(const std::filesystem::path& dir, const DatasetSplit& ds) {
    std::filesystem::create_directories(dir);
    save_jet_file(dir / "train.jsonl", ds.train, "train", ds.provenance);
    save_jet_file(dir / "val.jsonl", ds.val, "val", ds.provenance);
    save_jet_file(dir / "test.jsonl", ds.test, "test", ds.provenance);
}

struct LoadReport {
    long resorted = 0;   // jets that arrived unsorted
    long skipped = 0;    // records dropped (non-physical constituents)
    long truncated = 0;  // jets cut down to n_max
    long warnings() const { return resorted + truncated; }
};

struct LoadedFile {
    std::vector<Jet> jets;
    std::string split_name = "test";
    std::string provenance;
};

inline LoadedFile load_jet_file(const std::filesystem::path& path, int n_max = kDefaultNMax,
                                LoadReport* report = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path.string());
    LoadedFile out;
    LoadReport local;
    std::string line;
    long line_no = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (!saw_header) {
                if (line.rfind("#schema=jetlines-v1", 0) != 0)
                    throw DataError(path.string() + ":" + std::to_string(line_no) +
                                    ": missing '#schema=jetlines-v1' header");
                saw_header = true;
                std::istringstream hs(line);
                std::string tok;
                while (hs >> tok) {
                    if (tok.rfind("split=", 0) == 0) out.split_name = tok.substr(6);
                    if (tok.rfind("provenance=", 0) == 0) out.provenance = tok.substr(11);
                }
            }
            continue;
        }
        if (!saw_header)
            throw DataError(path.string() + ":" + std::to_string(line_no) +
                            ": records before '#schema=jetlines-v1' header");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.is_object() || !j.contains("label") || !j.contains("constituents"))
            throw DataError(path.string() + ":" + std::to_string(line_no) +
                            ": record must have 'label' and 'constituents'");
        Jet jet;
        jet.label = j.at("label").get<int>();
        if (j.contains("class")) jet.class_name = j.at("class").get<std::string>();
        bool bad = false;
        for (const auto& arr : j.at("constituents")) {
            if (!arr.is_array() || arr.size() != 4)
                throw DataError(path.string() + ":" + std::to_string(line_no) +
                                ": constituent must be [E,px,py,pz]");
            FourVector c{arr[0].get<double>(), arr[1].get<double>(), arr[2].get<double>(),
                         arr[3].get<double>()};
            if (!(c.pt() > 0.0) || !(c.E > 0.0)) { bad = true; break; }
            jet.constituents.push_back(c);
        }
        if (bad || jet.constituents.empty()) {
            ++local.skipped;
            continue;
        }
        if (!jet.is_pt_sorted()) {
            jet.sort_by_pt();
            ++local.resorted;
        }
        if (static_cast<int>(jet.constituents.size()) > n_max) {
            jet.constituents.resize(n_max);
            ++local.truncated;
        }
        out.jets.push_back(std::move(jet));
    }
    if (report) {
        report->resorted += local.resorted;
        report->skipped += local.skipped;
        report->truncated += local.truncated;
    }
    return out;
}

/// Load a dataset. A directory is expected to hold train/val/test .jsonl files;
/// a single file lands in the split named by its header (default: test).
inline DatasetSplit load_jets(const std::filesystem::path& path, int n_max = kDefaultNMax,
                              LoadReport* report = nullptr) {
    DatasetSplit ds;
    if (std::filesystem::is_directory(path)) {
        for (const char* name : {"train", "val", "test"}) {
            const auto file = path / (std::string(name) + ".jsonl");
            if (!std::filesystem::exists(file))
                throw DataError("dataset directory is missing " + file.string());
            auto loaded = load_jet_file(file, n_max, report);
            ds.provenance = loaded.provenance;
            auto& dst = (std::string(name) == "train") ? ds.train
                       : (std::string(name) == "val") ? ds.val
                                                      : ds.test;
            dst = std::move(loaded.jets);
        }
        return ds;
    }
    auto loaded = load_jet_file(path, n_max, report);
    ds.provenance = loaded.provenance;
    auto& dst = (loaded.split_name == "train") ? ds.train
               : (loaded.split_name == "val") ? ds.val
                                              : ds.test;
    dst = std::move(loaded.jets);
    return ds;
}

} // namespace jetlab
