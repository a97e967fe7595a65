#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include <sir/data.hpp>
#include <sir/image_io.hpp>

using namespace sir;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
    auto p = std::filesystem::temp_directory_path() / ("sir_test_" + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream f(p, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("P5 decoding scales bytes into [0,1]") {
    auto dir = temp_dir("p5");
    std::string img = "P5\n2 2\n255\n";
    img += static_cast<char>(0);
    img += static_cast<char>(128);
    img += static_cast<char>(255);
    img += static_cast<char>(64);
    write_bytes(dir / "a.pgm", img);
    Tensor t = load_image((dir / "a.pgm").string());
    REQUIRE(t.shape == Shape{1, 1, 2, 2});
    REQUIRE(t.data == std::vector<double>{0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0});
}

TEST_CASE("P6 all-zero payload gives an all-zero 3-channel tensor") {
    auto dir = temp_dir("p6");
    std::string img = "P6\n2 1\n255\n";
    img += std::string(6, '\0');
    write_bytes(dir / "a.ppm", img);
    Tensor t = load_image((dir / "a.ppm").string());
    REQUIRE(t.shape == Shape{1, 3, 1, 2});
    for (double v : t.data) REQUIRE(v == 0.0);
}

TEST_CASE("malformed netpbm inputs produce distinct parse errors") {
    auto dir = temp_dir("bad");
    write_bytes(dir / "magic.pgm", "P7\n1 1\n255\n\0");
    REQUIRE_THROWS_WITH(load_image((dir / "magic.pgm").string()),
                        Catch::Matchers::ContainsSubstring("magic"));

    write_bytes(dir / "maxval.pgm", std::string("P5\n1 1\n65535\n\0\0", 15));
    REQUIRE_THROWS_WITH(load_image((dir / "maxval.pgm").string()),
                        Catch::Matchers::ContainsSubstring("maxval"));

    // header promises 6 bytes, payload has 5: truncation reported with offsets
    std::string trunc = "P5 3 2 255\n";
    trunc += std::string(5, 'x');
    write_bytes(dir / "trunc.pgm", trunc);
    try {
        load_image((dir / "trunc.pgm").string());
        FAIL("expected truncation error");
    } catch (const Error& e) {
        REQUIRE(e.kind() == ErrorKind::data);
        REQUIRE(std::string(e.what()).find("truncated payload") != std::string::npos);
        REQUIRE(std::string(e.what()).find("17") != std::string::npos); // 11-byte header + 6 payload
    }

    write_bytes(dir / "noheader.pgm", "P5 a b\n");
    REQUIRE_THROWS_WITH(load_image((dir / "noheader.pgm").string()),
                        Catch::Matchers::ContainsSubstring("malformed header"));
}

TEST_CASE("write/load round trip is exact for 8-bit-quantized tensors") {
    auto dir = temp_dir("rt");
    Rng rng(61);
    Tensor t(Shape{1, 1, 7, 5});
    for (double& v : t.data) v = static_cast<double>(rng.below(256)) / 255.0;
    write_image((dir / "t.pgm").string(), t);
    Tensor back = load_image((dir / "t.pgm").string());
    REQUIRE(back.data == t.data);

    Tensor rgb(Shape{1, 3, 4, 4});
    for (double& v : rgb.data) v = static_cast<double>(rng.below(256)) / 255.0;
    write_image((dir / "t.ppm").string(), rgb);
    REQUIRE(load_image((dir / "t.ppm").string()).data == rgb.data);
}

TEST_CASE("preprocess") {
    Tensor same(Shape{1, 1, 8, 8});
    for (double& v : same.data) v = 0.5;
    Tensor out = preprocess(same, 8, 1);
    REQUIRE(out.data == same.data);

    // constant gray is preserved exactly through bilinear resize
    Tensor big(Shape{1, 1, 10, 10});
    for (double& v : big.data) v = 0.3;
    for (double v : preprocess(big, 16, 1).data) REQUIRE(v == 0.3);

    // pure red collapses to the luminance weight
    Tensor red(Shape{1, 3, 4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) red.at(0, 0, y, x) = 1.0;
    Tensor gray = preprocess(red, 4, 1);
    for (double v : gray.data) REQUIRE_THAT(v, Catch::Matchers::WithinAbs(0.299, 1e-12));

    // 1 -> 3 replication
    Tensor mono(Shape{1, 1, 4, 4});
    mono.at(0, 0, 1, 2) = 0.8;
    Tensor rgb = preprocess(mono, 4, 3);
    for (int c = 0; c < 3; ++c) REQUIRE(rgb.at(0, c, 1, 2) == 0.8);
}

TEST_CASE("manifest round trip") {
    auto dir = temp_dir("man");
    DatasetManifest m;
    m.domain = "grid0";
    m.train_normal = {"imgs/t0.pgm", "imgs/t1.pgm"};
    m.test_normal = {"imgs/n0.pgm"};
    m.test_anomalous = {"imgs/a0.pgm"};
    write_manifest((dir / "manifest.txt").string(), m);
    DatasetManifest back = load_manifest((dir / "manifest.txt").string());
    REQUIRE(back.domain == m.domain);
    REQUIRE(back.train_normal == m.train_normal);
    REQUIRE(back.test_normal == m.test_normal);
    REQUIRE(back.test_anomalous == m.test_anomalous);
    REQUIRE(back.base_dir == dir.string());
}

TEST_CASE("build_protocol shapes and determinism") {
    std::vector<DatasetManifest> manifests;
    for (int d = 0; d < 9; ++d) {
        DatasetManifest m;
        m.domain = "dom" + std::to_string(d);
        m.base_dir = "/data";
        for (int i = 0; i < 5; ++i) m.train_normal.push_back("t" + std::to_string(i) + ".pgm");
        m.test_normal = {"n.pgm"};
        m.test_anomalous = {"a.pgm"};
        manifests.push_back(m);
    }

    Protocol one{ProtocolKind::one_shot_universal, 1, 7};
    auto runs = build_protocol(manifests, one);
    REQUIRE(runs.size() == 1);
    REQUIRE(runs[0].train_paths.size() == 9); // one per domain, pooled
    REQUIRE(runs[0].tests.size() == 9);

    // identical seed, identical selection
    auto runs2 = build_protocol(manifests, one);
    REQUIRE(runs2[0].train_paths == runs[0].train_paths);

    Protocol full{ProtocolKind::full_shot_specialized, 1, 7};
    auto fruns = build_protocol({manifests[0]}, full);
    REQUIRE(fruns.size() == 1);
    REQUIRE(fruns[0].train_paths.size() == 5);

    Protocol kshot{ProtocolKind::k_shot_universal, 3, 7};
    auto kruns = build_protocol(manifests, kshot);
    REQUIRE(kruns[0].train_paths.size() == 27);

    Protocol spec1{ProtocolKind::one_shot_specialized, 1, 7};
    auto sruns = build_protocol(manifests, spec1);
    REQUIRE(sruns.size() == 9);
    for (const auto& r : sruns) REQUIRE(r.train_paths.size() == 1);

    DatasetManifest empty;
    empty.domain = "hollow";
    empty.test_normal = {"n.pgm"};
    empty.test_anomalous = {"a.pgm"};
    REQUIRE_THROWS_WITH(build_protocol({empty}, one), Catch::Matchers::ContainsSubstring("hollow"));
}

TEST_CASE("parse_protocol") {
    REQUIRE(parse_protocol("one_shot_universal", 1).kind == ProtocolKind::one_shot_universal);
    REQUIRE(parse_protocol("k_shot_universal(4)", 1).k == 4);
    REQUIRE_THROWS_AS(parse_protocol("two_shot", 1), Error);
    REQUIRE_THROWS_AS(parse_protocol("k_shot_universal(0)", 1), Error);
}

TEST_CASE("synthetic benchmark is counted, labeled and reproducible") {
    auto dir = temp_dir("synth");
    SynthSpec spec;
    spec.domains = 3;
    spec.train_normals = 4;
    spec.test_normals = 4;
    spec.test_anomalies = 4;
    spec.size = 32;
    spec.seed = 99;
    auto manifests = synth_benchmark((dir / "a").string(), spec);
    REQUIRE(manifests.size() == 3);
    int files = 0;
    for (const auto& m : manifests) {
        REQUIRE(m.train_normal.size() == 4);
        REQUIRE(m.test_normal.size() == 4);
        REQUIRE(m.test_anomalous.size() == 4);
        files += 12;
        for (const std::string& p : m.train_normal) {
            Tensor t = load_image(m.resolve(p));
            REQUIRE(t.shape == Shape{1, 1, 32, 32});
        }
    }
    REQUIRE(files == 36);

    // bit-identical regeneration
    auto manifests2 = synth_benchmark((dir / "b").string(), spec);
    for (std::size_t d = 0; d < manifests.size(); ++d)
        for (const std::string& p : manifests[d].test_anomalous)
            REQUIRE(read_bytes(manifests[d].resolve(p)) == read_bytes(manifests2[d].resolve(p)));

    // contrast 0: anomalous images identical to their generated normal base
    SynthSpec zero = spec;
    zero.defect_contrast = 0.0;
    auto mz = synth_benchmark((dir / "z").string(), zero);
    for (const auto& m : mz)
        for (std::size_t i = 0; i < m.test_anomalous.size(); ++i) {
            // regenerate the base normal from the same per-image stream
            const auto dm = detail::make_domain_model(static_cast<int>(&m - &mz[0]), zero.seed);
            Rng rng(Rng::derive(zero.seed, "synth:" + m.domain + ":test_anom:" + std::to_string(i)));
            Tensor base = detail::synth_normal(dm, zero.size, rng);
            Tensor got = load_image(m.resolve(m.test_anomalous[i]));
            write_image((dir / "base.pgm").string(), base);
            REQUIRE(got.data == load_image((dir / "base.pgm").string()).data);
        }

    SynthSpec bad = spec;
    bad.test_anomalies = 0;
    REQUIRE_THROWS_AS(synth_benchmark((dir / "c").string(), bad), Error);
}
