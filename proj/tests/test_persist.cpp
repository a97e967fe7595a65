#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include <sir/harness.hpp>
#include <sir/persist.hpp>

using namespace sir;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
    auto p = std::filesystem::temp_directory_path() / ("sir_persist_" + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

Config tiny_config(std::uint64_t seed) {
    Config cfg;
    cfg.seed = seed;
    cfg.image_size = 16;
    cfg.base_channels = 2;
    cfg.loops = 2;
    cfg.batch_size = 4;
    cfg.iterations = 10;
    return cfg;
}

std::vector<Tensor> random_train_set(std::uint64_t seed, int count, int size) {
    std::vector<Tensor> out;
    for (int i = 0; i < count; ++i) {
        Rng rng(seed + i);
        Tensor t(Shape{1, 1, size, size});
        for (double& v : t.data) v = rng.uniform();
        out.push_back(std::move(t));
    }
    return out;
}

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("checkpoint round trip is bit-exact") {
    auto dir = temp_dir("rt");
    Config cfg = tiny_config(31);
    Trainer t(cfg, random_train_set(1, 3, 16));
    t.run(5);
    t.save((dir / "ckpt.bin").string());

    Checkpoint ckpt = load_checkpoint_file((dir / "ckpt.bin").string());
    SirModel fresh = make_model(999, 1, 2, 2); // different init, fully overwritten
    Adam opt(student_params(fresh), AdamConfig{});
    REQUIRE(apply_checkpoint(ckpt, fresh, &opt));
    for (const NamedParam& p : student_params(t.model())) {
        const CheckpointEntry* e = ckpt.find(p.name);
        REQUIRE(e != nullptr);
        REQUIRE(e->data == p.tensor->data);
    }
    SirModel& orig = t.model();
    for (const NamedParam& p : teacher_params(orig)) {
        SirModel* f = &fresh;
        for (const NamedParam& q : teacher_params(*f))
            if (q.name == p.name) REQUIRE(q.tensor->data == p.tensor->data);
    }
    REQUIRE(opt.step_count() == 5);
}

TEST_CASE("corrupt magic is rejected before any tensor read") {
    auto dir = temp_dir("magic");
    std::ofstream f(dir / "bad.bin", std::ios::binary);
    f << "NOTCKPT0" << std::string(64, '\0');
    f.close();
    REQUIRE_THROWS_WITH(load_checkpoint_file((dir / "bad.bin").string()),
                        Catch::Matchers::ContainsSubstring("magic"));
}

TEST_CASE("truncated payload names the offending entry") {
    auto dir = temp_dir("trunc");
    Config cfg = tiny_config(33);
    Trainer t(cfg, random_train_set(2, 2, 16));
    t.save((dir / "ckpt.bin").string());
    std::string bytes = read_bytes(dir / "ckpt.bin");
    bytes.resize(bytes.size() / 2);
    std::ofstream f(dir / "cut.bin", std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.close();
    try {
        load_checkpoint_file((dir / "cut.bin").string());
        FAIL("expected truncation error");
    } catch (const Error& e) {
        REQUIRE(std::string(e.what()).find("truncated") != std::string::npos);
        // the message names an entry or field context
        REQUIRE(std::string(e.what()).find("'") != std::string::npos);
    }
}

TEST_CASE("teacher-only files load and leave the student fresh") {
    auto dir = temp_dir("teacher");
    SirModel src = make_model(41, 1, 2, 3);
    Checkpoint ckpt;
    for (const NamedParam& p : teacher_params(src)) ckpt.entries.push_back(entry_of(p.name, *p.tensor));
    std::ofstream f(dir / "teacher.bin", std::ios::binary);
    write_checkpoint(f, ckpt);
    f.close();

    SirModel dst = make_model(42, 1, 2, 3);
    const std::vector<double> student_before = dst.student.up.weight.data;
    Adam opt(student_params(dst), AdamConfig{});
    Checkpoint loaded = load_checkpoint_file((dir / "teacher.bin").string());
    REQUIRE_FALSE(apply_checkpoint(loaded, dst, &opt)); // no optimizer state present
    REQUIRE(dst.teacher.stages[0].weight.data == src.teacher.stages[0].weight.data);
    REQUIRE(dst.student.up.weight.data == student_before);
    REQUIRE(opt.step_count() == 0);
}

TEST_CASE("loop count is not a parameter shape: L=3 checkpoint loads into L=5") {
    auto dir = temp_dir("loops");
    Config cfg = tiny_config(43);
    cfg.loops = 3;
    Trainer t(cfg, random_train_set(3, 2, 16));
    t.run(3);
    t.save((dir / "ckpt.bin").string());

    SirModel m5 = make_model(44, 1, 2, 5);
    Checkpoint ckpt = load_checkpoint_file((dir / "ckpt.bin").string());
    apply_checkpoint(ckpt, m5, nullptr);
    REQUIRE(m5.student.up.weight.data == t.model().student.up.weight.data);
}

TEST_CASE("shape-mismatched entries are rejected by name") {
    SirModel src = make_model(45, 1, 2, 3);
    Checkpoint ckpt = build_checkpoint(src, nullptr, "");
    SirModel wide = make_model(46, 1, 4, 3); // different channel plan
    try {
        apply_checkpoint(ckpt, wide, nullptr);
        FAIL("expected shape rejection");
    } catch (const Error& e) {
        REQUIRE(e.kind() == ErrorKind::shape);
        REQUIRE(std::string(e.what()).find("teacher.stage1.weight") != std::string::npos);
    }
}

TEST_CASE("resumed training reproduces the uninterrupted loss trajectory exactly") {
    auto dir = temp_dir("resume");
    Config cfg = tiny_config(47);
    auto imgs = random_train_set(10, 3, 16);

    Trainer uninterrupted(cfg, imgs);
    uninterrupted.run(14);

    Trainer first_half(cfg, imgs);
    first_half.run(7);
    first_half.save((dir / "mid.bin").string());

    Trainer resumed(cfg, imgs);
    resumed.restore(load_checkpoint_file((dir / "mid.bin").string()));
    resumed.run(7);

    REQUIRE(resumed.loss_history().size() == 7);
    for (int i = 0; i < 7; ++i)
        REQUIRE(resumed.loss_history()[i] == uninterrupted.loss_history()[7 + i]);

    // and the resulting checkpoints are byte-identical
    uninterrupted.save((dir / "full.bin").string());
    resumed.save((dir / "resumed.bin").string());
    REQUIRE(read_bytes(dir / "full.bin") == read_bytes(dir / "resumed.bin"));
}

TEST_CASE("config echo survives the checkpoint") {
    auto dir = temp_dir("echo");
    Config cfg = tiny_config(49);
    Trainer t(cfg, random_train_set(20, 2, 16));
    t.run(2);
    t.save((dir / "ckpt.bin").string());
    Checkpoint ckpt = load_checkpoint_file((dir / "ckpt.bin").string());
    auto kv = parse_kv(ckpt.config_echo);
    REQUIRE(kv.at("seed") == "49");
    REQUIRE(kv.at("state.iteration") == "2");
}
