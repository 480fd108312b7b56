#include <doctest.h>

#include <map>
#include <set>

#include "subbench/container.hpp"
#include "subbench/corpus.hpp"
#include "subbench/error.hpp"
#include "subbench/png_io.hpp"
#include "support.hpp"

using namespace subbench;

namespace {

ImageRecord labelled(const std::string& id, Labels labels) {
    ImageRecord r;
    r.id = id;
    r.path = id + ".png";
    r.width = r.height = 16;
    r.labels = std::move(labels);
    return r;
}

Manifest two_class(int a, int b) {
    std::vector<ImageRecord> rs;
    for (int i = 0; i < a; ++i) rs.push_back(labelled("a" + std::to_string(i), {{"class", "A"}}));
    for (int i = 0; i < b; ++i) rs.push_back(labelled("b" + std::to_string(i), {{"class", "B"}}));
    return Manifest(rs);
}

Manifest random_manifest(Rng& rng, std::size_t n) {
    std::vector<ImageRecord> rs;
    const char* genders[] = {"F", "M"};
    for (std::size_t i = 0; i < n; ++i) {
        auto r = labelled("img/" + std::to_string(i), {{"gender", genders[rng.below(2)]},
                                                      {"age_group", std::to_string(18 + 2 * rng.below(4))}});
        r.modality = rng.below(2) ? Modality::Xray : Modality::Histology;
        r.channels = rng.below(2) ? 1 : 3;
        r.split = rng.below(2) ? Split::Train : Split::Test;
        if (rng.below(3) == 0) {
            r.source_kind = SourceKind::Synthetic;
            r.provenance = Provenance{"gan-" + std::to_string(rng.below(5)), "ckpt \"" + std::to_string(i) + "\""};
        }
        rs.push_back(r);
    }
    return Manifest(rs);
}

std::map<std::string, int> histogram(const Manifest& m, const std::vector<std::string>& ids, const std::string& key) {
    std::map<std::string, int> h;
    for (const auto& id : ids) h[m.at(id).label(key)]++;
    return h;
}

}  // namespace

TEST_SUITE("corpus") {
    TEST_CASE("ingest an empty directory") {
        testing::TempDir dir("ingest-empty");
        const auto r = ingest_directory(dir.path(), Modality::Xray, {});
        CHECK(r.manifest.empty());
        CHECK(r.rejects.empty());
        CHECK_THROWS_AS(ingest_directory(dir / "missing", Modality::Xray, {}), DataError);
    }

    TEST_CASE("ingest records valid files and rejects corrupt ones") {
        testing::TempDir dir("ingest");
        Rng rng(21);
        write_png(dir / "train/normal/a.png", testing::random_image(8, 8, rng));
        write_png(dir / "train/normal/b.png", testing::random_image(8, 6, rng), 16);
        write_png(dir / "test/nodule/c.png", testing::random_image(5, 7, rng, 3));
        write_file(dir / "test/nodule/broken.png", "\x89PNG\r\n\x1a\nnot really");
        write_file(dir / "notes.txt", "ignored");

        const std::vector<LabelRule> rules{LabelRule::parse("class=parent"), LabelRule::parse("split=parent:2")};
        const auto r = ingest_directory(dir.path(), Modality::Xray, rules);
        REQUIRE(r.manifest.size() == 3);
        REQUIRE(r.rejects.size() == 1);
        CHECK(r.rejects[0].path.find("broken.png") != std::string::npos);

        const auto& c = r.manifest.at("test/nodule/c");
        CHECK(c.split == Split::Test);
        CHECK(c.label("class") == "nodule");
        CHECK(c.channels == 3);
        CHECK(c.width == 7);
        CHECK(c.height == 5);
        CHECK(r.manifest.at("train/normal/b").split == Split::Train);
        CHECK(r.manifest.ids() == std::vector<std::string>{"test/nodule/c", "train/normal/a", "train/normal/b"});

        const auto again = ingest_directory(dir.path(), Modality::Xray, rules);
        CHECK(again.manifest.checksum() == r.manifest.checksum());
        CHECK(again.manifest.serialize() == r.manifest.serialize());
    }

    TEST_CASE("ingest rejects files that break a label rule") {
        testing::TempDir dir("ingest-rule");
        Rng rng(22);
        write_png(dir / "x/F_18.png", testing::random_image(4, 4, rng));
        write_png(dir / "x/unlabelled.png", testing::random_image(4, 4, rng));
        const auto r = ingest_directory(dir.path(), Modality::Xray, {LabelRule::parse("gender=regex:([FM])_\\d+")});
        REQUIRE(r.manifest.size() == 1);
        CHECK(r.manifest.records()[0].label("gender") == "F");
        CHECK(r.rejects.size() == 1);
    }

    TEST_CASE("duplicate ids are fatal") {
        testing::TempDir dir("ingest-dup");
        Rng rng(23);
        write_png(dir / "a/x.png", testing::random_image(4, 4, rng));
        write_file(dir / "a/x.tif", "tiff");
        CHECK_THROWS_AS(ingest_directory(dir.path(), Modality::Xray, {}), DataError);
    }

    TEST_CASE("label rules parse") {
        auto r = LabelRule::parse("class=parent");
        CHECK(r.key == "class");
        CHECK(r.source == LabelRule::Source::ParentDir);
        CHECK(r.depth == 1);
        r = LabelRule::parse("split=parent:2");
        CHECK(r.depth == 2);
        r = LabelRule::parse("age=regex:_(\\d+)");
        CHECK(r.source == LabelRule::Source::Regex);
        CHECK(r.pattern == "_(\\d+)");
        CHECK_THROWS_AS(LabelRule::parse("class"), ConfigError);
        CHECK_THROWS_AS(LabelRule::parse("class=grandparent"), ConfigError);
        CHECK_THROWS_AS(LabelRule::parse("class=parent:0"), ConfigError);
    }

    TEST_CASE("balanced sample") {
        const auto m = two_class(100, 50);
        const auto ids = balanced_sample(m, {"class"}, 80, 3);
        REQUIRE(ids.size() == 80);
        const auto h = histogram(m, ids, "class");
        CHECK(h.at("A") == 40);
        CHECK(h.at("B") == 40);
        CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == 80);
        CHECK(balanced_sample(m, {"class"}, 80, 3) == ids);
        CHECK(balanced_sample(m, {"class"}, 80, 4) != ids);

        try {
            balanced_sample(m, {"class"}, 120, 3);
            FAIL("expected a deficit error");
        } catch (const DataError& e) {
            const std::string what = e.what();
            CHECK(what.find("class=B") != std::string::npos);
            CHECK(what.find("deficit 10") != std::string::npos);
            CHECK(what.find("class=A") == std::string::npos);
        }
    }

    TEST_CASE("balanced sample is uniform over label combinations") {
        Rng rng(24);
        for (int trial = 0; trial < 20; ++trial) {
            const auto m = random_manifest(rng, 200 + rng.below(200));
            std::map<std::string, int> combos;
            for (const auto& r : m.records()) combos[r.label("gender") + r.label("age_group")]++;
            int smallest = 1 << 30;
            for (const auto& [k, v] : combos) smallest = std::min(smallest, v);
            const std::size_t per = 1 + rng.below(smallest);
            const auto ids = balanced_sample(m, {"gender", "age_group"}, per * combos.size(), rng.next());
            std::map<std::string, std::size_t> got;
            for (const auto& id : ids) got[m.at(id).label("gender") + m.at(id).label("age_group")]++;
            CHECK(got.size() == combos.size());
            for (const auto& [k, v] : got) CHECK(v == per);
        }
    }

    TEST_CASE("train test split") {
        const auto m = two_class(10, 0);
        const auto s = split_train_test(m, 0.2, {}, 1);
        CHECK(s.train.size() == 8);
        CHECK(s.test.size() == 2);

        const auto strat = two_class(50, 50);
        const auto t = split_train_test(strat, 0.1, {"class"}, 2);
        const auto h = histogram(strat, t.test, "class");
        CHECK(h.at("A") == 5);
        CHECK(h.at("B") == 5);
        CHECK_THROWS_AS(split_train_test(two_class(5, 1), 0.2, {"class"}, 1), DataError);
        CHECK_THROWS_AS(split_train_test(m, 1.0, {}, 1), DataError);
    }

    TEST_CASE("split is a partition") {
        Rng rng(25);
        for (int trial = 0; trial < 30; ++trial) {
            const auto m = random_manifest(rng, 50 + rng.below(100));
            const double fraction = rng.uniform(0.05, 0.95);
            const auto s = split_train_test(m, fraction, {"gender"}, rng.next());
            std::set<std::string> all(s.train.begin(), s.train.end());
            for (const auto& id : s.test) CHECK(all.insert(id).second);
            CHECK(all.size() == m.size());
            for (const std::string g : {"F", "M"}) {
                std::size_t n = 0, k = 0;
                for (const auto& r : m.records()) n += r.label("gender") == g;
                for (const auto& id : s.test) k += m.at(id).label("gender") == g;
                CHECK(std::abs(static_cast<double>(k) - fraction * n) <= 1.0);
            }
        }
    }

    TEST_CASE("manifest round trip") {
        Rng rng(26);
        testing::TempDir dir("manifest");
        for (int trial = 0; trial < 20; ++trial) {
            const auto m = random_manifest(rng, rng.below(40));
            const auto back = Manifest::parse(m.serialize());
            CHECK(back == m);
            CHECK(back.checksum() == m.checksum());
            m.save(dir / "m.jsonl");
            CHECK(Manifest::load(dir / "m.jsonl") == m);
        }
        auto text = random_manifest(rng, 5).serialize();
        text[text.size() - 3] ^= 1;
        CHECK_THROWS_AS(Manifest::parse(text), DataError);
    }

    TEST_CASE("record validation") {
        auto r = labelled("x", {});
        CHECK_NOTHROW(r.validate());
        r.source_kind = SourceKind::Synthetic;
        CHECK_THROWS_AS(r.validate(), DataError);
        r.provenance = Provenance{"g", "g-e0"};
        CHECK_NOTHROW(r.validate());
        r.channels = 2;
        CHECK_THROWS_AS(r.validate(), DataError);
        CHECK_THROWS_AS(Manifest({labelled("x", {}), labelled("x", {})}), DataError);
    }

    TEST_CASE("study groups") {
        StudyGroup g;
        g.name = "x-norm";
        g.schema = {{"gender", {"F", "M"}}, {"age_group", {}}};
        g.age_binning = StudyGroup::regular_bins(18, 67, 2);
        CHECK(g.age_binning.size() == 25);
        CHECK(g.age_binning.front() == AgeBin{18, 19});
        CHECK(g.age_binning.back() == AgeBin{66, 67});
        CHECK_NOTHROW(g.validate());
        CHECK(g.age_group(18) == "18-19");
        CHECK(g.age_group(19) == "18-19");
        CHECK(g.age_group(20) == "20-21");
        CHECK(g.age_group(67) == "66-67");
        CHECK_THROWS_AS(g.age_group(17), DataError);
        CHECK_THROWS_AS(g.age_group(68), DataError);

        CHECK_NOTHROW(g.check_record(labelled("a", {{"gender", "F"}, {"age_group", "20-21"}})));
        CHECK_THROWS_AS(g.check_record(labelled("a", {{"gender", "X"}, {"age_group", "20-21"}})), DataError);
        CHECK_THROWS_AS(g.check_record(labelled("a", {{"gender", "F"}})), DataError);

        g.age_binning = {{18, 25}, {25, 30}};
        CHECK_THROWS_AS(g.validate(), ConfigError);
        g.age_binning = {{18, 24}, {25, 34}, {35, 44}, {45, 54}, {55, 70}};
        CHECK_NOTHROW(g.validate());
        CHECK(g.age_group(60) == "55-70");
    }
}
