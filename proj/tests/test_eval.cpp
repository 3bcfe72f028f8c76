#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "tbe/corpus.hpp"
#include "tbe/errors.hpp"
#include "tbe/eval.hpp"
#include "tbe/image.hpp"
#include "toy.hpp"

using namespace tbe;
namespace fs = std::filesystem;

namespace {

VideoRep rep(std::string id, std::string subject, std::vector<double> v) {
    return {std::move(id), std::move(subject), std::move(v), 1};
}

std::vector<double> random_vec(std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    std::vector<double> v(d);
    for (double& x : v) x = g(rng);
    return v;
}

Tensor random_image(std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> px(256);
    for (float& v : px) v = u(rng);
    return Tensor(Shape{1, 16, 16}, std::move(px));
}

class EvalCorpus : public ::testing::Test {
  protected:
    static void SetUpTestSuite() {
        dir_ = fs::temp_directory_path() / "tbe_test_eval_corpus";
        fs::remove_all(dir_);
        CorpusOptions opt;
        opt.n_subjects = 6;
        opt.train_stills = 1;
        opt.gallery_stills = 1;
        opt.videos = 3;
        opt.frames_per_video = 2;
        manifest_ = new Manifest(generate_corpus(opt, dir_, 21));
    }
    static void TearDownTestSuite() {
        delete manifest_;
        fs::remove_all(dir_);
    }
    static inline fs::path dir_;
    static inline Manifest* manifest_ = nullptr;
};

}  // namespace

TEST(Cosine, Examples) {
    const std::vector<double> a{1, 1}, b{1, 0}, c{0, 3};
    EXPECT_NEAR(cosine_similarity(a, a), 1.0, 1e-15);
    EXPECT_EQ(cosine_similarity(b, c), 0.0);
    EXPECT_NEAR(cosine_similarity(a, b), 1 / std::sqrt(2.0), 1e-15);
    const std::vector<double> zero{0, 0}, three{1, 2, 3};
    EXPECT_THROW(cosine_similarity(a, zero), SimilarityError);
    EXPECT_THROW(cosine_similarity(a, three), DimensionError);
}

TEST(Cosine, SymmetricAndBounded) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i) {
        const auto u = random_vec(8, rng), v = random_vec(8, rng);
        const double s = cosine_similarity(u, v);
        EXPECT_NEAR(s, cosine_similarity(v, u), 1e-7);
        EXPECT_LE(std::abs(s), 1.0);
    }
}

TEST(Roc, PerfectSeparation) {
    const std::vector<double> s{0.9, 0.8, 0.1, 0.2, 0.3};
    const std::vector<bool> same{true, true, false, false, false};
    const std::vector<double> fars{0.01};
    EXPECT_EQ(roc_and_vr(s, same, fars).vr_at_far.at(0.01), 1.0);
}

TEST(Roc, AllScoresEqual) {
    const std::vector<double> s(10, 0.4);
    std::vector<bool> same(10, false);
    same[0] = same[1] = same[2] = true;
    const std::vector<double> fars{0.01, 1.0};
    const RocResult r = roc_and_vr(s, same, fars);
    EXPECT_EQ(r.vr_at_far.at(0.01), 0.0);
    EXPECT_EQ(r.vr_at_far.at(1.0), 1.0);
    EXPECT_EQ(r.points.back().far, 1.0);
    EXPECT_EQ(r.points.back().vr, 1.0);
}

TEST(Roc, MatchesBruteForceCounting) {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> q(0, 40);
    std::bernoulli_distribution coin(0.3);
    std::vector<double> s(200);
    std::vector<bool> same(200);
    for (std::size_t i = 0; i < 200; ++i) {
        same[i] = coin(rng);
        s[i] = q(rng) / 40.0 + (same[i] ? 0.2 : 0.0);  // coarse grid forces ties
    }
    const std::vector<double> fars{0.001, 0.01, 0.1, 0.5};
    const RocResult r = roc_and_vr(s, same, fars);
    const double pos = static_cast<double>(std::count(same.begin(), same.end(), true));
    const double neg = 200.0 - pos;
    std::set<double> unique(s.begin(), s.end());
    EXPECT_EQ(r.points.size(), unique.size() + 1);
    EXPECT_EQ(r.points.front().far, 0.0);
    EXPECT_EQ(r.points.front().vr, 0.0);
    for (std::size_t k = 1; k < r.points.size(); ++k) {
        const RocPoint& p = r.points[k];
        double ta = 0, fa = 0;
        for (std::size_t i = 0; i < 200; ++i)
            if (s[i] >= p.threshold) (same[i] ? ta : fa) += 1;
        EXPECT_EQ(p.vr, ta / pos);
        EXPECT_EQ(p.far, fa / neg);
        EXPECT_GE(p.vr, r.points[k - 1].vr);
        EXPECT_GE(p.far, r.points[k - 1].far);
    }
    EXPECT_EQ(r.points.back().far, 1.0);
    EXPECT_EQ(r.points.back().vr, 1.0);
    for (double f : fars) {
        double best = 0.0;
        for (const auto& p : r.points)
            if (p.far <= f) best = std::max(best, p.vr);
        EXPECT_EQ(r.vr_at_far.at(f), best) << f;
    }
}

TEST(Roc, SingleClassIsAnError) {
    const std::vector<double> s{0.1, 0.2};
    const std::vector<bool> same{true, true};
    EXPECT_THROW(roc_and_vr(s, same, std::vector<double>{0.01}), MetricError);
}

TEST(Rank1, ExamplesAndOracle) {
    std::vector<VideoRep> gallery{rep("g0", "a", {1, 0, 0}), rep("g1", "b", {0, 1, 0}), rep("g2", "c", {0, 0, 1})};
    EXPECT_EQ(rank1_identify(gallery, std::vector<VideoRep>{rep("p", "b", {0, 1, 0})}), 1.0);
    // equidistant to g0 and g1: the lower index wins
    EXPECT_EQ(rank1_identify(gallery, std::vector<VideoRep>{rep("p", "a", {1, 1, 0})}), 1.0);
    EXPECT_EQ(rank1_identify(gallery, std::vector<VideoRep>{rep("p", "b", {1, 1, 0})}), 0.0);

    std::mt19937_64 rng(3);
    std::vector<VideoRep> g, p;
    for (int i = 0; i < 6; ++i) g.push_back(rep("g" + std::to_string(i), "s" + std::to_string(i), random_vec(5, rng)));
    for (int i = 0; i < 10; ++i) p.push_back(rep("p" + std::to_string(i), "s" + std::to_string(i % 6), random_vec(5, rng)));
    double hits = 0;
    for (const auto& pr : p) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < g.size(); ++j)
            if (cosine_similarity(pr.vector, g[j].vector) > cosine_similarity(pr.vector, g[best].vector)) best = j;
        hits += g[best].subject_id == pr.subject_id;
    }
    EXPECT_DOUBLE_EQ(rank1_identify(g, p), hits / 10.0);

    EXPECT_THROW(rank1_identify(std::vector<VideoRep>{}, p), ParameterError);
    gallery.push_back(rep("g0", "d", {1, 1, 1}));
    EXPECT_THROW(rank1_identify(gallery, p), ParameterError);
}

TEST(VideoRep, SymmetricStillEqualsItsEmbedding) {
    Model m(toy::tiny(), 0, 4);
    std::mt19937_64 rng(4);
    Tensor img = random_image(rng);
    Tensor sym = flip_horizontal(img);
    for (std::size_t i = 0; i < img.numel(); ++i) sym.mutable_data()[i] = img.data()[i] + sym.data()[i];
    const VideoRep r = video_representation(m, {{sym, 0}});
    NoGradGuard g;
    const Tensor e = m.forward_embed(stack_images(std::vector<Tensor>{sym}));
    ASSERT_EQ(r.vector.size(), 4u);
    for (std::size_t d = 0; d < 4; ++d) EXPECT_NEAR(r.vector[d], e.data()[d], 1e-6);
}

TEST(VideoRep, OrderAndDuplicationInvariant) {
    Model m(toy::tiny(), 0, 5);
    std::mt19937_64 rng(5);
    std::vector<Frame> frames;
    for (int i = 0; i < 5; ++i) frames.push_back({random_image(rng), i});
    const VideoRep base = video_representation(m, frames);
    std::vector<Frame> shuffled{frames[3], frames[0], frames[4], frames[2], frames[1]};
    EXPECT_EQ(video_representation(m, shuffled).vector, base.vector);
    std::vector<Frame> doubled = frames;
    doubled.insert(doubled.end(), frames.begin(), frames.end());
    const VideoRep d = video_representation(m, doubled);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(d.vector[k], base.vector[k], 1e-12);
    EXPECT_EQ(base.n_frames, 5u);
    EXPECT_THROW(video_representation(m, {}), ParameterError);
}

TEST_F(EvalCorpus, PairCountsAndSwapSymmetry) {
    Model m(load_preset("mini_tbe"), 0, 6);
    const EvalReport v2v = run_protocol(Protocol::v2v, *manifest_, m);
    EXPECT_EQ(v2v.scores.size(), 18u * 17 / 2);
    EXPECT_FALSE(v2v.rank1.has_value());

    const EvalReport s2v = run_protocol(Protocol::s2v, *manifest_, m);
    const EvalReport v2s = run_protocol(Protocol::v2s, *manifest_, m);
    EXPECT_EQ(s2v.scores.size(), 6u * 12);  // gallery stills x probe videos
    std::multiset<double> a, b;
    for (const auto& s : s2v.scores) a.insert(s.score);
    for (const auto& s : v2s.scores) b.insert(s.score);
    EXPECT_EQ(a, b);
    for (const auto& s : s2v.scores) EXPECT_LE(std::abs(s.score), 1.0);

    const EvalReport id = run_protocol(Protocol::id, *manifest_, m);
    EXPECT_EQ(id.scores.size(), 12u * 6);
    ASSERT_TRUE(id.rank1.has_value());
}

TEST_F(EvalCorpus, OcclusionIsSeededAndChangesScores) {
    Model m(load_preset("mini_tbe"), 0, 7);
    EvalOptions o;
    o.occlusion_area = 0.25;
    o.seed = 3;
    const auto a = run_protocol(Protocol::s2v, *manifest_, m, o);
    const auto b = run_protocol(Protocol::s2v, *manifest_, m, o);
    const auto clean = run_protocol(Protocol::s2v, *manifest_, m);
    EXPECT_EQ(a.scores[0].score, b.scores[0].score);
    EXPECT_NE(a.scores[0].score, clean.scores[0].score);
}

TEST_F(EvalCorpus, ReportJsonHasTheFields) {
    Model m(load_preset("mini_tbe"), 0, 8);
    const auto r = run_protocol(Protocol::s2v, *manifest_, m);
    const std::string j = report_json(r);
    for (const char* key : {"\"protocol\": \"S2V-id\"", "\"vr_at_far\"", "\"rank1\"", "\"roc\"", "\"scores\""})
        EXPECT_NE(j.find(key), std::string::npos) << key;
    EXPECT_EQ(roc_tsv(r).substr(0, 7), "far\tvr\n");
}

TEST(Protocol, MissingSplitIsAManifestError) {
    Manifest m;
    m.records.push_back({"x.pgm", "s1", "v", 0, Stream::real_video, std::nullopt, std::nullopt});
    Model model(toy::tiny(), 0, 1);
    EXPECT_THROW(run_protocol(Protocol::s2v, m, model), ManifestError);
    EXPECT_THROW(parse_protocol("x2y"), ParameterError);
}
