#include "support.hpp"

#include "alner/embeddings.hpp"
#include "alner/pca.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

using namespace alner;
using alner::testing::TempDir;

namespace {

/// Cyclic Jacobi eigen-decomposition of a small symmetric matrix; eigenvalues sorted descending.
std::vector<double> jacobi_eigenvalues(std::vector<std::vector<double>> a) {
    const std::size_t n = a.size();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                off += a[p][q] * a[p][q];
            }
        }
        if (off < 1e-30) {
            break;
        }
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) {
                    continue;
                }
                const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
                const double c = 1 / std::sqrt(t * t + 1), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) {
        values[i] = a[i][i];
    }
    std::sort(values.rbegin(), values.rend());
    return values;
}

std::vector<std::vector<double>> covariance(const EmbeddingMatrix& m) {
    const std::size_t n = m.rows(), d = m.dim();
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            mean[j] += m.row(i)[j];
        }
    }
    for (auto& v : mean) {
        v /= static_cast<double>(n);
    }
    std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t b = 0; b < d; ++b) {
                cov[a][b] += (m.row(i)[a] - mean[a]) * (m.row(i)[b] - mean[b]);
            }
        }
    }
    for (auto& row : cov) {
        for (auto& v : row) {
            v /= static_cast<double>(n - 1);
        }
    }
    return cov;
}

EmbeddingMatrix random_matrix(std::size_t rows, std::size_t dim, std::uint64_t seed) {
    EmbeddingMatrix m(rows, dim);
    Rng rng(seed);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < dim; ++j) {
            // Columns with different scales give a well-spread spectrum.
            m.row(i)[j] = static_cast<float>(rng.normal() * (1.0 + static_cast<double>(j)));
        }
    }
    return m;
}

Eigen::MatrixXd as_eigen(const EmbeddingMatrix& m) {
    Eigen::MatrixXd out(m.rows(), m.dim());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.dim(); ++j) {
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m.row(i)[j];
        }
    }
    return out;
}

Corpus tiny_corpus() { return alner::testing::corpus_from_text("a O\nb B-X\n\nc O\n"); }

}

TEST(Embf, RoundTripPreservesEverything) {
    TempDir dir("embf");
    const auto corpus = tiny_corpus();
    EmbeddingMatrix m(3, 4, corpus.manifest_hash());
    for (std::size_t i = 0; i < m.data().size(); ++i) {
        m.data()[i] = static_cast<float>(i) * 0.25f - 1.0f;
    }
    const auto path = (dir.path() / "e.embf").string();
    write_embf(path, m);
    EXPECT_EQ(load_embeddings(path, corpus), m);
}

TEST(Embf, RejectsForeignCorpusHash) {
    TempDir dir("embf");
    const auto corpus = tiny_corpus();
    EmbeddingMatrix m(3, 2, alner::testing::corpus_from_text("z O\n").manifest_hash());
    const auto path = (dir.path() / "e.embf").string();
    write_embf(path, m);
    EXPECT_THROW(load_embeddings(path, corpus), DataError);
}

TEST(Embf, RejectsNaNAndWrongRowCount) {
    TempDir dir("embf");
    const auto corpus = tiny_corpus();
    EmbeddingMatrix m(3, 2, corpus.manifest_hash());
    m.data()[3] = std::numeric_limits<float>::quiet_NaN();
    const auto path = (dir.path() / "nan.embf").string();
    write_embf(path, m);
    EXPECT_THROW(load_embeddings(path, corpus), DataError);

    EmbeddingMatrix short_matrix(2, 2, corpus.manifest_hash());
    const auto short_path = (dir.path() / "short.embf").string();
    write_embf(short_path, short_matrix);
    EXPECT_THROW(load_embeddings(short_path, corpus), DataError);
}

TEST(Embf, RejectsBadMagicAndTruncation) {
    std::istringstream bad("NOPE");
    EXPECT_THROW(read_embf(bad), DataError);
    EmbeddingMatrix m(2, 3);
    std::ostringstream out;
    write_embf(out, m);
    auto bytes = out.str();
    bytes.resize(bytes.size() - 4);
    std::istringstream truncated(bytes);
    EXPECT_THROW(read_embf(truncated), DataError);
}

TEST(SyntheticEmbeddings, ZeroNoiseMapsToClassMean) {
    SyntheticCorpusSpec spec;
    spec.sentences = 30;
    const auto corpus = synth_corpus(spec, 2);
    EmbeddingGenerator g;
    g.dim = 6;
    g.noise = 0;
    g.class_means = separated_means(corpus.scheme(), 6, 10.0, 3);
    const auto m = synth_embeddings(corpus, g, 4);
    for (const auto& s : corpus.sentences()) {
        for (const auto& t : s.tokens) {
            const auto& name = t.gold == kOutside ? std::string("O") : corpus.scheme().classes()[LabelScheme::class_of(t.gold)];
            for (std::size_t d = 0; d < 6; ++d) {
                EXPECT_EQ(m.row(t.global_index)[d], static_cast<float>(g.class_means[name][d]));
            }
        }
    }
}

TEST(SyntheticEmbeddings, SeparatedMeansArePairwiseAtDistance) {
    const LabelScheme scheme({"A", "B", "C"});
    const auto means = separated_means(scheme, 8, 10.0, 9);
    for (const auto& [a, ma] : means) {
        for (const auto& [b, mb] : means) {
            if (a == b) {
                continue;
            }
            double d2 = 0;
            for (std::size_t i = 0; i < 8; ++i) {
                d2 += (ma[i] - mb[i]) * (ma[i] - mb[i]);
            }
            EXPECT_NEAR(std::sqrt(d2), 10.0, 1e-12);
        }
    }
}

TEST(SyntheticEmbeddings, DeterministicForSeed) {
    SyntheticCorpusSpec spec;
    spec.sentences = 30;
    const auto corpus = synth_corpus(spec, 2);
    EmbeddingGenerator g;
    g.dim = 4;
    g.lexical_scale = 0.3;
    g.class_means = separated_means(corpus.scheme(), 4, 5.0, 1);
    EXPECT_EQ(synth_embeddings(corpus, g, 8), synth_embeddings(corpus, g, 8));
    EXPECT_NE(synth_embeddings(corpus, g, 8), synth_embeddings(corpus, g, 9));
}

TEST(SyntheticEmbeddings, WellSeparatedClassesAreNearestCentroidSeparable) {
    SyntheticCorpusSpec spec;
    spec.sentences = 150;
    spec.classes = {"X"};
    const auto corpus = synth_corpus(spec, 4);
    EmbeddingGenerator g;
    g.dim = 16;
    g.noise = 1.0;
    g.class_means = separated_means(corpus.scheme(), 16, 10.0, 2);
    const auto m = synth_embeddings(corpus, g, 4);
    std::size_t checked = 0, correct = 0;
    for (const auto& s : corpus.sentences()) {
        for (const auto& t : s.tokens) {
            if (checked == 1000) {
                break;
            }
            double d_o = 0, d_x = 0;
            for (std::size_t d = 0; d < 16; ++d) {
                const double v = m.row(t.global_index)[d];
                d_o += (v - g.class_means["O"][d]) * (v - g.class_means["O"][d]);
                d_x += (v - g.class_means["X"][d]) * (v - g.class_means["X"][d]);
            }
            const bool predicted_positive = d_x < d_o;
            correct += predicted_positive == (t.gold != kOutside);
            ++checked;
        }
    }
    ASSERT_EQ(checked, 1000u);
    EXPECT_EQ(correct, 1000u);
}

TEST(Pca, FullRankIsAnIsometry) {
    const auto m = random_matrix(60, 5, 1);
    const auto model = fit_pca(m, PcaTarget::components(5));
    const auto x = as_eigen(m);
    const auto y = transform_exact(model, x);
    for (Eigen::Index i = 0; i < 60; i += 7) {
        for (Eigen::Index j = i + 1; j < 60; j += 5) {
            EXPECT_NEAR((x.row(i) - x.row(j)).norm(), (y.row(i) - y.row(j)).norm(), 1e-6);
        }
        EXPECT_NEAR((x.row(i) - model.mean.transpose()).norm(), y.row(i).norm(), 1e-6);
    }
}

TEST(Pca, ComponentsAreOrthonormalAndRatiosNonIncreasing) {
    const auto model = fit_pca(random_matrix(80, 7, 2), PcaTarget::components(4));
    const Eigen::MatrixXd gram = model.components * model.components.transpose();
    EXPECT_LT((gram - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-6);
    for (std::size_t i = 1; i < model.explained_variance_ratio.size(); ++i) {
        EXPECT_LE(model.explained_variance_ratio[i], model.explained_variance_ratio[i - 1]);
    }
}

TEST(Pca, PointsOnDiagonalLine) {
    EmbeddingMatrix m(20, 2);
    for (std::size_t i = 0; i < 20; ++i) {
        m.row(i)[0] = static_cast<float>(i);
        m.row(i)[1] = static_cast<float>(i);
    }
    const auto model = fit_pca(m, PcaTarget::variance(0.99));
    ASSERT_EQ(model.output_dim(), 1u);
    EXPECT_NEAR(model.components(0, 0), 1 / std::sqrt(2.0), 1e-9);
    EXPECT_NEAR(model.components(0, 1), 1 / std::sqrt(2.0), 1e-9);
    EXPECT_NEAR(model.explained_variance_ratio[0], 1.0, 1e-12);
}

TEST(Pca, ReconstructionErrorEqualsDiscardedEigenvalues) {
    const auto m = random_matrix(100, 10, 3);
    const auto oracle = jacobi_eigenvalues(covariance(m));
    for (std::size_t k : {1u, 3u, 6u, 9u}) {
        const auto model = fit_pca(m, PcaTarget::components(k));
        const auto x = as_eigen(m);
        const Eigen::MatrixXd y = transform_exact(model, x);
        Eigen::MatrixXd back = y * model.components;
        back.rowwise() += model.mean.transpose();
        const double error = (x - back).squaredNorm() / 99.0;
        double discarded = 0;
        for (std::size_t i = k; i < oracle.size(); ++i) {
            discarded += oracle[i];
        }
        EXPECT_NEAR(error, discarded, 1e-8) << "k = " << k;
        for (std::size_t i = 0; i < k; ++i) {
            EXPECT_NEAR(model.explained_variance[i], oracle[i], 1e-8);
        }
    }
}

TEST(Pca, TopComponentVarianceEqualsTopEigenvalue) {
    const auto m = random_matrix(200, 4, 5);
    const auto oracle = jacobi_eigenvalues(covariance(m));
    const auto model = fit_pca(m, PcaTarget::components(1));
    const Eigen::MatrixXd y = transform_exact(model, as_eigen(m));
    const double mean = y.col(0).mean();
    const double variance = (y.col(0).array() - mean).square().sum() / 199.0;
    EXPECT_NEAR(variance, oracle[0], 1e-8);
}

TEST(Pca, VarianceTargetPicksSmallestK) {
    const auto m = random_matrix(150, 6, 7);
    const auto oracle = jacobi_eigenvalues(covariance(m));
    double total = 0;
    for (double v : oracle) {
        total += v;
    }
    const auto model = fit_pca(m, PcaTarget::variance(0.825));
    double cumulative = 0;
    std::size_t expected = 0;
    for (std::size_t i = 0; i < oracle.size(); ++i) {
        cumulative += oracle[i] / total;
        if (cumulative >= 0.825) {
            expected = i + 1;
            break;
        }
    }
    EXPECT_EQ(model.output_dim(), expected);
    EXPECT_GE(model.cumulative_ratio(), 0.825);
}

TEST(Pca, RejectsBadTargets) {
    const auto m = random_matrix(10, 3, 1);
    EXPECT_THROW(fit_pca(m, PcaTarget::components(4)), ArgumentError);
    EXPECT_THROW(fit_pca(m, PcaTarget::components(0)), ArgumentError);
    EmbeddingMatrix flat(10, 3);
    EXPECT_THROW(fit_pca(flat, PcaTarget::variance(0.8)), ArgumentError);
}

TEST(Pca, TransformKeepsCorpusHash) {
    auto m = random_matrix(30, 4, 2);
    const auto corpus = tiny_corpus();
    m.set_corpus_hash(corpus.manifest_hash());
    const auto model = fit_pca(m, PcaTarget::components(2));
    const auto out = transform(model, m);
    EXPECT_EQ(out.corpus_hash(), corpus.manifest_hash());
    EXPECT_EQ(out.dim(), 2u);
    EXPECT_EQ(out.rows(), 30u);
}
