#include "gencrs/rqvae.h"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "fixtures.h"
#include "oracles.h"

namespace gencrs {
namespace {

std::vector<std::vector<double>> random_books(int levels, int k, int dim, Rng& rng) {
  std::vector<std::vector<double>> books(levels, std::vector<double>(static_cast<std::size_t>(k) * dim));
  for (auto& b : books)
    for (auto& v : b) v = uniform(rng, -1.0, 1.0);
  return books;
}

std::vector<double> random_vec(int dim, Rng& rng, double scale = 1.0) {
  std::vector<double> v(dim);
  for (auto& x : v) x = uniform(rng, -scale, scale);
  return v;
}

EmbeddingMatrix random_embeddings(std::uint32_t count, std::uint32_t dim, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingMatrix m{count, dim, {}};
  for (std::uint32_t i = 0; i < count * dim; ++i) m.values.push_back(static_cast<float>(uniform(rng, -1.0, 1.0)));
  return m;
}

TEST(Quantize, ExactCodewordMatch) {
  const int dim = 3, k = 5, levels = 4;
  Rng rng(1);
  auto books = random_books(levels, k, dim, rng);
  for (int l = 1; l < levels; ++l)
    for (int i = 0; i < dim; ++i) books[l][i] = 0.0;
  std::vector<double> z(books[0].begin() + 3 * dim, books[0].begin() + 4 * dim);
  const auto q = quantize(z, books, k);
  EXPECT_EQ(q.codes, (Codes{3, 0, 0, 0}));
  for (double v : q.residuals.back()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(q.quantized, z);
}

TEST(Quantize, MatchesBruteForceGreedy) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto books = random_books(2, 4, 3, rng);
    const auto z = random_vec(3, rng, 2.0);
    EXPECT_EQ(quantize(z, books, 4).codes, oracle::greedy_codes(z, books, 4));
  }
}

TEST(Quantize, TelescopingAndArgminOptimality) {
  Rng rng(3);
  const int dim = 6, k = 8, levels = 4;
  const auto books = random_books(levels, k, dim, rng);
  for (int trial = 0; trial < 300; ++trial) {
    const auto z = random_vec(dim, rng, 3.0);
    const auto q = quantize(z, books, k);
    ASSERT_EQ(q.residuals.size(), static_cast<std::size_t>(levels + 1));
    for (int i = 0; i < dim; ++i) EXPECT_NEAR(q.residuals[0][i] - q.quantized[i], q.residuals[levels][i], 1e-5);
    for (int l = 0; l < levels; ++l) {
      const double chosen = oracle::dist2(q.residuals[l], books[l].data() + q.codes[l] * dim);
      for (int j = 0; j < k; ++j) EXPECT_LE(chosen, oracle::dist2(q.residuals[l], books[l].data() + j * dim));
    }
  }
}

TEST(Quantize, TieBreaksToLowestIndex) {
  std::vector<std::vector<double>> books{{1.0, 0.0, -1.0, 0.0, 5.0, 5.0}};
  const auto q = quantize(std::vector<double>{0.0, 0.0}, books, 3);
  EXPECT_EQ(q.codes, Codes{0});
}

TEST(Quantize, DimensionMismatch) {
  RqVaeConfig c;
  c.input_dim = 4;
  c.latent_dim = 2;
  c.encoder_hidden_layers = 0;
  c.num_levels = 1;
  c.codebook_size = 2;
  const auto m = init_model(c, random_embeddings(4, 4, 1));
  auto err = testing::capture_error([&] { quantize(std::vector<double>{1, 2, 3}, m); });
  ASSERT_TRUE(err);
  EXPECT_EQ(err->code(), ErrorCode::kMismatch);
}

// Linear 2-d autoencoder whose encoder and decoder are the identity.
RqVaeModel identity_model(double beta) {
  RqVaeConfig c;
  c.input_dim = 2;
  c.latent_dim = 2;
  c.encoder_hidden_layers = 0;
  c.num_levels = 2;
  c.codebook_size = 2;
  c.commitment_beta = beta;
  RqVaeModel m;
  m.config = c;
  m.encoder = Mlp::make({2, 2});
  m.decoder = Mlp::make({2, 2});
  for (auto* mlp : {&m.encoder, &m.decoder}) {
    mlp->layers[0].weight = {1, 0, 0, 1};
    mlp->layers[0].bias = {0, 0};
  }
  m.codebooks = {{0.5, -0.25, 3.0, 3.0}, {0.0, 0.0, 1.0, 1.0}};
  return m;
}

TEST(RqLoss, ZeroWhenPerfect) {
  const auto m = identity_model(0.25);
  const auto p = loss(std::vector<double>{0.5, -0.25}, m);
  EXPECT_EQ(p.recon, 0.0);
  EXPECT_EQ(p.commitment, 0.0);
  EXPECT_EQ(p.codebook, 0.0);
}

TEST(RqLoss, BetaZeroDropsCommitment) {
  const auto m = identity_model(0.0);
  const auto p = loss(std::vector<double>{0.7, 0.1}, m);
  EXPECT_GT(p.codebook, 0.0);
  EXPECT_EQ(p.commitment, 0.0);
  EXPECT_EQ(p.total(), p.recon + p.codebook);
}

TEST(RqLoss, PartsMatchDefinition) {
  const auto m = identity_model(0.25);
  const std::vector<double> x{0.7, 0.1};
  const auto p = loss(x, m);
  // Level 1 picks (0.5,-0.25); residual (0.2,0.35) picks (0,0) at level 2.
  const double d1 = 0.2 * 0.2 + 0.35 * 0.35, d2 = d1;
  EXPECT_NEAR(p.codebook, d1 + d2, 1e-12);
  EXPECT_NEAR(p.commitment, 0.25 * (d1 + d2), 1e-12);
  EXPECT_NEAR(p.recon, d1, 1e-12);
}

RqVaeModel micro_model(std::uint64_t seed) {
  RqVaeConfig c;
  c.input_dim = 4;
  c.latent_dim = 2;
  c.encoder_hidden_layers = 1;
  c.num_levels = 2;
  c.codebook_size = 3;
  c.seed = seed;
  return init_model(c, random_embeddings(12, 4, seed + 100));
}

TEST(RqLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    RqVaeModel m = micro_model(seed);
    ASSERT_LE(m.parameter_count(), 200u);
    Rng rng(seed);
    const auto x = random_vec(4, rng);
    RqVaeModel grad = m.zeros_like();
    loss_and_grad(x, m, grad);
    const auto surrogate = oracle::RqSurrogate::at(x, m);
    auto pb = m.buffers();
    auto gb = grad.buffers();
    const double h = 1e-6;
    for (std::size_t b = 0; b < pb.size(); ++b) {
      for (std::size_t j = 0; j < pb[b].values->size(); ++j) {
        const double keep = (*pb[b].values)[j];
        (*pb[b].values)[j] = keep + h;
        const double up = surrogate(m);
        (*pb[b].values)[j] = keep - h;
        const double down = surrogate(m);
        (*pb[b].values)[j] = keep;
        const double numeric = (up - down) / (2 * h);
        const double analytic = (*gb[b].values)[j];
        if (std::abs(numeric) < 1e-7 && std::abs(analytic) < 1e-7) continue;
        EXPECT_LT(oracle::rel_error(analytic, numeric), 1e-3)
            << "seed " << seed << " buffer " << b << " index " << j << ": " << analytic << " vs " << numeric;
      }
    }
  }
}

TEST(RqInit, DeterministicAndShaped) {
  RqVaeConfig c;
  c.input_dim = 8;
  c.latent_dim = 4;
  c.encoder_hidden_layers = 2;
  c.num_levels = 3;
  c.codebook_size = 5;
  c.seed = 11;
  const auto data = random_embeddings(30, 8, 4);
  const auto a = init_model(c, data), b = init_model(c, data);
  EXPECT_EQ(serialize_rqvae(a), serialize_rqvae(b));
  ASSERT_EQ(a.codebooks.size(), 3u);
  for (const auto& book : a.codebooks) EXPECT_EQ(book.size(), 5u * 4u);
  EXPECT_TRUE(a.all_finite());
}

TEST(RqInit, KMeansFindsSeparatedClusters) {
  RqVaeConfig c;
  c.input_dim = 3;
  c.latent_dim = 3;
  c.encoder_hidden_layers = 0;
  c.num_levels = 1;
  c.codebook_size = 2;
  c.seed = 5;
  Rng rng(9);
  EmbeddingMatrix data{40, 3, {}};
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 3; ++j) data.values.push_back(static_cast<float>((i < 20 ? 10.0 : -10.0) + uniform(rng, -1, 1)));
  const auto m = init_model(c, data);

  std::vector<std::vector<double>> z[2];
  for (int i = 0; i < 40; ++i) z[i < 20 ? 0 : 1].push_back(m.encode(to_double(data.row(i))));
  std::vector<std::vector<double>> all(z[0]);
  all.insert(all.end(), z[1].begin(), z[1].end());
  std::vector<std::vector<double>> means;
  for (const auto& cl : z) {
    std::vector<double> mu(3, 0.0);
    for (const auto& p : cl)
      for (int j = 0; j < 3; ++j) mu[j] += p[j] / cl.size();
    means.push_back(mu);
  }
  const auto want = oracle::lloyd(all, means, 10);
  std::vector<std::vector<double>> got{{m.codebooks[0].begin(), m.codebooks[0].begin() + 3},
                                       {m.codebooks[0].begin() + 3, m.codebooks[0].end()}};
  if (oracle::dist2(got[0], want[0].data()) > oracle::dist2(got[0], want[1].data())) std::swap(got[0], got[1]);
  for (int c2 = 0; c2 < 2; ++c2) {
    for (int j = 0; j < 3; ++j) {
      EXPECT_NEAR(got[c2][j], want[c2][j], 1e-9);
      double lo = 1e300, hi = -1e300;
      for (const auto& p : z[c2]) {
        lo = std::min(lo, p[j]);
        hi = std::max(hi, p[j]);
      }
      EXPECT_GE(got[c2][j], lo);
      EXPECT_LE(got[c2][j], hi);
    }
  }
}

TEST(RqInit, FewDistinctPointsFallBack) {
  std::vector<double> pts{1, 1, 1, 1, 2, 2};
  Rng rng(1);
  const auto centers = kmeans(pts, 2, 3, 10, rng);
  ASSERT_EQ(centers.size(), 6u);
  std::set<std::vector<double>> distinct;
  for (int c = 0; c < 3; ++c) distinct.insert({centers[c * 2], centers[c * 2 + 1]});
  EXPECT_EQ(distinct.size(), 3u);
}

TEST(RqTrain, DefaultConfigReducesRecon) {
  RqVaeConfig c;
  c.epochs = 50;
  c.seed = 3;
  const auto data = random_embeddings(200, 64, 8);
  RqVaeTrainLog log;
  const auto m = train_rqvae(c, data, &log);
  ASSERT_EQ(log.epoch_recon.size(), 50u);
  EXPECT_LT(log.epoch_recon.back(), log.initial_recon);
  EXPECT_LE(log.epoch_loss.back(), log.initial_loss);
  EXPECT_LT(mean_loss(m, data).recon, log.initial_recon);
}

TEST(RqTrain, SeededRerunIsBitIdentical) {
  RqVaeConfig c;
  c.input_dim = 16;
  c.latent_dim = 4;
  c.encoder_hidden_layers = 2;
  c.codebook_size = 8;
  c.batch_size = 7;
  c.epochs = 5;
  c.seed = 21;
  const auto data = random_embeddings(40, 16, 2);
  EXPECT_EQ(serialize_rqvae(train_rqvae(c, data)), serialize_rqvae(train_rqvae(c, data)));
}

TEST(RqTrain, RepeatedVectorsGetDistinctCodes) {
  const int k = 4;
  RqVaeConfig c;
  c.input_dim = 8;
  c.latent_dim = 8;
  c.encoder_hidden_layers = 0;
  c.num_levels = 1;
  c.codebook_size = k;
  c.learning_rate = 0.05;
  c.weight_decay = 0.0;
  c.batch_size = 16;
  c.epochs = 1500;
  c.seed = 4;
  const auto base = random_embeddings(k, 8, 77);
  EmbeddingMatrix data{static_cast<std::uint32_t>(k * k), 8, {}};
  for (int copy = 0; copy < k; ++copy) data.values.insert(data.values.end(), base.values.begin(), base.values.end());
  RqVaeTrainLog log;
  const auto m = train_rqvae(c, data, &log);
  EXPECT_LT(log.epoch_recon.back(), 1e-3 * log.initial_recon);
  const auto ids = assign_ids(m, data);
  std::set<int> codes;
  for (int i = 0; i < k; ++i) {
    codes.insert(ids[i].codes[0]);
    for (int copy = 1; copy < k; ++copy) EXPECT_EQ(ids[copy * k + i].codes, ids[i].codes);
  }
  EXPECT_EQ(codes.size(), static_cast<std::size_t>(k));
}

TEST(AssignIds, MatchesOracleOnSmallInstance) {
  RqVaeConfig c;
  c.input_dim = 6;
  c.latent_dim = 3;
  c.encoder_hidden_layers = 1;
  c.num_levels = 2;
  c.codebook_size = 4;
  c.epochs = 3;
  c.batch_size = 4;
  c.seed = 6;
  const auto data = random_embeddings(8, 6, 13);
  const auto m = train_rqvae(c, data);
  const auto ids = assign_ids(m, data);
  ASSERT_EQ(ids.size(), 8u);
  for (std::uint32_t i = 0; i < 8; ++i) {
    const auto z = m.encode(to_double(data.row(i)));
    EXPECT_EQ(ids[i].codes, oracle::greedy_codes(z, m.codebooks, 4));
    EXPECT_EQ(ids[i].codes, quantize(z, m).codes);
  }
}

TEST(AssignIds, IdenticalRowsIdenticalCodes) {
  auto data = random_embeddings(6, 4, 3);
  std::copy(data.values.begin(), data.values.begin() + 4, data.values.begin() + 12);
  const auto m = micro_model(8);
  const auto ids = assign_ids(m, data);
  EXPECT_EQ(ids[0].codes, ids[3].codes);
}

TEST(RqCheckpoint, RoundTripBitExact) {
  testing::TempDir dir("rq");
  RqVaeModel m = micro_model(2);
  save_rqvae(m, dir.file("m.ckpt"));
  const auto back = load_rqvae(dir.file("m.ckpt"));
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(serialize_rqvae(back), serialize_rqvae(m));
  EXPECT_EQ(back.codebooks, m.codebooks);
}

TEST(RqConfig, RejectsInvalid) {
  RqVaeConfig c;
  c.codebook_size = 1;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.commitment_beta = -1;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), Error);
}

}  // namespace
}  // namespace gencrs
