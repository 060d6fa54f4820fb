"""
Unit tests for the skill codebook: quantisation, EMA updates, code
resampling and the VQ autoencoder.
"""

import os
import tempfile
import unittest


def _codebook(rows):
    import torch
    from choreo.skills.codebook import Codebook
    return Codebook(torch.tensor(rows, dtype=torch.float64))


def _vq(seed=0, state_dim=6, **overrides):
    from choreo.config.config import CodebookConfig
    from choreo.skills.codebook import SkillVQ
    from choreo.substrate.core import make_generator
    params = dict(num_codes=8, code_dim=3, hidden=16, layers=1, lr=1e-3, resample_every=5)
    params.update(overrides)
    return SkillVQ(state_dim, CodebookConfig(**params), make_generator(seed))


class TestQuantize(unittest.TestCase):

    def test_nearest_code(self):
        import torch
        from choreo.skills.codebook import quantize
        cb = _codebook([[0.0, 0.0], [1.0, 1.0], [-1.0, 2.0]])
        index, row = quantize(cb, torch.tensor([0.9, 1.2], dtype=torch.float64))
        self.assertEqual(index, 1)
        self.assertTrue(torch.equal(row, cb.codes[1]))

    def test_tie_goes_to_lowest_index(self):
        import torch
        from choreo.skills.codebook import quantize
        cb = _codebook([[1.0, 0.0], [-1.0, 0.0]])
        index, _ = quantize(cb, torch.tensor([0.0, 0.0], dtype=torch.float64))
        self.assertEqual(index, 0)

    def test_batch_returns_indices_and_rows(self):
        import torch
        from choreo.skills.codebook import quantize
        cb = _codebook([[0.0], [10.0]])
        indices, rows = quantize(cb, torch.tensor([[1.0], [9.0], [4.0]], dtype=torch.float64))
        self.assertEqual(indices.tolist(), [0, 1, 0])
        self.assertEqual(tuple(rows.shape), (3, 1))

    def test_wrong_embedding_size_rejected(self):
        import torch
        from choreo.errors import ContractViolation
        from choreo.skills.codebook import quantize
        with self.assertRaises(ContractViolation):
            quantize(_codebook([[0.0, 0.0]]), torch.zeros(3, dtype=torch.float64))

    def test_random_codes_within_bound(self):
        from choreo.skills.codebook import Codebook
        from choreo.substrate.core import make_generator
        cb = Codebook.random(16, 4, make_generator(0))
        self.assertLessEqual(float(cb.codes.abs().max()), 1.0 / 16)

    def test_matches_exhaustive_scan(self):
        import torch
        from choreo.skills.codebook import quantize
        from choreo.substrate.core import make_generator
        rng = make_generator(0)
        for trial in range(10):
            # an integer grid with a duplicated row makes exact ties common
            rows = torch.randint(-2, 3, (6, 2), generator=rng).to(torch.float64)
            rows = torch.cat([rows, rows[trial % 6:trial % 6 + 1]], dim=0)
            cb = _codebook(rows.tolist())
            emb = torch.randint(-3, 4, (1000, 2), generator=rng).to(torch.float64)
            indices, _ = quantize(cb, emb)
            for b, e in enumerate(emb.tolist()):
                best, best_d = 0, float('inf')
                for n, c in enumerate(rows.tolist()):
                    d = (e[0] - c[0]) ** 2 + (e[1] - c[1]) ** 2
                    if d < best_d:
                        best, best_d = n, d
                self.assertEqual(int(indices[b]), best, f"trial {trial} embedding {e}")


# ---------------------------------------------------------------------------
# EMA and resampling
# ---------------------------------------------------------------------------

class TestEmaUpdate(unittest.TestCase):

    def test_assigned_code_moves_toward_mean(self):
        import torch
        from choreo.skills.codebook import ema_update
        cb = _codebook([[0.0, 0.0], [5.0, 5.0]])
        emb = torch.tensor([[1.0, 1.0], [1.0, 1.0]], dtype=torch.float64)
        ema_update(cb, emb, torch.tensor([0, 0]), decay=0.5)
        # counts 0.5*1 + 0.5*2 = 1.5, sums 0.5*0 + 0.5*2 = 1.0
        self.assertTrue(torch.allclose(cb.codes[0], torch.full((2,), 1.0 / 1.5, dtype=torch.float64)))
        self.assertTrue(torch.equal(cb.codes[1], torch.tensor([5.0, 5.0], dtype=torch.float64)))

    def test_inactivity_counters(self):
        import torch
        from choreo.skills.codebook import active_fraction, ema_update
        cb = _codebook([[0.0], [1.0], [2.0]])
        for _ in range(3):
            ema_update(cb, torch.tensor([[0.1]], dtype=torch.float64), torch.tensor([0]), decay=0.9)
        self.assertEqual(cb.inactive_batches.tolist(), [0, 3, 3])
        self.assertAlmostEqual(active_fraction(cb), 1.0 / 3.0)

    def test_decay_out_of_range_rejected(self):
        import torch
        from choreo.errors import ContractViolation
        from choreo.skills.codebook import ema_update
        with self.assertRaises(ContractViolation):
            ema_update(_codebook([[0.0]]), torch.zeros(1, 1), torch.tensor([0]), decay=1.0)

    def test_converges_to_cluster_means(self):
        import torch
        from choreo.skills.codebook import ema_update
        cb = _codebook([[0.0, 0.0], [0.5, 0.5], [9.0, 9.0]])
        emb = torch.tensor([[1.0, 2.0], [1.5, 2.5], [0.5, 1.5],
                            [-2.0, 1.0], [-3.0, 0.0], [-2.5, 0.5]], dtype=torch.float64)
        indices = torch.tensor([0, 0, 0, 1, 1, 1])
        for _ in range(500):
            ema_update(cb, emb, indices, decay=0.99)
        for code, members in ((0, emb[:3]), (1, emb[3:])):
            self.assertLess(float((cb.codes[code] - members.mean(dim=0)).norm()), 1e-2)
        self.assertTrue(torch.equal(cb.codes[2], torch.tensor([9.0, 9.0], dtype=torch.float64)))


class TestResampling(unittest.TestCase):

    def test_inactive_code_moves_onto_an_embedding(self):
        import torch
        from choreo.skills.codebook import ema_update, resample_codes
        from choreo.substrate.core import make_generator
        cb = _codebook([[0.0, 0.0], [50.0, 50.0]])
        emb = torch.tensor([[0.1, 0.0], [3.0, 3.0], [-3.0, 2.0]], dtype=torch.float64)
        for _ in range(4):
            ema_update(cb, emb, torch.tensor([0, 0, 0]), decay=0.9)
        resampled = resample_codes(cb, emb, make_generator(0), period=4)
        self.assertEqual(resampled, [1])
        self.assertTrue(any(torch.equal(cb.codes[1], row) for row in emb))
        self.assertEqual(float(cb.ema_counts[1]), 1.0)
        self.assertTrue(torch.equal(cb.ema_sums[1], cb.codes[1]))
        self.assertEqual(int(cb.inactive_batches[1]), 0)

    def test_active_codes_untouched(self):
        import torch
        from choreo.skills.codebook import resample_codes
        from choreo.substrate.core import make_generator
        cb = _codebook([[0.0], [1.0]])
        before = cb.codes.clone()
        self.assertEqual(resample_codes(cb, torch.ones(4, 1, dtype=torch.float64), make_generator(0), 3), [])
        self.assertTrue(torch.equal(cb.codes, before))

    def test_weights_proportional_to_squared_distance(self):
        import torch
        from choreo.skills.codebook import resample_weights
        codes = torch.zeros(1, 1, dtype=torch.float64)
        emb = torch.tensor([[1.0], [2.0], [0.0]], dtype=torch.float64)
        weights = resample_weights(emb, codes)
        self.assertTrue(torch.allclose(weights, torch.tensor([0.2, 0.8, 0.0], dtype=torch.float64)))

    def test_weights_uniform_when_all_embeddings_on_codes(self):
        import torch
        from choreo.skills.codebook import resample_weights
        codes = torch.zeros(1, 2, dtype=torch.float64)
        weights = resample_weights(torch.zeros(4, 2, dtype=torch.float64), codes)
        self.assertTrue(torch.allclose(weights, torch.full((4,), 0.25, dtype=torch.float64)))

    def test_far_embeddings_drawn_more_often(self):
        import torch
        from scipy import stats
        from choreo.skills.codebook import Codebook, resample_codes
        from choreo.substrate.core import make_generator
        rng = make_generator(0)
        emb = torch.tensor([[1.0], [2.0]], dtype=torch.float64)
        hits = [0, 0]
        for _ in range(2000):
            cb = Codebook(torch.tensor([[0.0], [100.0]], dtype=torch.float64))
            cb.inactive_batches[1] = 10
            resample_codes(cb, emb, rng, period=10)
            hits[int(cb.codes[1, 0]) - 1] += 1
        expected = [400.0, 1600.0]
        chi2 = sum((h - e) ** 2 / e for h, e in zip(hits, expected))
        self.assertLess(chi2, stats.chi2.ppf(0.999, df=1))

    def test_draw_frequencies_follow_squared_distance(self):
        import math
        import torch
        from scipy import stats
        from choreo.skills.codebook import Codebook, resample_codes
        from choreo.substrate.core import make_generator
        rng = make_generator(1)
        # squared distances to the nearest code are 1 and 3
        emb = torch.tensor([[1.0, 0.0], [math.sqrt(3.0), 0.0]], dtype=torch.float64)
        hits = [0, 0]
        n = 10000
        for _ in range(n):
            cb = Codebook(torch.tensor([[0.0, 0.0], [100.0, 100.0]], dtype=torch.float64))
            cb.inactive_batches[1] = 1
            resample_codes(cb, emb, rng, period=1)
            hits[0 if float(cb.codes[1, 0]) == 1.0 else 1] += 1
        expected = [n / 4.0, 3.0 * n / 4.0]
        chi2 = sum((h - e) ** 2 / e for h, e in zip(hits, expected))
        self.assertLess(chi2, stats.chi2.ppf(0.99, df=1))

    def test_distances_recomputed_between_overwrites(self):
        import torch
        from choreo.skills.codebook import Codebook, resample_codes
        from choreo.substrate.core import make_generator
        a = torch.tensor([10.0, 0.0], dtype=torch.float64)
        b = torch.tensor([0.0, 1.0], dtype=torch.float64)
        emb = torch.stack([a, b])
        for seed in range(50):
            cb = Codebook(torch.tensor([[0.0, 0.0], [50.0, 50.0], [60.0, 60.0]], dtype=torch.float64))
            cb.inactive_batches[1:] = 3
            self.assertEqual(resample_codes(cb, emb, make_generator(seed), period=3), [1, 2])
            # the embedding taken first sits on a code afterwards, so the second draw is the other one
            rows = sorted(tuple(cb.codes[i].tolist()) for i in (1, 2))
            self.assertEqual(rows, sorted([tuple(a.tolist()), tuple(b.tolist())]), f"seed {seed}")

    def test_uniform_skill_sampling(self):
        import torch
        from scipy import stats
        from choreo.skills.codebook import assignment_histogram, sample_skill_uniform
        from choreo.substrate.core import make_generator
        draws = sample_skill_uniform(8, make_generator(0), size=8000)
        counts = assignment_histogram(draws, 8).to(torch.float64)
        chi2 = float(((counts - 1000.0) ** 2 / 1000.0).sum())
        self.assertLess(chi2, stats.chi2.ppf(0.999, df=7))
        single = sample_skill_uniform(8, make_generator(1))
        self.assertIsInstance(single, int)


# ---------------------------------------------------------------------------
# VQ autoencoder
# ---------------------------------------------------------------------------

class TestSkillVQ(unittest.TestCase):

    def test_codes_receive_no_gradient(self):
        import torch
        vq = _vq()
        out = vq.vq_forward(torch.randn(10, 6, dtype=torch.float64))
        self.assertFalse(vq.codebook.codes.requires_grad)
        out.loss.backward()
        self.assertIsNotNone(vq.net['encoder'][0].weight.grad)

    def test_encoder_gradient_matches_finite_differences(self):
        import torch
        from choreo.substrate.core import make_generator
        from tests.gradcheck import assert_gradients_match
        vq = _vq(seed=3)
        states = torch.randn(12, 6, generator=make_generator(4), dtype=torch.float64)
        with torch.no_grad():
            z_e_ref = vq.encode(states)
            _, z_q = vq.quantize(z_e_ref)

        def smooth_loss():
            # the quantised codes stay fixed; the encoder output shifts them straight through
            z_e = vq.encode(states)
            recon = vq.decode(z_q + z_e - z_e_ref)
            commit = (z_q - z_e).square().sum(dim=-1).mean()
            return (states - recon).square().sum(dim=-1).mean() + vq.beta * commit

        def loss_fn():
            return vq.vq_forward(states).loss

        self.assertAlmostEqual(float(smooth_loss()), float(loss_fn()), places=12)
        encoder = {k: v for k, v in vq.params.named().items() if k.startswith('encoder.')}
        self.assertTrue(encoder)
        assert_gradients_match(self, loss_fn, encoder, numeric_fn=smooth_loss)
        decoder = {k: v for k, v in vq.params.named().items() if k.startswith('decoder.')}
        assert_gradients_match(self, loss_fn, decoder)

    def test_reconstruction_gradient_passes_straight_through(self):
        import torch
        from choreo.substrate.core import make_generator
        vq = _vq(seed=5)
        states = torch.randn(10, 6, generator=make_generator(6), dtype=torch.float64)
        out = vq.vq_forward(states)
        recon_loss = (states - out.recon).square().sum(dim=-1).mean()
        via_encoder, = torch.autograd.grad(recon_loss, out.embeddings)

        z = vq.codebook.codes[out.indices].clone().requires_grad_(True)
        at_codes = (states - vq.decode(z)).square().sum(dim=-1).mean()
        direct, = torch.autograd.grad(at_codes, z)
        self.assertTrue(torch.allclose(via_encoder, direct, rtol=0, atol=1e-12))

    def test_empty_batch_rejected(self):
        import torch
        from choreo.errors import ContractViolation
        with self.assertRaises(ContractViolation):
            _vq().vq_forward(torch.zeros(0, 6, dtype=torch.float64))

    def test_decode_wrong_code_size_rejected(self):
        import torch
        from choreo.errors import ContractViolation
        with self.assertRaises(ContractViolation):
            _vq().decode(torch.zeros(4, dtype=torch.float64))

    def test_training_reconstructs_four_clusters(self):
        import torch
        from choreo.harness.bench import GaussianMixture
        from choreo.substrate.core import make_generator
        data_rng = make_generator(10)
        mixture = GaussianMixture(4, 6, 0.02, data_rng)
        vq = _vq(seed=1, num_codes=8, resample_every=20, lr=3e-3)
        rng = make_generator(2)
        for _ in range(1500):
            vq.train_step(mixture.sample(64, data_rng), rng)
        centres = mixture.centres
        gap = min(float((centres[i] - centres[j]).norm()) for i in range(4) for j in range(4) if i != j)
        with torch.no_grad():
            out = vq.vq_forward(centres)
        errors = (out.recon - centres).norm(dim=-1)
        self.assertTrue(bool((errors < gap / 4).all()), f"errors {errors.tolist()} gap {gap}")

    def test_resampling_triggers_on_period(self):
        import torch
        from choreo.substrate.core import make_generator
        vq = _vq(resample_every=3)
        rng = make_generator(0)
        states = torch.randn(16, 6, generator=make_generator(1), dtype=torch.float64)
        results = [vq.train_step(states, rng)['resampled'] for _ in range(3)]
        self.assertEqual(results[:2], [0.0, 0.0])
        self.assertEqual(vq.batches, 3)

    def test_state_round_trip(self):
        import torch
        from choreo.substrate.core import make_generator
        a, b = _vq(seed=1), _vq(seed=2)
        states = torch.randn(16, 6, generator=make_generator(1), dtype=torch.float64)
        a.train_step(states, make_generator(0))
        b.load_state_tensors(a.state_tensors())
        self.assertEqual(b.batches, 1)
        self.assertTrue(torch.equal(a.codebook.codes, b.codebook.codes))
        self.assertTrue(torch.equal(a.codebook.inactive_batches, b.codebook.inactive_batches))

    def test_export_and_load_json(self):
        import torch
        from choreo.skills.codebook import export_codebook_json, load_codebook_json
        vq = _vq()
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'skills.json')
            doc = export_codebook_json(vq, path, targets=True)
            self.assertEqual(len(doc['decoded']), vq.N)
            codebook, mask = load_codebook_json(path)
        self.assertTrue(torch.equal(codebook.codes, vq.codebook.codes))
        self.assertEqual(mask.shape, (vq.N,))


if __name__ == '__main__':
    unittest.main()
