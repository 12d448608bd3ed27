"""
Unit tests for the offline reference separator
Юнит-тесты для офлайн-эталонного разделения
"""

import numpy as np
import pytest

from src.core.identify import detect_spikes
from src.core.metrics import amari_index, assign_sources
from src.core.reference import batch_whiten, separate_offline
from src.errors import ShapeError
from src.synth import SynthSpec, generate


@pytest.mark.unit
class TestReferenceUnit:
    def test_batch_whitening_gives_identity_covariance(self, rng):
        X = rng.standard_normal((3, 3)) @ rng.standard_normal((3, 5000)) + 2.0
        Z, K, mean = batch_whiten(X)
        np.testing.assert_allclose(Z @ Z.T / Z.shape[1], np.eye(3), atol=1e-10)
        np.testing.assert_allclose(mean, X.mean(axis=1))
        np.testing.assert_allclose(Z, K @ (X - mean[:, None]))

    def test_leading_components_only(self, rng):
        X = rng.standard_normal((4, 1000))
        Z, K, _ = batch_whiten(X, n_components=2)
        assert Z.shape == (2, 1000)
        assert K.shape == (2, 4)

    def test_needs_two_dimensional_input(self):
        with pytest.raises(ShapeError):
            batch_whiten(np.zeros(10))

    @pytest.mark.slow
    def test_separates_laplacian_mixture(self, rng, laplacian):
        S = laplacian(rng, 3, 10_000)
        A = np.array([[1.0, 0.5, 0.2], [0.3, 1.0, 0.4], [0.2, 0.3, 1.0]])
        sources, unmixing = separate_offline(A @ S)
        assert sources.shape == (3, 10_000)
        assert amari_index(unmixing @ A) < 0.15

    @pytest.mark.slow
    def test_recovers_motor_unit_trains_from_noisy_mixture(self):
        rec, truth = generate(SynthSpec(seed=0, duration_s=15.0))
        sources, _ = separate_offline(rec.data, n_components=len(truth.spike_trains))
        trains = [detect_spikes(s, rec.sample_rate, source_id=i) for i, s in enumerate(sources)]
        mrs = [m.result.mr for m in assign_sources(trains, truth.spike_trains)]
        assert sum(mr >= 0.95 for mr in mrs) >= 5
