import numpy as np
import pytest
import scipy.stats

from geolex.errors import DataError, ValidationError
from geolex.stats import (
    BootstrapConfig,
    bootstrap_ci,
    mix_seed,
    rng_stream,
    student_t_two_sided_p,
)


class TestRngStream:
    def test_same_seed_and_stream_identical(self):
        a = rng_stream(42, "alpha").random(1000)
        b = rng_stream(42, "alpha").random(1000)
        np.testing.assert_array_equal(a, b)

    def test_different_streams_differ(self):
        # direct comparison over the first 1e4 outputs
        a = rng_stream(42, 0).random(10_000)
        b = rng_stream(42, 1).random(10_000)
        assert (a != b).any()

    def test_string_and_int_streams_are_independent_namespaces(self):
        a = rng_stream(7, "shard").random(100)
        b = rng_stream(7, 99).random(100)
        assert (a != b).any()

    def test_uniform_outputs_in_range(self):
        values = rng_stream(3, "range").random(10_000)
        assert ((values >= 0.0) & (values < 1.0)).all()

    def test_mix_seed_is_64_bit(self):
        for seed, stream in [(0, 0), (2**63, "x"), (12345, 2**62)]:
            mixed = mix_seed(seed, stream)
            assert 0 <= mixed < 2**64


class TestBootstrap:
    def test_constant_data_degenerate_interval(self):
        config = BootstrapConfig(replicates=200, seed=1)
        interval = bootstrap_ci([3.5] * 50, config)
        assert interval.point == interval.lo == interval.hi == 3.5

    def test_same_seed_identical(self):
        config = BootstrapConfig(replicates=300, seed=9)
        data = rng_stream(0, "data").normal(size=200)
        first = bootstrap_ci(data, config)
        second = bootstrap_ci(data, config)
        assert first == second

    def test_too_few_values(self):
        with pytest.raises(DataError):
            bootstrap_ci([1.0], BootstrapConfig(seed=0))

    def test_interval_ordering_and_bounds(self):
        data = rng_stream(1, "data").normal(size=150)
        interval = bootstrap_ci(data, BootstrapConfig(replicates=500, seed=4))
        assert interval.lo <= interval.hi
        # percentile interval lies within the statistic's attainable range
        assert data.min() <= interval.lo and interval.hi <= data.max()

    def test_custom_statistic_matches_point(self):
        data = rng_stream(2, "data").normal(size=100)
        interval = bootstrap_ci(
            data, BootstrapConfig(replicates=200, seed=5), statistic=np.median
        )
        assert interval.point == pytest.approx(float(np.median(data)))
        assert interval.lo <= interval.point <= interval.hi

    def test_width_shrinks_with_sample_size(self):
        widths = []
        for n in (100, 400, 1600):
            data = rng_stream(11, f"width:{n}").normal(size=n)
            interval = bootstrap_ci(data, BootstrapConfig(replicates=400, seed=n))
            widths.append(interval.hi - interval.lo)
        assert widths[0] > widths[1] > widths[2]

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            BootstrapConfig(replicates=50)
        with pytest.raises(ValidationError):
            BootstrapConfig(level=1.0)


class TestStudentT:
    def test_matches_scipy_on_grid(self):
        for t in (-5.0, -2.3, -0.7, 0.0, 0.4, 1.96, 3.46, 8.0):
            for df in (1, 2, 5, 10, 49, 200):
                expected = 2.0 * scipy.stats.t.sf(abs(t), df)
                assert student_t_two_sided_p(t, df) == pytest.approx(expected, abs=1e-10)

    def test_symmetry(self):
        assert student_t_two_sided_p(2.5, 7) == pytest.approx(
            student_t_two_sided_p(-2.5, 7), abs=1e-14
        )
