import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sticm.datasets import (
    IntegrationError,
    LorenzConfig,
    ParseError,
    add_observation_noise,
    fit_normalization,
    integrate,
    integrate_coupled_lorenz,
    load_csv,
    lorenz_rhs,
    save_csv,
)
from sticm.embedding import SeriesMatrix


def reference_lorenz(state, t_end, dt=1e-4, sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    """Scalar RK4 for one uncoupled Lorenz system, written independently of the package."""
    def f(s):
        x, y, z = s
        return (sigma * (y - x), x * (rho - z) - y, x * y - beta * z)

    s = tuple(float(v) for v in state)
    for _ in range(int(round(t_end / dt))):
        k1 = f(s)
        k2 = f(tuple(a + 0.5 * dt * b for a, b in zip(s, k1)))
        k3 = f(tuple(a + 0.5 * dt * b for a, b in zip(s, k2)))
        k4 = f(tuple(a + dt * b for a, b in zip(s, k3)))
        s = tuple(a + dt / 6 * (b + 2 * c + 2 * d + e) for a, b, c, d, e in zip(s, k1, k2, k3, k4))
    return np.array(s)


class TestLorenz:
    def test_rhs_values(self):
        cfg = LorenzConfig(subsystems=2, coupling=0.5)
        state = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        out = lorenz_rhs(state, cfg)
        # subsystem 1 is driven by subsystem 2's x through the ring
        np.testing.assert_allclose(out[0], [10 * (2 - 1) + 0.5 * 4, 1 * (28 - 3) - 2, 1 * 2 - 8 / 3 * 3])
        np.testing.assert_allclose(out[1], [10 * (5 - 4) + 0.5 * 1, 4 * (28 - 6) - 5, 4 * 5 - 8 / 3 * 6])

    def test_matches_independent_rk4_at_same_step(self):
        cfg = LorenzConfig(subsystems=1, coupling=0.0)
        ours = integrate(np.array([[1.0, 1.0, 1.0]]), cfg, 100, dt=0.01)[0]
        np.testing.assert_allclose(ours, reference_lorenz((1.0, 1.0, 1.0), 1.0, dt=0.01), rtol=0, atol=1e-12)

    def test_close_to_fine_step_reference(self):
        # global RK4 error at dt=0.01 after one time unit is about 8e-5
        cfg = LorenzConfig(subsystems=1, coupling=0.0)
        ours = integrate(np.array([[1.0, 1.0, 1.0]]), cfg, 100, dt=0.01)[0]
        assert np.max(np.abs(ours - reference_lorenz((1.0, 1.0, 1.0), 1.0))) < 1e-4

    def test_uncoupled_identical_subsystems(self):
        cfg = LorenzConfig(subsystems=4, coupling=0.0, initial_state=[1.0, 2.0, 20.0] * 4, transient_steps=50)
        X = integrate_coupled_lorenz(cfg, 30).values
        for s in range(1, 4):
            np.testing.assert_array_equal(X[3 * s: 3 * s + 3], X[0:3])

    def test_default_size_and_names(self):
        X = integrate_coupled_lorenz(LorenzConfig(transient_steps=10), 5)
        assert X.values.shape == (90, 5)
        assert X.names[:4] == ["x1", "y1", "z1", "x2"] and X.names[-1] == "z30"

    def test_deterministic(self):
        cfg = LorenzConfig(subsystems=3, seed=11, transient_steps=100)
        a, b = integrate_coupled_lorenz(cfg, 20), integrate_coupled_lorenz(cfg, 20)
        assert a.values.tobytes() == b.values.tobytes()
        c = integrate_coupled_lorenz(LorenzConfig(subsystems=3, seed=12, transient_steps=100), 20)
        assert not np.array_equal(a.values, c.values)

    def test_sampling_stride(self):
        cfg = LorenzConfig(subsystems=1, transient_steps=0, sample_stride=3, initial_state=[1.0, 1.0, 1.0])
        X = integrate_coupled_lorenz(cfg, 3).values
        np.testing.assert_array_equal(X[:, 0], [1, 1, 1])
        np.testing.assert_allclose(X[:, 2], integrate(np.array([[1.0, 1.0, 1.0]]), cfg, 6)[0])

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_blow_up_is_reported(self):
        cfg = LorenzConfig(subsystems=1, dt=0.5, transient_steps=0, initial_state=[50.0, 50.0, 50.0])
        with pytest.raises(IntegrationError, match="step"):
            integrate_coupled_lorenz(cfg, 200)

    def test_rk4_global_order(self):
        cfg = LorenzConfig(subsystems=1, coupling=0.0)
        x0 = np.array([[1.0, 1.0, 1.0]])
        ref = reference_lorenz((1.0, 1.0, 1.0), 0.2)
        err = [np.max(np.abs(integrate(x0, cfg, int(round(0.2 / dt)), dt=dt)[0] - ref)) for dt in (0.01, 0.005)]
        assert 12 <= err[0] / err[1] <= 20

    @pytest.mark.parametrize("bad", [dict(subsystems=0), dict(dt=0.0), dict(sample_stride=0),
                                     dict(initial_state=[1.0, 2.0])])
    def test_invalid_config(self, bad):
        with pytest.raises(ValueError):
            LorenzConfig(**bad)


class TestNoise:
    def test_zero_noise_is_identity(self):
        X = SeriesMatrix(np.arange(6.0).reshape(2, 3))
        assert np.array_equal(add_observation_noise(X, 0.0, 1).values, X.values)

    def test_noise_level(self):
        X = SeriesMatrix(np.zeros((10, 10_000)))
        noise = add_observation_noise(X, 0.5, 3).values
        assert abs(noise.std() - 0.5) < 0.005

    def test_commutes_with_column_slicing(self):
        X = SeriesMatrix(np.random.default_rng(0).normal(size=(4, 30)))
        noisy_then_sliced = add_observation_noise(X, 0.3, 9).values[:, :12]
        full_noise = add_observation_noise(SeriesMatrix(np.zeros((4, 30))), 0.3, 9).values
        sliced_then_noisy = X.values[:, :12] + full_noise[:, :12]
        np.testing.assert_array_equal(noisy_then_sliced, sliced_then_noisy)

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            add_observation_noise(SeriesMatrix(np.zeros((1, 2))), -1.0)


class TestCsv:
    def test_shape(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,c\n" + "\n".join(f"{i},{i * 2},{i * 3}" for i in range(5)) + "\n")
        X = load_csv(p)
        assert X.values.shape == (3, 5) and X.names == ["a", "b", "c"]
        np.testing.assert_array_equal(X.values[1], [0, 2, 4, 6, 8])

    def test_na_cell(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b\n1,2\n3,NA\n")
        with pytest.raises(ParseError, match=r"row 3, column 2 \('b'\)"):
            load_csv(p)

    @pytest.mark.parametrize("body", ["a,b\n1,2\n3\n", "a,b\n1,x\n", "", "a,b\n"])
    def test_malformed(self, tmp_path, body):
        p = tmp_path / "d.csv"
        p.write_text(body)
        with pytest.raises(ParseError):
            load_csv(p)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_round_trip_exact(self, seed):
        import tempfile
        from pathlib import Path

        rng = np.random.default_rng(seed)
        X = SeriesMatrix(rng.normal(size=(3, 7)) * 10.0 ** rng.integers(-8, 8, size=(3, 7)))
        with tempfile.TemporaryDirectory() as d:
            path = Path(d) / "x.csv"
            save_csv(X, path)
            back = load_csv(path)
        assert back.names == X.names
        assert back.values.tobytes() == X.values.tobytes()


class TestNormalization:
    def test_round_trip(self):
        X = np.random.default_rng(1).normal(3.0, 7.0, size=(5, 40))
        st_ = fit_normalization(X)
        np.testing.assert_allclose(st_.invert(st_.apply(X)), X, rtol=0, atol=1e-12)
        z = st_.apply(X)
        np.testing.assert_allclose(z.mean(axis=1), 0, atol=1e-12)
        np.testing.assert_allclose(z.std(axis=1), 1, atol=1e-12)

    def test_already_standard(self):
        x = np.random.default_rng(2).normal(size=50)
        x = (x - x.mean()) / x.std()
        st_ = fit_normalization(x[None, :])
        np.testing.assert_allclose(st_.apply(x[None, :])[0], x, atol=1e-12)

    def test_constant_variable(self):
        X = np.vstack([np.full(10, 4.0), np.arange(10.0)])
        st_ = fit_normalization(X)
        assert st_.constant.tolist() == [True, False]
        z = st_.apply(X)
        assert np.all(z[0] == 0)
        np.testing.assert_array_equal(st_.invert(z)[0], X[0])
        np.testing.assert_array_equal(st_.invert_row(z[0], 0), X[0])

    def test_uses_first_m_columns(self):
        X = np.array([[0.0, 2.0, 100.0]])
        st_ = fit_normalization(X, m=2)
        assert st_.mean[0] == 1.0 and st_.std[0] == 1.0
