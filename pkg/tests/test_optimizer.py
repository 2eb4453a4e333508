import numpy as np
import pytest

from poseadv.detector import BBox, Detection, ToyDetector, detection_loss, toy_forward
from poseadv.errors import ConfigError, NumericalError
from poseadv.generator import GeneratorSpec, generate_patch
from poseadv.gmm import fit_poses
from poseadv.optimizer import AdamConfig, EoPTObjective, PSOConfig, adam, attack, pso
from poseadv.poses import synthetic_corpus
from poseadv.scene import ScenarioSampler, SceneRenderer, procedural_backgrounds, sample_scenario


def sphere(Z, t):
    return np.sum(Z * Z, axis=1)


# ---------------------------------------------------------------- PSO

@pytest.mark.parametrize("seed", range(5))
def test_pso_sphere(seed):
    res = pso(sphere, 10, seed=seed)
    assert res.best_value < 1e-3


def test_pso_bookkeeping():
    res = pso(lambda Z, t: np.sum((Z - 0.7) ** 2, axis=1) + np.sin(5 * Z[:, 0]), 4,
              PSOConfig(n_particles=8, iterations=12), seed=1)
    assert res.values.shape == (13, 8)
    assert res.best_value == res.values.min()
    assert res.best_value == pytest.approx(float(np.sum((res.best - 0.7) ** 2) + np.sin(5 * res.best[0])), abs=0)
    t, i = np.unravel_index(np.argmin(res.values), res.values.shape)
    assert t == res.best_iteration


def test_pso_personal_best_monotone_and_in_bounds():
    seen = []

    def f(Z, t):
        seen.append(Z.copy())
        return np.abs(Z).sum(1) + np.cos(3 * Z).sum(1)

    res = pso(f, 3, PSOConfig(n_particles=6, iterations=20), bounds=(-1.0, 2.0), seed=3)
    assert np.all(np.diff(res.personal_best, axis=0) <= 0)
    assert all(np.all((Z >= -1) & (Z <= 2)) for Z in seen)


def test_pso_determinism():
    a = pso(sphere, 5, PSOConfig(10, 10), seed=9)
    b = pso(sphere, 5, PSOConfig(10, 10), seed=9)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.best, b.best)
    assert not np.array_equal(a.values, pso(sphere, 5, PSOConfig(10, 10), seed=10).values)


def test_pso_callback_once_per_update():
    calls = []
    pso(sphere, 2, PSOConfig(4, 7), callback=lambda t, f, g: calls.append(t))
    assert calls == list(range(1, 8))


def test_pso_errors():
    with pytest.raises(NumericalError):
        pso(lambda Z, t: np.full(len(Z), np.nan), 2, PSOConfig(4, 2))
    with pytest.raises(ConfigError):
        PSOConfig(n_particles=1)
    with pytest.raises(ConfigError):
        PSOConfig(inertia=0.0)
    with pytest.raises(ConfigError):
        pso(sphere, 2, PSOConfig(4, 2), bounds=(1.0, 1.0))


# ---------------------------------------------------------------- Adam

def test_adam_zero_gradient_fixed_point():
    z0 = np.array([0.3, -1.2, 2.0])
    res = adam(lambda z, t: (0.0, np.zeros(3)), z0)
    assert np.array_equal(res.z, z0)


@pytest.mark.parametrize("seed", range(5))
def test_adam_quadratic_converges(seed):
    zstar = np.random.default_rng(seed).uniform(-2.5, 2.5, 6)
    res = adam(lambda z, t: (0.5 * np.sum((z - zstar) ** 2), z - zstar), np.zeros(6), AdamConfig(lr=0.05))
    assert np.linalg.norm(res.z - zstar) < 1e-2


def test_adam_first_step_is_lr_sign():
    g = np.array([3.0, -0.02, 1e-3, -50.0])
    res = adam(lambda z, t: (None, g), np.zeros(4), AdamConfig(lr=0.01, iterations=1))
    np.testing.assert_allclose(res.z, -0.01 * np.sign(g), atol=1e-6)
    assert np.isnan(res.losses[0])


def test_adam_clamps_and_reports_bad_gradient():
    res = adam(lambda z, t: (0.0, -np.ones(2)), np.array([2.99, 0.0]), AdamConfig(lr=0.5, iterations=10))
    assert np.all(res.z <= 3.0) and res.z[0] == 3.0
    g = np.array([0.0, np.inf, 1.0])
    with pytest.raises(NumericalError, match="index 1"):
        adam(lambda z, t: (0.0, g), np.zeros(3))


# ---------------------------------------------------------------- EoPT objective

@pytest.fixture(scope="module")
def gmm():
    theta, _, lo, hi = synthetic_corpus(20, 10, seed=0)
    return fit_poses(theta, lo, hi, 3, 50)


def small_renderer(size=16, patch=4):
    return SceneRenderer(backgrounds=procedural_backgrounds(8, size, size, seed=2), width=size, height=size,
                         patch_size=patch, texture_size=8)


class ConstantDetector:
    def __init__(self, conf):
        self.conf = conf

    def detect(self, image):
        H, W = image.shape[:2]
        return [Detection(BBox(0.0, 0.0, float(W), float(H)), self.conf)]


class MeanDetector:
    """Full-frame box whose confidence is the mean pixel value."""

    def detect(self, image):
        H, W = image.shape[:2]
        return [Detection(BBox(0.0, 0.0, float(W), float(H)), float(image.mean()))]


def test_constant_detector_loss_is_constant(gmm):
    r = small_renderer()
    obj = EoPTObjective(r, ScenarioSampler(gmm, 8), GeneratorSpec("direct", 4), [ConstantDetector(0.7)],
                        batch_size=6)
    assert all(sc.gt is not None for sc in obj.scenes(0))
    for z in (np.zeros(48), np.full(48, 3.0), np.random.default_rng(0).uniform(-3, 3, 48)):
        assert obj.loss(z, 0) == pytest.approx(0.7, abs=1e-15)


def test_single_scene_batch(gmm):
    r = small_renderer(32, 16)
    from poseadv.detector import person_detector

    det = person_detector()
    s = ScenarioSampler(gmm, 8, seed=4)
    spec = GeneratorSpec()
    obj = EoPTObjective(r, s, spec, [det], batch_size=1)
    z = np.random.default_rng(1).uniform(-3, 3, spec.dim)
    sc = r.build(sample_scenario(s, 3, 0))
    image = sc.operator.image(generate_patch(spec, z))
    assert obj.loss(z, 3) == detection_loss(toy_forward(det, image), sc.gt)


def test_estimator_variance_scales_with_batch(gmm):
    # nested batches 25 and 100 drawn over K epochs; Var ratio should be ~1/4
    r = small_renderer(8, 4)
    s = ScenarioSampler(gmm, 8, seed=5)
    spec = GeneratorSpec("direct", 4)
    z = np.zeros(spec.dim)
    small = EoPTObjective(r, s, spec, [MeanDetector()], batch_size=25, workers=4)
    big = EoPTObjective(r, s, spec, [MeanDetector()], batch_size=100, workers=4)
    K = 120
    a = np.array([small.loss(z, e) for e in range(K)])
    b = np.array([big.loss(z, e) for e in range(K)])
    ratio = b.var(ddof=1) / a.var(ddof=1)
    print("variance ratio", ratio)
    assert abs(ratio / 0.25 - 1) < 0.3, ratio


def test_loss_in_unit_interval_and_batch_consistent(gmm):
    r = small_renderer()
    rng = np.random.default_rng(3)
    det = ToyDetector(rng.normal(scale=0.3, size=(8, 5, 3)), 0.5)
    obj = EoPTObjective(r, ScenarioSampler(gmm, 8), GeneratorSpec("direct", 4), [det], batch_size=5)
    Z = rng.uniform(-3, 3, (6, 48))
    batch = obj.loss_batch(Z, 0)
    assert np.all((batch >= 0) & (batch <= 1))
    assert all(batch[i] == obj.loss(Z[i], 0) for i in range(6))
    assert obj.loss_and_grad(Z[2], 0)[0] == pytest.approx(batch[2], abs=1e-15)


@pytest.mark.parametrize("seed", range(4))
def test_analytic_gradient_matches_central_differences(gmm, seed):
    rng = np.random.default_rng(seed)
    det = ToyDetector(rng.normal(scale=0.3, size=(8, 5, 3)), rng.normal())
    spec = GeneratorSpec("smooth", 4, coeffs=2, scale=4.0)  # 12-d latent
    obj = EoPTObjective(small_renderer(), ScenarioSampler(gmm, 8, seed=seed), spec, [det],
                        batch_size=4, resample=False)
    z = rng.uniform(-2, 2, spec.dim)
    _, g = obj.loss_and_grad(z, 0)
    h = 1e-3
    num = np.array([(obj.loss(z + h * e, 0) - obj.loss(z - h * e, 0)) / (2 * h) for e in np.eye(spec.dim)])
    assert np.max(np.abs(g - num)) < 1e-3 * np.max(np.abs(num))


def test_ensemble_and_fd_mode(gmm):
    r = small_renderer()
    spec = GeneratorSpec("smooth", 4, coeffs=1, scale=4.0)
    s = ScenarioSampler(gmm, 8)
    obj = EoPTObjective(r, s, spec, [ConstantDetector(0.2), MeanDetector()], weights=[3, 1], batch_size=3)
    assert not obj.analytic
    z = np.array([0.5, -0.5, 1.0])
    per = [EoPTObjective(r, s, spec, [d], batch_size=3).loss(z, 0) for d in obj.detectors]
    assert obj.loss(z, 0) == pytest.approx(0.75 * per[0] + 0.25 * per[1], abs=1e-15)
    loss, g = obj.loss_and_grad(z, 0)
    for k in range(3):
        e = np.zeros(3)
        e[k] = 0.05
        assert g[k] == pytest.approx((obj.loss(z + e, 0) - loss) / 0.05, abs=1e-12)


def test_objective_validation(gmm):
    r = small_renderer()
    s = ScenarioSampler(gmm, 8)
    with pytest.raises(ConfigError):
        EoPTObjective(r, s, GeneratorSpec("direct", 4), [])
    with pytest.raises(ConfigError):
        EoPTObjective(r, s, GeneratorSpec("direct", 5), [MeanDetector()])
    with pytest.raises(ConfigError):
        EoPTObjective(r, s, GeneratorSpec("direct", 4), [MeanDetector()], weights=[0.0])


# ---------------------------------------------------------------- attack wiring

def test_attack_wiring(gmm):
    from poseadv.detector import person_detector

    obj = EoPTObjective(SceneRenderer(), ScenarioSampler(gmm, 100), GeneratorSpec(), [person_detector()],
                        batch_size=4, resample=False)
    got = []
    res = attack(obj, PSOConfig(6, 3), AdamConfig(iterations=4, batch_size=4), seed=2, log_fn=got.append)
    assert len(res.log) == 3 + 4 and got == res.log
    assert [e["phase"] for e in res.log] == ["pso"] * 3 + ["adam"] * 4
    first_adam = res.log[3]
    assert first_adam["loss"] == res.pso.best_value
    assert set(first_adam) == {"phase", "iter", "loss", "best_loss", "wall_ms"}
    assert np.array_equal(res.patch, generate_patch(obj.spec, res.z))
    assert all(e["best_loss"] <= res.pso.best_value for e in res.log[3:])
