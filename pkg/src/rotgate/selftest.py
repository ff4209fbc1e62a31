"""End-to-end property checks runnable from the CLI.

Every check re-derives its expected values through an independent route
(truncated series, brute-force sweeps, finite differences) rather than through
the code path under test, and prints one PASS/FAIL line.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import so3
from .gating import GateKind, PoseAngles, gate, pose_to_phi
from .metrics import compute_eer, compute_tar_at_far, identification_rank_k
from .optim import OptimizerConfig, minimize, wahba_objective
from .residual import (
    SubnetParams,
    TrainConfig,
    TrainedModel,
    frontalize,
    subnet_loss_and_grads,
    train_subnet,
)
from .se3 import Transform, se3_exp, se3_log, twist_hat


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: {self.detail}"


def _random_rotvec(rng, max_angle: float) -> np.ndarray:
    v = rng.standard_normal(3)
    v /= np.linalg.norm(v)
    return v * rng.uniform(0.0, max_angle)


# ---------------------------------------------------------------------------
# Independent oracles


def series_exp(m: np.ndarray, terms: int = 40) -> np.ndarray:
    """Truncated power series of the matrix exponential."""
    out = np.zeros_like(m, dtype=float)
    term = np.eye(m.shape[0])
    out += term
    for n in range(1, terms):
        term = term @ m / n
        out += term
    return out


def brute_force_eer(genuine, impostor) -> float:
    """EER by exhaustive sweep over midpoint thresholds with loop counting."""
    genuine = [float(x) for x in genuine]
    impostor = [float(x) for x in impostor]
    merged = sorted(set(genuine + impostor))
    candidates = [merged[0] - 1.0]
    for a, b in zip(merged, merged[1:]):
        candidates.append((a + b) / 2.0)
    candidates.append(merged[-1] + 1.0)

    points = []
    for t in candidates:
        far = sum(1 for s in impostor if s >= t) / len(impostor)
        frr = sum(1 for s in genuine if s < t) / len(genuine)
        points.append((far, frr))
    for idx, (far, frr) in enumerate(points):
        if far - frr <= 0.0:
            if far - frr == 0.0:
                return far
            far_prev, frr_prev = points[idx - 1]
            d_prev = far_prev - frr_prev
            d_here = far - frr
            t = d_prev / (d_prev - d_here)
            return frr_prev + t * (frr - frr_prev)
    raise AssertionError("no crossing found")


def brute_force_tar_at_far(genuine, impostor, target: float) -> float:
    genuine = [float(x) for x in genuine]
    impostor = [float(x) for x in impostor]
    merged = sorted(set(genuine + impostor))
    candidates = [merged[0] - 1.0]
    for a, b in zip(merged, merged[1:]):
        candidates.append((a + b) / 2.0)
    candidates.append(merged[-1] + 1.0)
    for t in candidates:
        far = sum(1 for s in impostor if s >= t) / len(impostor)
        if far <= target:
            return sum(1 for s in genuine if s >= t) / len(genuine)
    raise AssertionError("unreachable: FAR reaches 0 at the top sentinel")


def brute_force_rank_k(probes, gallery, k: int) -> float:
    hits = 0
    for probe_id, probe_vec in probes:
        p = np.asarray(probe_vec, dtype=float)
        p = p / np.linalg.norm(p)
        sims = []
        for gal_id, gal_vec in gallery:
            g = np.asarray(gal_vec, dtype=float)
            g = g / np.linalg.norm(g)
            sims.append((float(p @ g), int(gal_id)))
        sims.sort(key=lambda pair: (-pair[0], pair[1]))
        if int(probe_id) in {gal_id for _, gal_id in sims[:k]}:
            hits += 1
    return hits / len(probes)


def finite_difference_subnet_grads(params: SubnetParams, feat, phi, target, omega, h=1e-5):
    """Central differences of the batch loss over every scalar parameter."""

    def loss_of(p: SubnetParams) -> float:
        value, _, _, _ = subnet_loss_and_grads(p, feat, phi, target, omega)
        return value

    grads = {}
    for name in ("w1", "b1", "w2", "b2"):
        base = getattr(params, name)
        grad = np.zeros_like(base)
        it = np.nditer(base, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            trial = params.copy()
            getattr(trial, name)[idx] = base[idx] + h
            up = loss_of(trial)
            getattr(trial, name)[idx] = base[idx] - h
            down = loss_of(trial)
            grad[idx] = (up - down) / (2.0 * h)
        grads[name] = grad
    trial = params.copy()
    trial.a1 = params.a1 + h
    up = loss_of(trial)
    trial.a1 = params.a1 - h
    down = loss_of(trial)
    grads["a1"] = (up - down) / (2.0 * h)
    return grads


# ---------------------------------------------------------------------------
# Criterion checks


def check_lie_algebra_suite(seed: int = 20240501, trials: int = 1000) -> CheckResult:
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_round = worst_series = worst_trace = worst_axis = 0.0
    for _ in range(trials):
        phi = _random_rotvec(rng, math.pi / 2.0)
        r = so3.exp_map(phi)
        worst_round = max(worst_round, float(np.linalg.norm(so3.log_map(r) - phi)))
        worst_series = max(worst_series, float(np.max(np.abs(r - series_exp(so3.hat(phi))))))
        theta = float(np.linalg.norm(phi))
        worst_trace = max(worst_trace, abs(float(np.trace(r)) - (2.0 * math.cos(theta) + 1.0)))
        if theta > 0.0:
            psi = phi / theta
            worst_axis = max(worst_axis, float(np.max(np.abs(r @ psi - psi))))
    elapsed = time.perf_counter() - start
    passed = (
        worst_round <= 1e-9
        and worst_series <= 1e-12
        and worst_trace <= 1e-10
        and worst_axis <= 1e-10
        and elapsed <= 5.0
    )
    return CheckResult(
        "lie-algebra exp/log suite",
        passed,
        f"round-trip {worst_round:.2e}, series {worst_series:.2e}, "
        f"trace {worst_trace:.2e}, axis {worst_axis:.2e}, {elapsed:.2f}s",
    )


def check_algebra_properties(seed: int = 7, trials: int = 1000) -> CheckResult:
    report = so3.check_algebra_properties(seed, trials)
    return CheckResult(
        "so(3) algebra properties",
        report.within(1e-10),
        f"max violation {report.max_violation():.2e} over {trials} trials",
    )


def check_derivatives(seed: int = 11) -> CheckResult:
    rng = np.random.default_rng(seed)
    # Left-perturbation derivative of R p against central differences.
    worst_pd = 0.0
    h = 1e-5
    for _ in range(50):
        r = so3.exp_map(_random_rotvec(rng, math.pi / 2.0))
        p = rng.standard_normal(3)
        analytic = so3.perturbation_derivative(r, p)
        fd = np.zeros((3, 3))
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            fd[:, k] = (so3.exp_map(e) @ r @ p - so3.exp_map(-e) @ r @ p) / (2.0 * h)
        worst_pd = max(worst_pd, float(np.max(np.abs(analytic - fd))))

    # Subnet backprop on a d=4 micro-instance against central differences.
    dim, n = 4, 8
    params = SubnetParams.init(dim, seed=seed)
    params.w2 = rng.standard_normal(params.w2.shape) * 0.3
    params.b2 = rng.standard_normal(dim) * 0.1
    feat = rng.standard_normal((n, dim))
    phi = rng.standard_normal((n, 3)) * 0.4
    target = rng.standard_normal((n, dim))
    omega = rng.uniform(0.2, 1.0, size=n)
    _, grads, _, _ = subnet_loss_and_grads(params, feat, phi, target, omega)
    fd = finite_difference_subnet_grads(params, feat, phi, target, omega)
    worst_bp = 0.0
    for name in ("w1", "b1", "a1", "w2", "b2"):
        got = np.asarray(getattr(grads, name), dtype=float)
        want = np.asarray(fd[name], dtype=float)
        rel = np.max(np.abs(got - want) / (1.0 + np.abs(want)))
        worst_bp = max(worst_bp, float(rel))

    passed = worst_pd <= 1e-6 and worst_bp <= 1e-5
    return CheckResult(
        "derivative checks",
        passed,
        f"perturbation vs FD {worst_pd:.2e}, backprop vs FD (rel) {worst_bp:.2e}",
    )


def check_bch_order(seed: int = 13, trials: int = 100) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_ratio = math.inf
    for _ in range(trials):
        phi = _random_rotvec(rng, math.pi / 2.0)
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)

        def bch_error(delta: np.ndarray) -> float:
            exact = so3.log_map(so3.exp_map(delta) @ so3.exp_map(phi))
            approx = so3.bch_compose_left(delta, phi)
            return float(np.linalg.norm(approx - exact))

        err_full = bch_error(1e-2 * direction)
        err_half = bch_error(5e-3 * direction)
        worst_ratio = min(worst_ratio, err_full / err_half)
    return CheckResult(
        "BCH second-order error scaling",
        worst_ratio >= 3.5,
        f"min halving ratio {worst_ratio:.2f} over {trials} cases (want >= 3.5)",
    )


def check_wahba_convergence(seed: int = 17, trials: int = 100) -> CheckResult:
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_err = 0.0
    worst_defect = 0.0
    for _ in range(trials):
        points = rng.standard_normal((20, 3))
        r_true = so3.exp_map(_random_rotvec(rng, math.pi))
        obj = wahba_objective(points, points @ r_true.T)
        r0 = so3.exp_map(_random_rotvec(rng, math.pi / 3.0)) @ r_true
        cfg = OptimizerConfig(alpha=0.5, max_iters=200)
        trace = minimize(obj, r0, cfg)
        worst_err = max(worst_err, so3.geodesic_distance(trace.final_rotation, r_true))
        for r, _, _ in trace.iterates:
            worst_defect = max(
                worst_defect,
                so3.orthogonality_defect(r),
                abs(float(np.linalg.det(r)) - 1.0),
            )
    elapsed = time.perf_counter() - start
    passed = worst_err <= 1e-6 and worst_defect <= 1e-9 and elapsed <= 10.0
    return CheckResult(
        "rotation-manifold Wahba convergence",
        passed,
        f"worst geodesic error {worst_err:.2e}, worst SO(3) defect "
        f"{worst_defect:.2e}, {elapsed:.2f}s",
    )


def check_se3(seed: int = 19, trials: int = 500) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_series = 0.0
    worst_round = 0.0
    for _ in range(trials):
        xi = np.concatenate([rng.standard_normal(3), _random_rotvec(rng, math.pi / 2.0)])
        tf = se3_exp(xi)
        worst_series = max(
            worst_series,
            float(np.max(np.abs(tf.as_matrix() - series_exp(twist_hat(xi))))),
        )
        worst_round = max(worst_round, float(np.linalg.norm(se3_log(tf) - xi)))
    passed = worst_series <= 1e-11 and worst_round <= 1e-9
    return CheckResult(
        "SE(3) exp/log",
        passed,
        f"series {worst_series:.2e}, round-trip {worst_round:.2e} over {trials} twists",
    )


def check_gating(seed: int = 23, trials: int = 1000) -> CheckResult:
    rng = np.random.default_rng(seed)
    ok = gate(GateKind.ABS_SIN, PoseAngles.zero()) == 0.0
    half_pi = math.pi / 2.0
    for pose in (
        PoseAngles(half_pi, 0.0, 0.0),
        PoseAngles(0.0, -half_pi, 0.0),
        PoseAngles(0.3, 0.0, half_pi),
    ):
        ok = ok and gate(GateKind.ABS_SIN, pose) == 1.0
    for _ in range(trials):
        p = PoseAngles(*rng.uniform(-half_pi, half_pi, size=3))
        mirrored = PoseAngles(-p.pitch, -p.yaw, -p.roll)
        for kind in GateKind:
            ok = ok and gate(kind, p) == gate(kind, mirrored)
    return CheckResult(
        "gating exactness and symmetry",
        bool(ok),
        f"zero/saturation exact, mirror symmetry exact over {trials} poses",
    )


def check_frontalize_identity(seed: int = 29, trials: int = 1000) -> CheckResult:
    rng = np.random.default_rng(seed)
    dim = 16
    params = SubnetParams.init(dim, seed=seed)
    params.w2 = rng.standard_normal(params.w2.shape)
    params.b2 = rng.standard_normal(dim)
    model = TrainedModel(params=params, gate_kind=GateKind.ABS_SIN, loss_history=[0.0])
    ok = True
    for _ in range(trials):
        feat = rng.standard_normal(dim)
        out = frontalize(model, feat, PoseAngles.zero())
        ok = ok and np.array_equal(out, feat)
    posed = frontalize(model, rng.standard_normal(dim), PoseAngles(0.0, 0.5, 0.0))
    ok = ok and posed.shape == (dim,)
    return CheckResult(
        "gate-zero frontalization identity",
        bool(ok),
        f"bitwise identity over {trials} features",
    )


def make_realizable_pairs(seed: int, dim: int = 8, n_pairs: int = 2000):
    """Pairs whose frontal feature is an exactly representable gated-linear map."""
    rng = np.random.default_rng(seed)
    mixing = rng.standard_normal((dim, dim + 3)) / math.sqrt(dim + 3)
    pairs = []
    for _ in range(n_pairs):
        profile = rng.standard_normal(dim)
        profile /= np.linalg.norm(profile)
        pose = PoseAngles(0.0, float(rng.uniform(-math.pi / 2, math.pi / 2)), 0.0)
        omega = gate(GateKind.ABS_SIN, pose)
        phi = pose_to_phi(pose)
        frontal = profile + omega * (mixing @ np.concatenate([profile, phi]))
        pairs.append((profile, frontal, pose))
    return pairs


def check_realizable_training(seed: int = 31) -> CheckResult:
    start = time.perf_counter()
    pairs = make_realizable_pairs(seed)
    cfg = TrainConfig(seed=seed)
    model = train_subnet(pairs, cfg, GateKind.ABS_SIN)
    rerun = train_subnet(pairs, cfg, GateKind.ABS_SIN)
    deterministic = model.loss_history == rerun.loss_history
    final_loss = model.loss_history[-1]
    elapsed = time.perf_counter() - start
    passed = final_loss <= 1e-3 and deterministic and elapsed <= 30.0 and cfg.epochs <= 200
    return CheckResult(
        "realizable-target training",
        bool(passed),
        f"final epoch-mean loss {final_loss:.2e} after {cfg.epochs} epochs, "
        f"deterministic={deterministic}, {elapsed:.2f}s",
    )


def check_metric_oracles(seed: int = 37, instances: int = 1000) -> CheckResult:
    rng = np.random.default_rng(seed)
    ok = True
    for i in range(instances):
        n_gen = int(rng.integers(1, 26))
        n_imp = int(rng.integers(1, 26))
        genuine = rng.normal(0.5, 0.5, size=n_gen)
        impostor = rng.normal(-0.5, 0.5, size=n_imp)
        if i % 2 == 0:
            genuine = np.round(genuine, 1)
            impostor = np.round(impostor, 1)
        ok = ok and compute_eer(genuine, impostor) == brute_force_eer(genuine, impostor)
        target = float(rng.uniform(0.02, 0.5))
        got = compute_tar_at_far(genuine, impostor, [target])[target].tar
        ok = ok and got == brute_force_tar_at_far(genuine, impostor, target)
        if not ok:
            break

    for i in range(200):
        n_ids = int(rng.integers(2, 9))
        dim = 6
        gallery = [(j, rng.standard_normal(dim)) for j in range(n_ids)]
        for j in range(1, n_ids):
            if rng.uniform() < 0.3:
                # Duplicated gallery vectors force exact similarity ties, so the
                # lower-id tie-break rule is actually exercised.
                gallery[j] = (j, gallery[j - 1][1].copy())
        probes = []
        for j in range(n_ids):
            if rng.uniform() < 0.3:
                probes.append((j, gallery[j][1].copy()))
            else:
                probes.append((j, rng.standard_normal(dim)))
        k = int(rng.integers(1, n_ids + 1))
        ok = ok and identification_rank_k(probes, gallery, k) == brute_force_rank_k(
            probes, gallery, k
        )
        if not ok:
            break
    return CheckResult(
        "metric brute-force oracles",
        bool(ok),
        f"EER/TAR oracle on {instances} instances, rank-k on 200 instances, exact match",
    )


ALL_CHECKS = (
    check_lie_algebra_suite,
    check_algebra_properties,
    check_derivatives,
    check_bch_order,
    check_wahba_convergence,
    check_se3,
    check_gating,
    check_frontalize_identity,
    check_realizable_training,
    check_metric_oracles,
)


def run_selftest(out=print) -> bool:
    """Run every check, print one line each, return overall success."""
    start = time.perf_counter()
    all_passed = True
    for check in ALL_CHECKS:
        result = check()
        out(result.line())
        all_passed = all_passed and result.passed
    out(f"selftest {'passed' if all_passed else 'FAILED'} in {time.perf_counter() - start:.1f}s")
    return all_passed
