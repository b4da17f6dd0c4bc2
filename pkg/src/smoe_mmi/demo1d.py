"""The 1D small-sample experiment.

A known three-kernel model is sampled on an even grid, corrupted with
Gaussian noise and refitted; ``H`` independent noise realizations are fused
by parameter averaging. Results come as arrays ready for plotting and can be
written as tab-separated tables with :func:`write_tables`.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .core import KernelParams, SMoEModel, match_kernels, packed_gating, permute_kernels, pixel_coords
from .fitter import FitConfig, fit_packed
from .fusion import average_parameters


def default_ground_truth() -> SMoEModel:
    """Step at x ~ 0.35 from a narrow first kernel, smooth ramp near 0.65."""
    return SMoEModel((
        KernelParams.from_precision([0.2], [[400.0]], mix_logit=8.0, expert=0.2),
        KernelParams.from_precision([0.5], [[40.0]], mix_logit=0.0, expert=0.9),
        KernelParams.from_precision([0.8], [[40.0]], mix_logit=0.0, expert=0.4),
    ), 1)


@dataclass(frozen=True)
class Demo1DConfig:
    ground_truth: SMoEModel = field(default_factory=default_ground_truth)
    sample_counts: tuple[int, ...] = (3000, 32)
    noise_vars: tuple[float, ...] = (0.15, 0.05)
    H: int = 10
    trials: int = 5
    seed: int = 0
    fit: FitConfig = field(default_factory=lambda: FitConfig(num_kernels=3))
    eval_points: int = 1000

    def __post_init__(self):
        if len(self.sample_counts) != len(self.noise_vars):
            raise ValueError("sample_counts and noise_vars must have the same length")
        if self.H < 1 or self.trials < 1:
            raise ValueError("H and trials must be >= 1")
        if self.ground_truth.dim != 1:
            raise ValueError("the ground truth must be a 1D model")
        if any(v < 0 for v in self.noise_vars):
            raise ValueError("noise variances must be non-negative")


@dataclass
class ScenarioResult:
    n_samples: int
    noise_var: float
    truth: np.ndarray          # (L, k) packed ground truth
    fits: np.ndarray           # (trials, H, L, k), kernels matched to the truth
    fused: np.ndarray          # (trials, L, k), kernels matched to the truth
    x: np.ndarray              # (M,) sample positions
    noisy: np.ndarray          # (M,) first noisy realization
    grid: np.ndarray           # (eval_points,)
    clean_curve: np.ndarray
    single_curve: np.ndarray   # first trial, first model
    fused_curve: np.ndarray    # first trial
    truth_gates: np.ndarray    # (eval_points, L)
    fused_gates: np.ndarray    # (eval_points, L)

    def expert_rmse(self, params: np.ndarray) -> np.ndarray:
        """RMSE over kernels between expert values and the truth's."""
        return _rmse(params[..., -1], self.truth[:, -1])

    def center_rmse(self, params: np.ndarray) -> np.ndarray:
        return _rmse(params[..., 0], self.truth[:, 0])

    def center_max_error(self, params: np.ndarray) -> np.ndarray:
        return np.abs(params[..., 0] - self.truth[:, 0]).max(axis=-1)


def _rmse(est, ref):
    return np.sqrt(np.mean((est - ref) ** 2, axis=-1))


def _matched(truth: SMoEModel, theta: np.ndarray, coords) -> np.ndarray:
    model = SMoEModel.from_packed(theta, 1)
    return permute_kernels(model, match_kernels(truth, model, coords)).packed()


def run_scenario(cfg: Demo1DConfig, n_samples: int, noise_var: float, seed_key=()) -> ScenarioResult:
    truth = cfg.ground_truth
    coords = pixel_coords(n_samples, 1)
    clean = packed_gating(truth.packed()[None], coords)[0][0] @ truth.experts
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, n_samples, *seed_key]))
    noise = rng.normal(0.0, np.sqrt(noise_var), size=(cfg.trials, cfg.H, n_samples))
    values = (clean + noise).reshape(-1, n_samples)

    theta = fit_packed(coords, values, cfg.fit)[0].reshape(cfg.trials, cfg.H, truth.num_kernels, -1)
    fits = np.empty_like(theta)
    fused = np.empty((cfg.trials,) + theta.shape[2:])
    for t in range(cfg.trials):
        models = [SMoEModel.from_packed(th, 1) for th in theta[t]]
        fused[t] = _matched(truth, average_parameters(models, coords).packed(), coords)
        for h in range(cfg.H):
            fits[t, h] = _matched(truth, theta[t, h], coords)

    grid = pixel_coords(cfg.eval_points, 1)
    truth_gates = packed_gating(truth.packed()[None], grid)[0][0]
    fused_gates = packed_gating(fused[:1], grid)[0][0]
    return ScenarioResult(
        n_samples=n_samples,
        noise_var=noise_var,
        truth=truth.packed(),
        fits=fits,
        fused=fused,
        x=coords[:, 0],
        noisy=values[0],
        grid=grid[:, 0],
        clean_curve=truth_gates @ truth.experts,
        single_curve=packed_gating(fits[0, :1], grid)[0][0] @ fits[0, 0, :, -1],
        fused_curve=fused_gates @ fused[0, :, -1],
        truth_gates=truth_gates,
        fused_gates=fused_gates,
    )


def run_demo(cfg: Demo1DConfig = Demo1DConfig()) -> list[ScenarioResult]:
    """One :class:`ScenarioResult` per (sample count, noise variance) pair."""
    return [run_scenario(cfg, m, v, (i,))
            for i, (m, v) in enumerate(zip(cfg.sample_counts, cfg.noise_vars))]


PARAM_COLUMNS = ("scenario", "n_samples", "noise_var", "kind", "trial", "model", "kernel",
                 "center", "log_precision_factor", "mix_logit", "expert")


def write_tables(results, out_dir) -> list[str]:
    """Write ``params.tsv``, ``curves.tsv`` and ``samples.tsv`` into ``out_dir``.

    ``params.tsv`` has one row per kernel of the true, every single and every
    fused model; ``curves.tsv`` one row per evaluation point; ``samples.tsv``
    the first noisy realization of each scenario.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = [os.path.join(out_dir, n) for n in ("params.tsv", "curves.tsv", "samples.tsv")]

    with open(paths[0], "w", newline="") as fh:
        out = csv.writer(fh, delimiter="\t", lineterminator="\n")
        out.writerow(PARAM_COLUMNS)
        for s, res in enumerate(results):
            head = (s, res.n_samples, repr(res.noise_var))

            def rows(kind, trial, model, params):
                for j, p in enumerate(params):
                    out.writerow(head + (kind, trial, model, j) + tuple(f"{v:.10g}" for v in p))

            rows("true", -1, -1, res.truth)
            for t in range(res.fits.shape[0]):
                for h in range(res.fits.shape[1]):
                    rows("single", t, h, res.fits[t, h])
                rows("fused", t, -1, res.fused[t])

    n_k = results[0].truth.shape[0] if results else 0
    with open(paths[1], "w", newline="") as fh:
        out = csv.writer(fh, delimiter="\t", lineterminator="\n")
        out.writerow(["scenario", "x", "clean", "single", "fused"]
                     + [f"gate_true_{j}" for j in range(n_k)] + [f"gate_fused_{j}" for j in range(n_k)])
        for s, res in enumerate(results):
            for i, x in enumerate(res.grid):
                vals = [x, res.clean_curve[i], res.single_curve[i], res.fused_curve[i],
                        *res.truth_gates[i], *res.fused_gates[i]]
                out.writerow([s] + [f"{v:.10g}" for v in vals])

    with open(paths[2], "w", newline="") as fh:
        out = csv.writer(fh, delimiter="\t", lineterminator="\n")
        out.writerow(["scenario", "x", "noisy"])
        for s, res in enumerate(results):
            for x, y in zip(res.x, res.noisy):
                out.writerow([s, f"{x:.10g}", f"{y:.10g}"])
    return paths
