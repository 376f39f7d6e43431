"""Calibration (tuning + dictionaries) and single-instance experiment runs."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from .detector import DetectionResult, Hyperparams, OCKGDetector
from .graph import Graph
from .kernels import Dictionary, init_dictionary
from .metrics import evaluate_instance
from .scenarios import ScenarioSpec, generate
from .tuning import GAMMAS, SIGMA_SCALE, GridSpec, TuneResult, build_grids, tune

log = logging.getLogger(__name__)

METHODS = ("ockg", "pool")


@dataclass
class RunSettings:
    n: int
    alpha: float = 0.1
    stride: int = 1
    crop: bool = False
    mu0: float = 0.1
    capacity: int = 100
    R: int = 5
    tol: float | None = None
    max_cycles: int = 10_000
    sigma_scale: float = SIGMA_SCALE

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class Calibration:
    forward: Hyperparams
    backward: Hyperparams
    dictionaries: tuple[Dictionary, Dictionary]
    grids: GridSpec
    tuning: tuple[TuneResult, TuneResult]

    def to_json(self) -> dict:
        return {
            "forward": asdict(self.forward),
            "backward": asdict(self.backward),
            "grids": self.grids.to_json(),
            "tuning_forward": self.tuning[0].to_json(),
            "tuning_backward": self.tuning[1].to_json(),
            "dictionaries": [D.to_json() for D in self.dictionaries],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Calibration":
        grids = GridSpec(**obj["grids"])
        tr = [TuneResult(t["sigma"], t["lambda"], t["gamma"], t["table"], t["folds"])
              for t in (obj["tuning_forward"], obj["tuning_backward"])]
        return cls(Hyperparams(**obj["forward"]), Hyperparams(**obj["backward"]),
                   tuple(Dictionary.from_json(d) for d in obj["dictionaries"]), grids, tuple(tr))


def time_major(block: np.ndarray) -> np.ndarray:
    """(N, m, d) -> (m * N, d), ordered by time then node."""
    return np.ascontiguousarray(block.transpose(1, 0, 2)).reshape(-1, block.shape[-1])


def calibrate(calibration: np.ndarray, graph: Graph, settings: RunSettings,
              rng: np.random.Generator, pool: bool = False) -> Calibration:
    """Tune both directions on a change-free block of shape (N, 2n, d) and
    build the detector's initial dictionaries from it."""
    calibration = np.asarray(calibration, dtype=float)
    if calibration.ndim == 2:
        calibration = calibration[..., None]
    n = settings.n
    if calibration.shape[1] < 2 * n:
        raise ValueError(f"calibration block has {calibration.shape[1]} steps, need 2n={2 * n}")
    calibration = calibration[:, :2 * n]
    if pool:
        # no graph term: only the ridge strength lambda * gamma matters
        base = build_grids(calibration, graph, lambda_scale=1.0, sigma_scale=settings.sigma_scale)
        grids = GridSpec(base.sigmas, [1.0], list(GAMMAS), base.node_sigmas)
    else:
        grids = build_grids(calibration, graph, sigma_scale=settings.sigma_scale)
    points = time_major(calibration)
    sigma_med = grids.sigmas[2]
    tuning_dict = init_dictionary(points, sigma_med, settings.mu0, settings.capacity)
    X, Xp = calibration[:, :n], calibration[:, n:]
    fwd = tune(X, Xp, graph, tuning_dict.centers, grids, settings.R, settings.alpha, rng,
               settings.tol, settings.max_cycles)
    bwd = tune(Xp, X, graph, tuning_dict.centers, grids, settings.R, settings.alpha, rng,
               settings.tol, settings.max_cycles)
    hp = [Hyperparams(settings.alpha, t.sigma, t.lam, t.gamma) for t in (fwd, bwd)]
    dicts = tuple(init_dictionary(points, h.sigma, settings.mu0, settings.capacity) for h in hp)
    return Calibration(hp[0], hp[1], dicts, grids, (fwd, bwd))


def scoring_window(spec: ScenarioSpec, settings: RunSettings) -> tuple[int, int]:
    """Slice ``[start, stop)`` of the stream fed to the detector."""
    if settings.crop:
        start = max(spec.tau - 4 * settings.n, 0)
        return start, min(spec.tau + 2 * settings.n, spec.T)
    return 0, spec.T


def detect(stream: np.ndarray, graph: Graph, calib: Calibration, settings: RunSettings,
           start: int = 0, stop: int | None = None, eta: float = np.inf, eta_nodes=None) -> DetectionResult:
    det = OCKGDetector(graph, settings.n, calib.forward, calib.backward, calib.dictionaries,
                       eta=eta, eta_nodes=eta_nodes, stride=settings.stride, tol=settings.tol,
                       max_cycles=settings.max_cycles, t0=start)
    return det.run(stream[start:stop])


def instance_rngs(master_seed: int, n_instances: int):
    """Graph rng and one (data, tuning) rng pair per instance, all derived from one seed."""
    root = np.random.SeedSequence(master_seed)
    graph_ss, *inst = root.spawn(n_instances + 1)
    pairs = [tuple(np.random.default_rng(s) for s in ss.spawn(2)) for ss in inst]
    return np.random.default_rng(graph_ss), pairs


def run_instance(spec: ScenarioSpec, graph: Graph, clusters, data_rng: np.random.Generator,
                 tune_seed: int, settings: RunSettings, methods=METHODS) -> dict:
    """Generate one stream, calibrate on its first 2n steps, run and evaluate."""
    stream, C = generate(spec, graph, clusters, data_rng)
    calib_block = stream[:2 * settings.n].transpose(1, 0, 2)
    start, stop = scoring_window(spec, settings)
    out = {"affected": sorted(C), "methods": {}}
    for method in methods:
        g = graph.without_edges() if method == "pool" else graph
        t0 = time.perf_counter()
        calib = calibrate(calib_block, g, settings, np.random.default_rng(tune_seed),
                          pool=(method == "pool"))
        t1 = time.perf_counter()
        res = detect(stream, g, calib, settings, start, stop)
        t2 = time.perf_counter()
        metrics = evaluate_instance(res.series, spec.tau, settings.n, C)
        log.info("%s %s: delay=%d auc=%.3f success=%s (tune %.1fs, run %.1fs)", spec.experiment,
                 method, metrics["delay"], metrics["auc"], metrics["success"], t1 - t0, t2 - t1)
        out["methods"][method] = {
            "metrics": metrics,
            "series": res.series,
            "calibration": calib,
            "unconverged_steps": res.unconverged_steps,
            "timing": {"tune_s": t1 - t0, "run_s": t2 - t1},
        }
    out["stream"] = stream
    return out
