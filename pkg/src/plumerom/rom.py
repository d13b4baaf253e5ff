"""End-to-end reduced-order model: split, train, predict, evaluate.

A trained model couples one POD basis with one GP per retained mode, all
fitted on the training split. Hyperparameters come from multi-restart MLL,
from single-descent MAP informed by priors calibrated on the held-out
calibration split, or are frozen at the prior modes (baseline). Performance
is scored with explained-variance Q2 criteria: per mode, per grid node, and
globally (variance-weighted, using the training-set node variance frozen in
the basis).
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gpr, pod, priors, smx
from .errors import ConfigError, DataError
from .plume import Grid, SnapshotSet
from .sampling import ParameterSample, ParameterSpace, to_physical

DEFAULT_FRACTIONS = (0.63, 0.07, 0.30)
METHODS = ("mll", "map", "prior")

_GPB_MAGIC = b"GPB1"
_GPB_HEADER = struct.Struct("<4sIII")


def _subset_hash(snapshot_set: SnapshotSet) -> str:
    ids = ",".join(str(s.mu.index) for s in snapshot_set.snapshots)
    return hashlib.sha256(ids.encode()).hexdigest()[:16]


def split(
    dataset: SnapshotSet,
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
) -> tuple[SnapshotSet, SnapshotSet, SnapshotSet]:
    """Contiguous train/calibration/test split in sequence order.

    Sizes: floor for train and test, remainder to calibration, so the default
    fractions reproduce (472, 53, 225) at N = 750. Any empty subset is an
    error.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {fractions}")
    n = len(dataset)
    n_train = int(np.floor(fractions[0] * n))
    n_test = int(np.floor(fractions[2] * n))
    n_calib = n - n_train - n_test
    if min(n_train, n_calib, n_test) < 1:
        raise DataError(
            f"split of {n} snapshots gives empty subset: "
            f"({n_train}, {n_calib}, {n_test})"
        )
    train = dataset.subset(range(n_train))
    calib = dataset.subset(range(n_train, n_train + n_calib))
    test = dataset.subset(range(n_train + n_calib, n))
    for subset_set, tag, start in (
        (train, "train", 0),
        (calib, "calibration", n_train),
        (test, "test", n_train + n_calib),
    ):
        subset_set.manifest["subset"] = {
            "tag": tag,
            "position": [start, start + len(subset_set)],
            "hash": _subset_hash(subset_set),
        }
    return train, calib, test


@dataclass
class RomModel:
    """Deployable reduced-order model and its provenance."""

    basis: pod.ReducedBasis
    gps: list[gpr.GpModel]
    method: str
    normalization: dict
    split_manifest: dict
    priors_audit: dict | None
    space: ParameterSpace
    grid: Grid
    channel: str
    config: dict = field(default_factory=dict)

    @property
    def L(self) -> int:
        return self.basis.L

    def training_summary(self) -> list[dict]:
        """Per-mode hyperparameters and optimizer cost."""
        rows = []
        for l, gp in enumerate(self.gps, start=1):
            theta = gp.theta
            rows.append(
                {
                    "mode": l,
                    "noise_var": theta.noise_var,
                    "signal_var": theta.signal_var,
                    "lengthscales": list(theta.lengthscales),
                    "noise_to_signal": theta.noise_var / theta.signal_var,
                    "iterations": gp.diagnostics.get("total_iterations", 0),
                }
            )
        return rows

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.basis.save(directory / "basis")
        inputs = self.gps[0].inputs
        with open(directory / "gps.bin", "wb") as fh:
            fh.write(_GPB_HEADER.pack(_GPB_MAGIC, inputs.shape[0], inputs.shape[1],
                                      len(self.gps)))
            fh.write(np.ascontiguousarray(inputs, dtype="<f8").tobytes())
            for gp in self.gps:
                fh.write(np.ascontiguousarray(gp.targets, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(gp.alpha, dtype="<f8").tobytes())
        gps_meta = []
        for gp in self.gps:
            theta = gp.theta.to_dict()
            gps_meta.append(
                {
                    "theta": theta,
                    "theta_checksum": _theta_checksum(theta),
                    "jitter": gp.jitter,
                    "diagnostics": gp.diagnostics,
                }
            )
        meta = {
            "format": "plumerom-model-1",
            "method": self.method,
            "normalization": self.normalization,
            "split_manifest": self.split_manifest,
            "priors_audit": self.priors_audit,
            "space": self.space.to_dict(),
            "grid": self.grid.to_dict(),
            "channel": self.channel,
            "config": self.config,
            "gps": gps_meta,
        }
        with open(directory / "model.json", "w") as fh:
            json.dump(meta, fh, indent=1)

    @classmethod
    def load(cls, directory) -> "RomModel":
        directory = Path(directory)
        with open(directory / "model.json") as fh:
            meta = json.load(fh)
        basis = pod.ReducedBasis.load(directory / "basis")
        with open(directory / "gps.bin", "rb") as fh:
            header = fh.read(_GPB_HEADER.size)
            magic, n_train, dim, n_gps = _GPB_HEADER.unpack(header)
            if magic != _GPB_MAGIC:
                raise DataError(f"{directory}/gps.bin: bad magic {magic!r}")
            data = np.frombuffer(fh.read(), dtype="<f8")
        expected = n_train * dim + 2 * n_gps * n_train
        if data.size != expected:
            raise DataError(f"{directory}/gps.bin: wrong payload size")
        inputs = data[: n_train * dim].reshape(n_train, dim).copy()
        rest = data[n_train * dim:].reshape(n_gps, 2, n_train)
        gps = []
        for l, gp_meta in enumerate(meta["gps"]):
            if _theta_checksum(gp_meta["theta"]) != gp_meta["theta_checksum"]:
                raise DataError(f"mode {l + 1}: hyperparameter checksum mismatch")
            theta = gpr.Hyperparameters.from_dict(gp_meta["theta"])
            model = gpr.fit_gp(inputs, rest[l, 0].copy(), theta,
                               diagnostics=gp_meta["diagnostics"])
            if not np.allclose(model.alpha, rest[l, 1], rtol=1e-6, atol=1e-8):
                raise DataError(f"mode {l + 1}: refactorized alpha disagrees with file")
            gps.append(model)
        return cls(
            basis=basis,
            gps=gps,
            method=meta["method"],
            normalization=meta["normalization"],
            split_manifest=meta["split_manifest"],
            priors_audit=meta["priors_audit"],
            space=ParameterSpace.from_dict(meta["space"]),
            grid=Grid.from_dict(meta["grid"]),
            channel=meta["channel"],
            config=meta.get("config", {}),
        )


def _theta_checksum(theta_dict: dict) -> str:
    payload = json.dumps(theta_dict, sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def _train_one_mode(method, inputs, targets, prior_set, seed, l, sq_diffs):
    if method == "mll":
        theta, diag = gpr.optimize_mll(
            inputs, targets, n_restarts=15,
            seed=np.random.SeedSequence((seed, l)), sq_diffs=sq_diffs,
        )
    elif method == "map":
        theta, diag = gpr.optimize_map(inputs, targets, prior_set, sq_diffs=sq_diffs)
    elif method == "prior":
        theta = prior_set.start_point()
        diag = {"method": "prior", "total_iterations": 0, "best_value": None,
                "converged": True, "jitter_events": 0, "wall_time": 0.0}
    else:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    return gpr.fit_gp(inputs, targets, theta, diagnostics=diag)


def train(
    train_set: SnapshotSet,
    calib_set: SnapshotSet | None,
    L: int,
    method: str = "map",
    seed: int = 0,
    *,
    n_jobs: int = 1,
    gp_on_union: bool = False,
) -> RomModel:
    """Fit the POD basis on the training split and one GP per retained mode.

    ``map`` and ``prior`` need a calibration split with half-window
    companions to set the priors. With ``gp_on_union`` the GP regressions use
    train + calibration points jointly (small-dataset regime) while the basis
    still comes from the training split alone.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    if method in ("map", "prior") and calib_set is None:
        raise ConfigError(f"method {method!r} requires a calibration split")

    basis = pod.fit(train_set, L)
    inputs = train_set.unit_inputs()
    targets = pod.project(basis, train_set.matrix())
    if gp_on_union and calib_set is not None:
        inputs = np.vstack([inputs, calib_set.unit_inputs()])
        targets = np.hstack([targets, pod.project(basis, calib_set.matrix())])

    priors_audit = None
    prior_sets: list[gpr.PriorSet | None] = [None] * L
    if method in ("map", "prior"):
        estimate = priors.estimate_noise(basis, calib_set)
        prior_sets = [priors.build_priors(l, estimate) for l in range(1, L + 1)]
        priors_audit = {
            "noise_estimate": estimate.to_dict(),
            "per_mode": [p.to_dict() for p in prior_sets],
        }

    sq_diffs = gpr._sq_diffs(inputs)
    jobs = [
        (method, inputs, targets[l], prior_sets[l], seed, l, sq_diffs)
        for l in range(L)
    ]
    if n_jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=n_jobs) as pool:
            gps = list(pool.map(lambda args: _train_one_mode(*args), jobs))
    else:
        gps = [_train_one_mode(*args) for args in jobs]

    split_manifest = {
        "train": train_set.manifest.get("subset", {"hash": _subset_hash(train_set)}),
        "calibration": None if calib_set is None
        else calib_set.manifest.get("subset", {"hash": _subset_hash(calib_set)}),
        "gp_on_union": gp_on_union,
        "n_train": len(train_set),
        "n_calibration": None if calib_set is None else len(calib_set),
    }
    normalization = {
        "u_tau_ref": train_set.manifest.get("u_tau_ref"),
        "H": 1.0,
        "Q_s": 1.0,
    }
    space = ParameterSpace.from_dict(train_set.manifest["space"])
    return RomModel(
        basis=basis,
        gps=gps,
        method=method,
        normalization=normalization,
        split_manifest=split_manifest,
        priors_audit=priors_audit,
        space=space,
        grid=train_set.grid,
        channel=train_set.channel,
        config={"L": L, "seed": seed, "method": method},
    )


def predict(model: RomModel, mu) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Field prediction at one parameter point.

    Accepts a ParameterSample or a physical 4-vector. Points outside the
    parameter space or inside the exclusion box are refused: the model is
    only validated over the sampled region.
    """
    if isinstance(mu, ParameterSample):
        sample = mu
    else:
        physical = np.asarray(mu, dtype=float)
        if not model.space.contains(physical):
            raise ConfigError(f"point {physical.tolist()} outside the parameter space")
        sample = to_physical(_unit_of(physical, model.space), model.space)
    if not model.space.contains(sample.physical):
        raise ConfigError(f"point {sample.physical.tolist()} outside the parameter space")
    if model.space.in_exclusion_box(sample.x_src, sample.z_src):
        raise ConfigError(
            f"source ({sample.x_src}, {sample.z_src}) inside the exclusion box"
        )
    coeff_mean, coeff_var = _posterior_coefficients(model, sample.unit[None, :])
    fld = pod.reconstruct(model.basis, coeff_mean[:, 0])
    return fld, coeff_mean[:, 0], coeff_var[:, 0]


def _unit_of(physical, space: ParameterSpace) -> np.ndarray:
    from .sampling import to_unit

    return to_unit(physical, space)


def _posterior_coefficients(model: RomModel, unit_points: np.ndarray):
    """Stacked per-mode posterior means/variances, shape (L, M)."""
    means = np.empty((model.L, unit_points.shape[0]))
    variances = np.empty_like(means)
    for l, gp in enumerate(model.gps):
        means[l], variances[l] = gpr.posterior_mean_var(gp, unit_points)
    return means, variances


def predict_fields(model: RomModel, unit_points: np.ndarray) -> np.ndarray:
    """Predicted fields for a batch of unit-cube points, shape (n_nodes, M)."""
    coeff_mean, _ = _posterior_coefficients(model, np.asarray(unit_points, dtype=float))
    return pod.reconstruct(model.basis, coeff_mean)


def q2_scores(true_values: np.ndarray, predicted: np.ndarray, axis: int = 1,
              mask_rtol: float = 1e-14) -> np.ndarray:
    """Explained-variance scores 1 - |err|^2 / |centered|^2 along ``axis``.

    Entries whose centered-variance denominator falls below ``mask_rtol``
    times the largest denominator come back NaN (undefined, not zero).
    """
    true_values = np.asarray(true_values, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    residual = np.sum((true_values - predicted) ** 2, axis=axis)
    centered = true_values - true_values.mean(axis=axis, keepdims=True)
    denom = np.sum(centered**2, axis=axis)
    out = np.full(np.shape(denom), np.nan)
    defined = denom > mask_rtol * (denom.max() if denom.size else 0.0)
    out[defined] = 1.0 - residual[defined] / denom[defined]
    return out


def q2_per_mode(model: RomModel, test_set: SnapshotSet) -> np.ndarray:
    """Per-mode Q2 of the GP means against projected test coefficients."""
    k_true = pod.project(model.basis, test_set.matrix())
    k_pred, _ = _posterior_coefficients(model, test_set.unit_inputs())
    return q2_scores(k_true, k_pred)


def q2_local(model: RomModel, test_set: SnapshotSet) -> np.ndarray:
    """Per-node Q2 of reconstructed fields over the evaluation set."""
    predicted = predict_fields(model, test_set.unit_inputs())
    return q2_scores(test_set.matrix(), predicted)


def q2_global(q2_local_values: np.ndarray, node_variance: np.ndarray) -> float:
    """Variance-weighted mean of the defined local Q2 entries."""
    q2_local_values = np.asarray(q2_local_values, dtype=float)
    node_variance = np.asarray(node_variance, dtype=float)
    defined = ~np.isnan(q2_local_values)
    weights = node_variance[defined]
    total = weights.sum()
    if total <= 0.0:
        raise DataError("no variance on unmasked nodes")
    return float(np.sum(weights * q2_local_values[defined]) / total)


def node_variance(matrix: np.ndarray) -> np.ndarray:
    """Unbiased per-node variance over the snapshot columns."""
    return np.asarray(matrix, dtype=float).var(axis=1, ddof=1)


@dataclass
class EvaluationReport:
    q2_per_mode: np.ndarray
    q2_local: np.ndarray
    q2_global: float
    dataset_tag: str
    split_hash: str
    n_samples: int
    node_weights: np.ndarray | None = None

    def summary_dict(self) -> dict:
        return {
            "dataset_tag": self.dataset_tag,
            "split_hash": self.split_hash,
            "n_samples": self.n_samples,
            "q2_global": self.q2_global,
            "q2_per_mode": [None if np.isnan(v) else float(v) for v in self.q2_per_mode],
        }

    def save(self, directory, nx: int, nz: int) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "q2_per_mode.csv", "w", newline="") as fh:
            fh.write("mode,q2\n")
            for l, value in enumerate(self.q2_per_mode, start=1):
                fh.write(f"{l},{'' if np.isnan(value) else repr(float(value))}\n")
        smx.write_smx(directory / "q2_local.smx", self.q2_local[:, None], nx, nz)
        if self.node_weights is not None:
            smx.write_smx(directory / "weights.smx", self.node_weights[:, None], nx, nz)
        with open(directory / "summary.json", "w") as fh:
            json.dump(self.summary_dict(), fh, indent=1)


def evaluate(model: RomModel, eval_set: SnapshotSet, tag: str = "test") -> EvaluationReport:
    """Full Q2 report of the model on an evaluation split.

    Weights and denominators both come from the evaluation ensemble, so each
    node's weighted contribution stays bounded even where the evaluation
    variance nearly vanishes. Guards against train/test leakage: evaluating a
    split whose hash equals the training split's under the ``test`` tag is an
    error.
    """
    eval_hash = eval_set.manifest.get("subset", {}).get("hash", _subset_hash(eval_set))
    train_hash = model.split_manifest.get("train", {}).get("hash")
    if tag == "test" and train_hash is not None and eval_hash == train_hash:
        raise DataError("evaluation split matches the training split (leakage)")
    matrix = eval_set.matrix()
    per_mode = q2_per_mode(model, eval_set)
    local = q2_scores(matrix, predict_fields(model, eval_set.unit_inputs()))
    weights = node_variance(matrix)
    return EvaluationReport(
        q2_per_mode=per_mode,
        q2_local=local,
        q2_global=q2_global(local, weights),
        dataset_tag=tag,
        split_hash=eval_hash,
        n_samples=len(eval_set),
        node_weights=weights,
    )


def robustness_sweep(
    dataset: SnapshotSet,
    train_sizes,
    L_grid=None,
    method: str = "map",
    seed: int = 0,
    *,
    n_jobs: int = 1,
) -> list[dict]:
    """Accuracy versus training-set size, on the fixed full-split test set.

    For each size the first ``size`` training snapshots are kept; 90% of them
    build the POD basis, the remaining 10% calibrate priors, and the GPs are
    fitted on all of them. Every admissible truncation L is scored on the
    test set; each row reports the Q2-optimal L.
    """
    full_train, _, test = split(dataset)
    results = []
    for size in train_sizes:
        if size < 10:
            raise ConfigError("robustness sweep needs train sizes >= 10")
        if size > len(full_train):
            raise ConfigError(f"size {size} exceeds training split {len(full_train)}")
        t0 = time.perf_counter()
        reduced = full_train.subset(range(size))
        n_pod = int(round(0.9 * size))
        pod_set = reduced.subset(range(n_pod))
        calib_set = reduced.subset(range(n_pod, size))
        pod_set.manifest["subset"] = {"tag": f"sweep-{size}-pod",
                                      "hash": _subset_hash(pod_set)}
        calib_set.manifest["subset"] = {"tag": f"sweep-{size}-calib",
                                        "hash": _subset_hash(calib_set)}
        l_max = n_pod - 1
        grid_l = [l for l in (L_grid or range(1, l_max + 1)) if 1 <= l <= l_max]
        if not grid_l:
            raise ConfigError(f"no admissible L for size {size} (max {l_max})")
        model = train(pod_set, calib_set, max(grid_l), method, seed,
                      n_jobs=n_jobs, gp_on_union=True)
        per_mode = q2_per_mode(model, test)
        coeff_mean, _ = _posterior_coefficients(model, test.unit_inputs())
        true_matrix = test.matrix()
        test_variance = node_variance(true_matrix)
        q2_by_l = {}
        for l in grid_l:
            truncated = _truncated_reconstruction(model.basis, coeff_mean, l)
            q2_by_l[l] = q2_global(q2_scores(true_matrix, truncated), test_variance)
        l_opt = max(q2_by_l, key=q2_by_l.get)
        results.append(
            {
                "size": size,
                "L_opt": l_opt,
                "q2_global": q2_by_l[l_opt],
                "q2_by_L": q2_by_l,
                "q2_per_mode": per_mode,
                "runtime": time.perf_counter() - t0,
            }
        )
    return results


def _truncated_reconstruction(basis: pod.ReducedBasis, coeff: np.ndarray, l: int):
    weighted = coeff[:l] * np.sqrt(basis.eigenvalues[:l])[:, None]
    return basis.modes[:, :l] @ weighted + basis.mean_field[:, None]
