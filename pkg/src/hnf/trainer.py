"""Layer-wise training loop with a certified non-increasing training cost.

The trainer never learns a weight matrix. Each step appends a fixed layer,
expands the training features, derives the new map's norm budget from the
previous map, and solves the ball-constrained least squares. The budget is
chosen so the previous map can be embedded verbatim into the new layer (the
witness), which makes the cost guarantee constructive: the solver result is
kept only if it beats the witness, otherwise the witness itself becomes the
layer's map. Either way the per-layer training cost cannot increase.

Test metrics are recorded per layer for reporting but never influence the
budgets or stopping: there is no cross-validation anywhere.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset
from .errors import (
    ConfigError,
    HnfError,
    ParameterError,
    ResourceError,
    SolverError,
    StateError,
)
from .layers import (
    ACTIVATIONS,
    DEFAULT_MEMORY_BUDGET,
    HnfLayer,
    HnfNetwork,
    layer_forward,
    network_invert,
    vn_expand,
    weight_perturbation_check,
)
from .matrixgen import (
    WeightMatrix,
    make_dct_orthonormal,
    make_random_orthonormal,
    make_raw_gaussian,
    verify_full_column_rank,
)
from .solvers import (
    AdmmConfig,
    OutputMap,
    admm_constrained_ls,
    embed_previous_map,
    epsilon_first_layer,
    epsilon_next_layer,
    least_squares,
    sample_cost,
)

WEIGHT_KINDS = ("random", "dct")
EPS_SCHEDULES = ("exact", "doubling")

#: Splitting penalties quoted for fixed feature scalings
#: (raw-Gaussian-scaled and unit-scaled features respectively). The
#: production default is data-scaled instead: see AdmmConfig.penalty.
QUOTED_PENALTIES = {"raw_gaussian_scale": 1e-7, "unit_scale": 1e2}

#: Slack for the non-increasing cost assertion.
MONOTONE_SLACK = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run depends on.

    ``n1`` is the first layer's pre-expansion width (the ELM width when
    ``elm_front``); ``depth`` counts layers including the ELM front.
    ``admm=None`` uses solver defaults (100 iterations, data-scaled
    penalty). ``width_rule`` maps (layer_number, fan_in) to the layer's
    pre-expansion width; the default keeps it equal to the fan-in for
    layers past the first.
    """

    n1: int
    depth: int
    weight_kind: str = "random"
    seed: int = 0
    elm_front: bool = False
    elm_activation: str = "relu"
    admm: AdmmConfig | None = None
    eps_schedule: str = "exact"
    width_rule: Callable[[int, int], int] | None = None
    memory_budget: int = DEFAULT_MEMORY_BUDGET
    standardize: bool = False

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.n1 < 1:
            raise ConfigError(f"n1 must be >= 1, got {self.n1}")
        if self.weight_kind not in WEIGHT_KINDS:
            raise ConfigError(
                f"weight_kind must be one of {WEIGHT_KINDS}, "
                f"got {self.weight_kind!r}"
            )
        if self.eps_schedule not in EPS_SCHEDULES:
            raise ConfigError(
                f"eps_schedule must be one of {EPS_SCHEDULES}, "
                f"got {self.eps_schedule!r}"
            )
        if self.elm_activation not in ACTIVATIONS:
            raise ConfigError(
                f"elm_activation must be one of {sorted(ACTIVATIONS)}, "
                f"got {self.elm_activation!r}"
            )
        if self.memory_budget < 1:
            raise ConfigError("memory_budget must be positive")
        if self.elm_front and self.depth < 2:
            raise ConfigError("an ELM front needs depth >= 2 to add a layer")

    def resolved_admm(self) -> AdmmConfig:
        return self.admm if self.admm is not None else AdmmConfig()

    def echo(self) -> dict:
        admm = self.resolved_admm()
        return {
            "n1": self.n1,
            "depth": self.depth,
            "weight_kind": self.weight_kind,
            "seed": self.seed,
            "elm_front": self.elm_front,
            "elm_activation": self.elm_activation,
            "eps_schedule": self.eps_schedule,
            "memory_budget": self.memory_budget,
            "standardize": self.standardize,
            "admm": {
                "iterations": admm.iterations,
                "penalty": admm.penalty,
                "tolerance": admm.tolerance,
                "warm_start": admm.warm_start,
            },
        }


@dataclass(frozen=True)
class LayerRecord:
    """One report row: the baseline or one expanding layer."""

    layer: int
    nodes_cumulative: int
    epsilon: float
    train_cost: float
    train_acc: float
    test_acc: float
    admm_iters: int
    wall_ms: int

    def as_dict(self) -> dict:
        eps = None if math.isinf(self.epsilon) else self.epsilon
        test = None if math.isnan(self.test_acc) else self.test_acc
        return {
            "layer": self.layer,
            "nodes_cumulative": self.nodes_cumulative,
            "epsilon": eps,
            "train_cost": self.train_cost,
            "train_acc": self.train_acc,
            "test_acc": test,
            "admm_iters": self.admm_iters,
            "wall_ms": self.wall_ms,
        }


_CSV_FIELDS = ("layer", "nodes_cumulative", "epsilon", "train_cost",
               "train_acc", "test_acc", "admm_iters", "wall_ms")


@dataclass(frozen=True)
class TrainReport:
    """Baseline plus per-layer records and the certification flag."""

    baseline: LayerRecord
    per_layer: list[LayerRecord]
    monotonicity_certified: bool
    meta: dict = field(default_factory=dict)

    def rows(self) -> list[LayerRecord]:
        return [self.baseline, *self.per_layer]

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.rows():
                fh.write(json.dumps(rec.as_dict()) + "\n")

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(_CSV_FIELDS) + "\n")
            for rec in self.rows():
                d = rec.as_dict()
                fh.write(",".join(
                    "" if d[k] is None else repr(d[k]) if isinstance(d[k], float)
                    else str(d[k]) for k in _CSV_FIELDS) + "\n")


def accuracy(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Fraction of columns whose argmax matches the one-hot target; ties
    resolve to the lowest class index."""
    if predictions.shape[1] == 0:
        return math.nan
    return float(np.mean(
        np.argmax(predictions, axis=0) == np.argmax(targets, axis=0)
    ))


def plan_widths(input_dim: int, cfg: TrainConfig) -> list[tuple[int, int, int]]:
    """Per expanding layer: (layer_number, pre-expansion width n, fan-in m).

    Without an ELM front, layer 1 maps the input (fan-in P) and every later
    layer's fan-in is double the previous width. With an ELM front the first
    expanding layer is layer 2 with fan-in n1.
    """
    rule = cfg.width_rule or (lambda layer, m: m)
    plan: list[tuple[int, int, int]] = []
    if cfg.elm_front:
        first, m = 2, cfg.n1
    else:
        first, m = 1, input_dim
    prev_n = None
    for layer in range(first, cfg.depth + 1):
        if prev_n is not None:
            m = 2 * prev_n
        n = cfg.n1 if layer == first and not cfg.elm_front else rule(layer, m)
        if n < m:
            raise ConfigError(
                f"layer {layer}: orthonormal weights need width n >= fan-in "
                f"m, got n={n} < m={m}"
            )
        plan.append((layer, n, m))
        prev_n = n
    return plan


def _make_weight(cfg: TrainConfig, n: int, m: int, layer: int) -> WeightMatrix:
    if cfg.weight_kind == "dct":
        return make_dct_orthonormal(n, m)
    return make_random_orthonormal(n, m, cfg.seed + layer)


def _standardize_params(x_train: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = x_train.mean(axis=1, keepdims=True)
    sigma = x_train.std(axis=1, keepdims=True)
    sigma[sigma == 0] = 1.0
    return mu, sigma


def apply_standardize(x: np.ndarray, mu, sigma) -> np.ndarray:
    return (x - np.asarray(mu)) / np.asarray(sigma)


def _check_budget(layer: int, dim: int, n_cols: int, budget: int) -> None:
    need = dim * n_cols * 8
    if need > budget:
        raise ResourceError(
            f"layer {layer}: feature matrix needs {need} bytes "
            f"({dim} x {n_cols} float64), over the {budget}-byte budget"
        )


def train(data: Dataset, cfg: TrainConfig) -> tuple[HnfNetwork, list[OutputMap], TrainReport]:
    """Run the full layer-wise pipeline on the dataset's train split.

    Returns the fixed network, the per-layer maps (baseline first), and the
    report. ``report.monotonicity_certified`` is True iff every layer's
    witness was feasible and every returned map is feasible with cost at
    most the witness's.
    """
    if data.meta["N_train"] < 1:
        raise ConfigError("dataset has an empty train split")
    if not cfg.elm_front and cfg.n1 < data.input_dim:
        raise ConfigError(
            f"orthonormal first layer needs n1 >= input dim, "
            f"got n1={cfg.n1} < P={data.input_dim}"
        )
    admm_cfg = cfg.resolved_admm()
    plan = plan_widths(data.input_dim, cfg)

    x_tr, t_tr = data.X_train, data.T_train
    x_te, t_te = data.X_test, data.T_test
    std_params = None
    if cfg.standardize:
        mu, sigma = _standardize_params(x_tr)
        x_tr = apply_standardize(x_tr, mu, sigma)
        x_te = apply_standardize(x_te, mu, sigma)
        std_params = {"mu": mu.ravel().tolist(), "sigma": sigma.ravel().tolist()}

    layers: list[HnfLayer] = []
    t0 = time.perf_counter()
    if cfg.elm_front:
        front_w = make_raw_gaussian(cfg.n1, data.input_dim, cfg.seed + 1)
        front = HnfLayer(front_w, expand=False, activation=cfg.elm_activation)
        layers.append(front)
        cur_tr = layer_forward(front, x_tr)
        cur_te = layer_forward(front, x_te)
        baseline = least_squares(cur_tr, t_tr, 0.0, layer_index=0)
        baseline_nodes = cfg.n1
    else:
        cur_tr, cur_te = x_tr, x_te
        baseline = least_squares(cur_tr, t_tr, 0.0, layer_index=0)
        baseline_nodes = 0
    baseline_rec = LayerRecord(
        layer=0,
        nodes_cumulative=baseline_nodes,
        epsilon=math.inf,
        train_cost=baseline.train_cost,
        train_acc=accuracy(baseline.matrix @ cur_tr, t_tr),
        test_acc=accuracy(baseline.matrix @ cur_te, t_te),
        admm_iters=0,
        wall_ms=int((time.perf_counter() - t0) * 1000),
    )

    maps: list[OutputMap] = [baseline]
    records: list[LayerRecord] = []
    certified = True
    prev_map = baseline
    prev_eps = math.nan
    nodes = baseline_nodes

    for i, (layer_no, n_l, m_l) in enumerate(plan):
        t0 = time.perf_counter()
        w = _make_weight(cfg, n_l, m_l, layer_no)
        _check_budget(layer_no, 2 * n_l, cur_tr.shape[1] + cur_te.shape[1],
                      cfg.memory_budget)

        if i == 0:
            eps = epsilon_first_layer(prev_map, w)
        elif cfg.eps_schedule == "doubling":
            eps = 2.0 * prev_eps
        else:
            eps = epsilon_next_layer(prev_map, w)

        witness = embed_previous_map(prev_map, w)
        witness_norm2 = float(np.sum(witness * witness))
        witness_feasible = witness_norm2 <= eps * (1.0 + 1e-9)

        cur_tr = vn_expand(w.entries @ cur_tr)
        cur_te = vn_expand(w.entries @ cur_te)
        witness_cost = sample_cost(t_tr, witness, cur_tr)

        init = witness if admm_cfg.warm_start else None
        try:
            solved = admm_constrained_ls(cur_tr, t_tr, eps, admm_cfg,
                                         initial=init, layer_index=layer_no)
        except HnfError:
            raise
        except Exception as exc:
            raise SolverError(f"layer {layer_no}: solver failed: {exc}") from exc
        diag = dict(solved.solver or {})
        diag["witness_cost"] = witness_cost
        if solved.train_cost > witness_cost:
            diag["fallback"] = "witness"
            diag["admm_cost"] = solved.train_cost
            solved = OutputMap(witness, eps, witness_cost, layer_no, diag)
        else:
            solved = OutputMap(solved.matrix, solved.epsilon,
                               solved.train_cost, layer_no, diag)

        final_norm2 = float(np.sum(solved.matrix * solved.matrix))
        certified = certified and witness_feasible
        certified = certified and solved.train_cost <= witness_cost + MONOTONE_SLACK
        certified = certified and final_norm2 <= eps * (1.0 + 1e-6)

        nodes += 2 * n_l
        layers.append(HnfLayer(w))
        maps.append(solved)
        records.append(LayerRecord(
            layer=layer_no,
            nodes_cumulative=nodes,
            epsilon=eps,
            train_cost=solved.train_cost,
            train_acc=accuracy(solved.matrix @ cur_tr, t_tr),
            test_acc=accuracy(solved.matrix @ cur_te, t_te),
            admm_iters=int((solved.solver or {}).get("iterations", 0)),
            wall_ms=int((time.perf_counter() - t0) * 1000),
        ))
        prev_map = solved
        prev_eps = eps

    meta = {
        "dataset": dict(data.meta),
        "config": cfg.echo(),
        "standardize_params": std_params,
    }
    report = TrainReport(baseline_rec, records, certified, meta)
    return HnfNetwork(tuple(layers)), maps, report


@dataclass(frozen=True)
class Evaluation:
    cost: float
    accuracy: float


def evaluate(net: HnfNetwork, maps: list[OutputMap], data: Dataset,
             layer: int, split: str = "test",
             transform: tuple | None = None) -> Evaluation:
    """Cost and accuracy of the map at ``layer`` on the chosen split.

    ``layer`` 0 is the baseline (raw inputs, or the ELM features when the
    network has a front layer). ``transform`` is the (mu, sigma) pair used
    at training time, if standardization was on.
    """
    by_index = {m.layer_index: m for m in maps}
    if layer not in by_index:
        raise StateError(
            f"no map for layer {layer}; available: {sorted(by_index)}"
        )
    if split == "train":
        x, t = data.X_train, data.T_train
    elif split == "test":
        x, t = data.X_test, data.T_test
    else:
        raise ParameterError(f"split must be 'train' or 'test', got {split!r}")
    if x.shape[1] == 0:
        return Evaluation(math.nan, math.nan)
    if transform is not None:
        x = apply_standardize(x, *transform)

    n_net_layers = layer if layer > 0 else (1 if net.has_front else 0)
    feats = x
    for hl in net.layers[:n_net_layers]:
        feats = layer_forward(hl, feats)
    om = by_index[layer]
    return Evaluation(sample_cost(t, om.matrix, feats),
                      accuracy(om.matrix @ feats, t))


@dataclass(frozen=True)
class CheckResult:
    name: str
    count: int
    violations: int
    worst_margin: float
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.violations == 0


@dataclass(frozen=True)
class InvariantReport:
    trials: int
    checks: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def verify_invariants(net: HnfNetwork, data: Dataset, trials: int,
                      seed: int = 0) -> InvariantReport:
    """Empirically drive the network's structural guarantees on real inputs.

    Checks, over ``trials`` sampled input pairs and perturbations:

    * the per-layer distance sandwich (squared feature distance between
      half-to-the-l and one times the squared input distance);
    * squared-norm preservation through the full chain;
    * inversion round trip within 1e-6 relative error;
    * the weight-perturbation bound.

    Failures are reported, never raised. When the network has a non-expanding
    front layer, checks run on the expanding subchain behind it.
    """
    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")
    rng = np.random.Generator(np.random.PCG64(seed))

    if net.has_front:
        sub = HnfNetwork(net.layers[1:])
        base = layer_forward(net.layers[0], data.X)
        front_note = "checks run behind the non-expanding front layer"
    else:
        sub = net
        base = data.X
        front_note = ""
    n = base.shape[1]
    orthonormal = all(l.weight.orthonormal for l in sub.layers)
    invertible = all(l.expand and verify_full_column_rank(l.weight)
                     for l in net.layers[1 if net.has_front else 0:])

    slack = 1e-9
    lower_viol = upper_viol = norm_viol = invert_viol = perturb_viol = 0
    worst_low = worst_up = worst_norm = worst_inv = worst_pert = math.inf

    for _ in range(trials):
        i = int(rng.integers(n))
        x1 = base[:, i]
        if rng.random() < 0.5:
            x2 = base[:, int(rng.integers(n))]
        else:
            x2 = x1 + rng.standard_normal(x1.shape) * (
                0.1 * (np.linalg.norm(x1) + 1.0))
        d2 = float(np.sum((x1 - x2) ** 2))

        f1, f2 = [x1], [x2]
        for hl in sub.layers:
            f1.append(layer_forward(hl, f1[-1]))
            f2.append(layer_forward(hl, f2[-1]))

        if orthonormal and d2 > 0:
            for l in range(1, len(sub.layers) + 1):
                dl2 = float(np.sum((f1[l] - f2[l]) ** 2))
                low = (dl2 - d2 / 2 ** l) / d2
                up = (d2 - dl2) / d2
                worst_low = min(worst_low, low)
                worst_up = min(worst_up, up)
                # not-greater-or-equal also catches NaN features
                if not low >= -slack:
                    lower_viol += 1
                if not up >= -slack:
                    upper_viol += 1

        if orthonormal:
            nrm_in = float(np.sum(x1 ** 2))
            if nrm_in > 0:
                rel = abs(float(np.sum(f1[-1] ** 2)) - nrm_in) / nrm_in
                worst_norm = min(worst_norm, slack - rel)
                if not rel <= slack:
                    norm_viol += 1

        if invertible:
            try:
                x_rec = network_invert(sub, f1[-1])
                denom = float(np.linalg.norm(x1)) or 1.0
                rel = float(np.linalg.norm(x_rec - x1)) / denom
                worst_inv = min(worst_inv, 1e-6 - rel)
                if rel > 1e-6:
                    invert_viol += 1
            except Exception:
                invert_viol += 1
        else:
            invert_viol += 1

        li = int(rng.integers(len(sub.layers)))
        hl = sub.layers[li]
        dw = rng.standard_normal(hl.weight.entries.shape)
        dw *= rng.uniform(1e-6, 1.0) / max(np.linalg.norm(dw), 1e-30)
        chk = weight_perturbation_check(hl, dw, f1[li])
        margin = chk.rhs * (1.0 + 1e-9) - chk.lhs
        worst_pert = min(worst_pert, margin)
        if not chk.holds:
            perturb_viol += 1

    def result(name, viol, worst, note=""):
        if math.isinf(worst):
            worst = math.nan
        return CheckResult(name, trials, viol, worst,
                           note or front_note)

    skip_note = "" if orthonormal else "skipped: non-orthonormal weights"
    checks = [
        result("distance_sandwich_lower", lower_viol, worst_low, skip_note),
        result("distance_sandwich_upper", upper_viol, worst_up, skip_note),
        result("norm_preservation", norm_viol, worst_norm, skip_note),
        result("inversion_round_trip", invert_viol, worst_inv,
               "" if invertible else "network is not invertible"),
        result("weight_perturbation_bound", perturb_viol, worst_pert),
    ]
    return InvariantReport(trials, checks)
