"""Joint deletion/insertion mask optimization.

The main loop alternates a total-gradient computation (integrated gradients
for the deletion mask, the insertion mask, and their product, plus the
regularizer gradient routed through the product by the chain rule) with a
backtracking line search whose sufficient-decrease condition is evaluated
over the scaled-mask path rather than at the current mask alone. Masks are
projected onto [0, 1] after every update.

Variants mirror the ablation set: a deletion-only single mask, an
insertion-only single mask, and a "naive" single mask driven by the full
joint objective with both roles tied to one mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgumentError
from .grid import Grid
from .ig import IGConfig, ig_deletion, ig_insertion
from .models import ScoreModel
from .perturb import BaselineSpec, apply_mask, make_baseline
from .regularizers import RegularizerConfig, g_total

VARIANTS = ("igos_pp", "igos_deletion_only", "insertion_only", "naive_combined")


@dataclass(frozen=True)
class LineSearchConfig:
    alpha_init: float = 1.0
    shrink: float = 0.5
    armijo_beta: float = 0.1
    max_trials: int = 10
    fixed_step: bool = False

    def __post_init__(self):
        if self.alpha_init <= 0:
            raise InvalidArgumentError("alpha_init must be > 0")
        if not (0.0 < self.shrink < 1.0):
            raise InvalidArgumentError("shrink must lie in (0, 1)")
        if not (0.0 < self.armijo_beta < 1.0):
            raise InvalidArgumentError("armijo_beta must lie in (0, 1)")
        if self.max_trials < 1:
            raise InvalidArgumentError("max_trials must be >= 1")

    def to_dict(self) -> dict:
        return {"alpha_init": self.alpha_init, "shrink": self.shrink,
                "armijo_beta": self.armijo_beta, "max_trials": self.max_trials,
                "fixed_step": self.fixed_step}

    @staticmethod
    def from_dict(d: dict) -> "LineSearchConfig":
        return LineSearchConfig(**d)


@dataclass(frozen=True)
class OptimizerConfig:
    mask_h: int = 28
    mask_w: int = 28
    variant: str = "igos_pp"
    iterations: int = 15
    reg: RegularizerConfig = field(default_factory=RegularizerConfig)
    ig: IGConfig = field(default_factory=IGConfig)
    line_search: LineSearchConfig = field(default_factory=LineSearchConfig)
    baseline: BaselineSpec = field(default_factory=BaselineSpec)
    seed: int = 0
    low_confidence_floor: float = 0.01
    # Store per-iteration mask/gradient snapshots for post-hoc verification.
    record_states: bool = False

    def __post_init__(self):
        if self.mask_h < 1 or self.mask_w < 1:
            raise InvalidArgumentError("mask resolution must be positive")
        if self.variant not in VARIANTS:
            raise InvalidArgumentError(
                f"unknown variant {self.variant!r} (known: {', '.join(VARIANTS)})")
        if self.iterations < 1:
            raise InvalidArgumentError("iterations must be >= 1")

    def to_dict(self) -> dict:
        return {"mask_h": self.mask_h, "mask_w": self.mask_w, "variant": self.variant,
                "iterations": self.iterations, "reg": self.reg.to_dict(),
                "ig": self.ig.to_dict(), "line_search": self.line_search.to_dict(),
                "baseline": self.baseline.to_dict(), "seed": self.seed,
                "low_confidence_floor": self.low_confidence_floor,
                "record_states": self.record_states}

    @staticmethod
    def from_dict(d: dict) -> "OptimizerConfig":
        d = dict(d)
        d["reg"] = RegularizerConfig.from_dict(d["reg"])
        d["ig"] = IGConfig.from_dict(d["ig"])
        d["line_search"] = LineSearchConfig.from_dict(d["line_search"])
        d["baseline"] = BaselineSpec.from_dict(d["baseline"])
        return OptimizerConfig(**d)


@dataclass
class IterationRecord:
    step: int
    objective: float
    alpha: float
    trials: int
    masks_before: tuple[np.ndarray, ...] | None = None
    direction: tuple[np.ndarray, ...] | None = None
    masks_after: tuple[np.ndarray, ...] | None = None

    def summary(self) -> dict:
        return {"step": self.step, "objective": self.objective,
                "alpha": self.alpha, "trials": self.trials}


@dataclass
class HeatmapResult:
    mask_x: Grid
    mask_y: Grid
    mask_xy: Grid
    trace: list[IterationRecord]
    config: OptimizerConfig
    baseline: Grid
    initial_score: float
    final_objective: float
    low_confidence: bool


def _project(arr: np.ndarray) -> np.ndarray:
    return np.clip(arr, 0.0, 1.0)


def joint_objective(model: ScoreModel, image: Grid, baseline: Grid,
                    mask_x: Grid, mask_y: Grid, class_id: int,
                    reg: RegularizerConfig) -> float:
    """Noiseless joint deletion/insertion objective for a mask pair:
    f(blend(Mx)) - f(blend(1-My)) + f(blend(Mxy)) - f(blend(1-Mxy)) + g(Mxy)."""
    mxy = mask_x.data * mask_y.data
    images = [apply_mask(image, baseline, Grid(m)) for m in
              (mask_x.data, 1.0 - mask_y.data, mxy, 1.0 - mxy)]
    s = model.batch_score(images, class_id)
    gval, _ = g_total(Grid(mxy), image, reg)
    return float(s[0] - s[1] + s[2] - s[3] + gval)


def total_gradient(model: ScoreModel, image: Grid, baseline: Grid,
                   mask_x: Grid, mask_y: Grid, class_id: int,
                   cfg: OptimizerConfig) -> tuple[Grid, Grid, float]:
    """Descent direction for the mask pair plus the noiseless objective.

    The product-mask terms and the regularizer gradient reach each mask
    through the exact chain rule of the Hadamard product (multiplication by
    the other mask). Noise, when configured, is injected only into the two
    own-mask integrated gradients.
    """
    rng = np.random.default_rng(cfg.ig.seed)
    ig_x = replace(cfg.ig, seed=int(rng.integers(0, 2**63)))
    ig_y = replace(cfg.ig, seed=int(rng.integers(0, 2**63)))
    ig_clean = replace(cfg.ig, noise_sigma=0.0)

    mxy = Grid(mask_x.data * mask_y.data)
    gx_own = ig_deletion(model, image, baseline, mask_x, class_id, ig_x)
    gy_own = ig_insertion(model, image, baseline, mask_y, class_id, ig_y)
    d_del = ig_deletion(model, image, baseline, mxy, class_id, ig_clean)
    d_ins = ig_insertion(model, image, baseline, mxy, class_id, ig_clean)
    _, g_reg = g_total(mxy, image, cfg.reg)
    shared = d_del.data + d_ins.data + g_reg.data

    g_x = Grid(gx_own.data + shared * mask_y.data)
    g_y = Grid(gy_own.data + shared * mask_x.data)
    objective = joint_objective(model, image, baseline, mask_x, mask_y, class_id, cfg.reg)
    return g_x, g_y, objective


def line_search(objective_on_path, masks, direction, ls: LineSearchConfig,
                extra_accept=None) -> float:
    """Backtracking line search with the sufficient-decrease condition
    evaluated by ``objective_on_path`` (a path-summed objective).

    Tries alpha_init * shrink^t for t = 0..max_trials and returns the first
    (largest) alpha with objective_on_path(M - alpha*d) - objective_on_path(M)
    <= -alpha * armijo_beta * ||d||^2, or 0.0 when every trial fails.
    ``extra_accept``, when given, must also approve the candidate.
    """
    base = objective_on_path(masks)
    tg2 = sum(float(np.sum(d * d)) for d in direction)
    for t in range(ls.max_trials + 1):
        alpha = ls.alpha_init * ls.shrink ** t
        candidate = tuple(m - alpha * d for m, d in zip(masks, direction))
        if objective_on_path(candidate) - base <= -alpha * ls.armijo_beta * tg2:
            if extra_accept is None or extra_accept(candidate):
                return alpha
    return 0.0


class _PathEvaluator:
    """Caches (path_sum, endpoint_objective) per candidate mask tuple."""

    def __init__(self, fn):
        self.fn = fn
        self.cache = {}
        self.calls = 0

    def _entry(self, masks):
        key = tuple(np.asarray(m).tobytes() for m in masks)
        if key not in self.cache:
            self.cache[key] = self.fn(masks)
        return self.cache[key]

    def __call__(self, masks) -> float:
        self.calls += 1
        return self._entry(masks)[0]

    def endpoint(self, masks) -> float:
        return self._entry(masks)[1]


class _Variant:
    """Bundles the per-variant direction and path-objective computations."""

    def __init__(self, model, image, baseline, class_id, cfg: OptimizerConfig):
        self.model = model
        self.image = image
        self.baseline = baseline
        self.class_id = class_id
        self.cfg = cfg
        self.inv_baseline_pair = (baseline, image)

    def initial_masks(self) -> tuple[np.ndarray, ...]:
        ones = np.ones((self.cfg.mask_h, self.cfg.mask_w, 1))
        if self.cfg.variant == "igos_pp":
            return (ones, ones.copy())
        return (ones,)

    def direction(self, masks, iter_seed: int):
        cfg = self.cfg
        it_cfg = replace(cfg, ig=replace(cfg.ig, seed=iter_seed))
        if cfg.variant == "igos_pp":
            gx, gy, obj = total_gradient(self.model, self.image, self.baseline,
                                         Grid(masks[0]), Grid(masks[1]),
                                         self.class_id, it_cfg)
            return (gx.data, gy.data), obj
        if cfg.variant == "naive_combined":
            gx, gy, obj = total_gradient(self.model, self.image, self.baseline,
                                         Grid(masks[0]), Grid(masks[0]),
                                         self.class_id, it_cfg)
            return (gx.data + gy.data,), obj
        rng = np.random.default_rng(it_cfg.ig.seed)
        ig_noisy = replace(cfg.ig, seed=int(rng.integers(0, 2**63)))
        m = Grid(masks[0])
        _, g_reg = g_total(m, self.image, cfg.reg)
        if cfg.variant == "igos_deletion_only":
            own = ig_deletion(self.model, self.image, self.baseline, m,
                              self.class_id, ig_noisy)
        else:
            own = ig_insertion(self.model, self.image, self.baseline, m,
                               self.class_id, ig_noisy)
        d = own.data + g_reg.data
        _, endpoint = self._score_terms_eval((masks[0],), 1.0)
        return (d,), endpoint

    def _score_terms(self, masks, coef: float):
        """Blended images and regularizer value for one path coefficient."""
        cfg = self.cfg
        if cfg.variant == "igos_pp":
            mx, my = masks[0] * coef, masks[1] * coef
            mxy = mx * my
            imgs = [self._blend(mx), self._blend(1.0 - my),
                    self._blend(mxy), self._blend(1.0 - mxy)]
            signs = (1.0, -1.0, 1.0, -1.0)
            gval, _ = g_total(Grid(mxy), self.image, cfg.reg)
        elif cfg.variant == "naive_combined":
            m = masks[0] * coef
            mm = m * m
            imgs = [self._blend(m), self._blend(1.0 - m),
                    self._blend(mm), self._blend(1.0 - mm)]
            signs = (1.0, -1.0, 1.0, -1.0)
            gval, _ = g_total(Grid(mm), self.image, cfg.reg)
        elif cfg.variant == "igos_deletion_only":
            m = masks[0] * coef
            imgs = [self._blend(m)]
            signs = (1.0,)
            gval, _ = g_total(Grid(m), self.image, cfg.reg)
        else:  # insertion_only
            m = masks[0] * coef
            imgs = [self._blend(1.0 - m)]
            signs = (-1.0,)
            gval, _ = g_total(Grid(m), self.image, cfg.reg)
        return imgs, signs, gval

    def _blend(self, mask_arr: np.ndarray) -> Grid:
        return apply_mask(self.image, self.baseline, Grid(_project(mask_arr)))

    def _score_terms_eval(self, masks, coef: float):
        imgs, signs, gval = self._score_terms(masks, coef)
        scores = self.model.batch_score(imgs, self.class_id)
        val = float(np.dot(signs, scores) + gval)
        return val, val

    def path_fn(self, masks) -> tuple[float, float]:
        """(sum over s of the variant objective at (s/S)-scaled projected
        masks, endpoint value at s = S)."""
        steps = self.cfg.ig.steps
        projected = tuple(_project(m) for m in masks)
        all_imgs, all_signs, g_vals = [], [], []
        counts = []
        for s in range(1, steps + 1):
            imgs, signs, gval = self._score_terms(projected, s / steps)
            all_imgs.extend(imgs)
            all_signs.extend(signs)
            g_vals.append(gval)
            counts.append(len(imgs))
        scores = self.model.batch_score(all_imgs, self.class_id)
        total = 0.0
        endpoint = 0.0
        pos = 0
        for s_idx, n in enumerate(counts):
            term = float(np.dot(all_signs[pos:pos + n], scores[pos:pos + n]) + g_vals[s_idx])
            total += term
            if s_idx == len(counts) - 1:
                endpoint = term
            pos += n
        return total, endpoint


def optimize(model: ScoreModel, image: Grid, class_id: int,
             cfg: OptimizerConfig) -> HeatmapResult:
    """Run the mask optimization and return masks plus per-iteration trace.

    Masks start at all-ones; each iteration computes the total gradient,
    picks a step by backtracking line search (unless fixed_step), applies
    the projected update, and records the noiseless objective. A step is
    accepted only if the sufficient-decrease condition holds over the path
    sums and the endpoint objective does not increase.
    """
    if image.shape != (model.input_height, model.input_width, model.input_channels):
        raise InvalidArgumentError(
            f"image shape {image.shape} does not match model input")
    if cfg.mask_h > image.height or cfg.mask_w > image.width:
        raise InvalidArgumentError("mask resolution exceeds image resolution")

    baseline = make_baseline(image, cfg.baseline, cfg.seed)
    initial_score = float(model.score(image, class_id))
    variant = _Variant(model, image, baseline, class_id, cfg)
    masks = variant.initial_masks()
    rng = np.random.default_rng(cfg.seed)
    trace: list[IterationRecord] = []

    try:
        for k in range(cfg.iterations):
            iter_seed = int(rng.integers(0, 2**63))
            direction, _ = variant.direction(masks, iter_seed)
            evaluator = _PathEvaluator(variant.path_fn)

            if cfg.line_search.fixed_step:
                alpha = cfg.line_search.alpha_init
                trials = 0
                new_masks = tuple(_project(m - alpha * d)
                                  for m, d in zip(masks, direction))
                objective = variant._score_terms_eval(new_masks, 1.0)[1]
            else:
                base_endpoint = evaluator.endpoint(masks)

                def endpoint_not_worse(candidate):
                    return evaluator.endpoint(candidate) <= base_endpoint

                alpha = line_search(evaluator, masks, direction,
                                    cfg.line_search, extra_accept=endpoint_not_worse)
                trials = max(evaluator.calls - 1, 0)
                if alpha > 0.0:
                    candidate = tuple(m - alpha * d for m, d in zip(masks, direction))
                    objective = evaluator.endpoint(candidate)
                    new_masks = tuple(_project(m) for m in candidate)
                else:
                    objective = base_endpoint
                    new_masks = masks

            record = IterationRecord(step=k, objective=objective, alpha=alpha,
                                     trials=trials)
            if cfg.record_states:
                record.masks_before = tuple(m.copy() for m in masks)
                record.direction = tuple(d.copy() for d in direction)
                record.masks_after = tuple(m.copy() for m in new_masks)
            trace.append(record)
            masks = new_masks
    except Exception as err:
        err.partial_trace = trace
        raise

    if cfg.variant == "igos_pp":
        mask_x, mask_y = Grid(masks[0]), Grid(masks[1])
    elif cfg.variant == "igos_deletion_only":
        mask_x = Grid(masks[0])
        mask_y = Grid.ones(cfg.mask_h, cfg.mask_w)
    elif cfg.variant == "insertion_only":
        mask_x = Grid.ones(cfg.mask_h, cfg.mask_w)
        mask_y = Grid(masks[0])
    else:
        mask_x = mask_y = Grid(masks[0])
    mask_xy = Grid(mask_x.data * mask_y.data)

    final_objective = trace[-1].objective if trace else float("nan")
    return HeatmapResult(mask_x=mask_x, mask_y=mask_y, mask_xy=mask_xy,
                         trace=trace, config=cfg, baseline=baseline,
                         initial_score=initial_score,
                         final_objective=final_objective,
                         low_confidence=initial_score < cfg.low_confidence_floor)
