"""Colour-compatibility optimization of a pasted foreground.

The foreground ``F`` is recoloured per channel, ``c -> gain * c + bias``, and
composited over the background ``B``. The energy of an adjustment ``g`` is

    E(g) = -f(I_g) + w * reg(g)

where ``f`` is the realism network's log-odds on the composite ``I_g`` and
``reg`` penalizes both the colour change and unequal per-channel shifts
(roughly, hue change). ``I_g`` is never clamped inside the energy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import fmin_l_bfgs_b

from .imgcore import alpha_composite, resize_bilinear
from .realnet import NetworkParams, forward_score, preprocess, score_and_input_gradient

log = logging.getLogger(__name__)

DEFAULT_WEIGHT = 50.0
GAIN_BOUNDS = (0.2, 3.0)
BIAS_BOUNDS = (-0.5, 0.5)
_PAIRS = ((0, 1), (0, 2), (1, 2))


class ColorOptError(RuntimeError):
    def __init__(self, message: str, adjust: "ColorAdjust"):
        self.adjust = adjust
        super().__init__(f"{message} at {adjust}")


@dataclass(frozen=True)
class ColorAdjust:
    gains: tuple[float, float, float] = (1.0, 1.0, 1.0)
    biases: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @classmethod
    def identity(cls) -> "ColorAdjust":
        return cls()

    @classmethod
    def from_vector(cls, v) -> "ColorAdjust":
        v = [float(x) for x in v]
        return cls(tuple(v[:3]), tuple(v[3:6]))

    def as_vector(self) -> np.ndarray:
        return np.array([*self.gains, *self.biases], dtype=np.float64)

    def apply(self, pixels: np.ndarray) -> np.ndarray:
        return pixels * np.asarray(self.gains) + np.asarray(self.biases)

    def to_json(self) -> dict:
        return {"gains": list(self.gains), "biases": list(self.biases)}


@dataclass
class CompositeProblem:
    """Foreground pixels, background, alpha and regularizer weight."""

    fg: np.ndarray
    bg: np.ndarray
    alpha: np.ndarray
    w: float = DEFAULT_WEIGHT
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.fg = np.asarray(self.fg, dtype=np.float64)
        self.bg = np.asarray(self.bg, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.fg.shape != self.bg.shape or self.alpha.shape != self.fg.shape[:2]:
            raise ValueError(f"problem shapes differ: {self.fg.shape}, {self.bg.shape}, {self.alpha.shape}")
        if self.w < 0:
            raise ValueError("regularizer weight must be >= 0")

    def foreground(self) -> tuple[np.ndarray, np.ndarray]:
        """Foreground pixel colours ``(N, 3)`` and their alpha ``(N,)``."""
        if "fg" not in self._cache:
            sel = self.alpha > 0
            self._cache["fg"] = (self.fg[sel], self.alpha[sel])
        return self._cache["fg"]

    @property
    def n_fg(self) -> int:
        return len(self.foreground()[1])

    def network_terms(self, shape: tuple[int, int]):
        """``R(alpha*F)``, ``R(alpha)`` and ``R((1-alpha)*B)`` at the network
        resolution, with ``R`` the (linear) bilinear resize.

        The resized composite is then ``gains*R(alpha*F) + biases*R(alpha) +
        R((1-alpha)*B)``, so an energy evaluation never touches full-size
        images.
        """
        key = ("net", tuple(shape))
        if key not in self._cache:
            a = self.alpha[..., None]
            h, w = shape
            self._cache[key] = (resize_bilinear(a * self.fg, h, w),
                                resize_bilinear(np.repeat(a, 3, axis=2), h, w),
                                resize_bilinear((1.0 - a) * self.bg, h, w))
        return self._cache[key]

    def baseline(self) -> np.ndarray:
        """The cut-and-paste composite ``I_0``."""
        return alpha_composite(self.fg, self.bg, self.alpha)


def apply_adjust(g: ColorAdjust, problem: CompositeProblem, clamp: bool = False) -> np.ndarray:
    """``alpha * g(F) + (1 - alpha) * B``; clamped only if asked (final output)."""
    out = alpha_composite(g.apply(problem.fg), problem.bg, problem.alpha)
    return np.clip(out, 0.0, 1.0) if clamp else out


def _fg_terms(g: ColorAdjust, problem: CompositeProblem):
    c, a = problem.foreground()
    if not len(a):
        raise ValueError("problem has no foreground pixels")
    delta = (np.asarray(g.gains) - 1.0) * c + np.asarray(g.biases)
    return c, a, delta


def reg_penalty(g: ColorAdjust, problem: CompositeProblem) -> float:
    """Mean over foreground pixels of ``|I_g - I_0|_2`` plus the pairwise channel-shift terms."""
    c, a, delta = _fg_terms(g, problem)
    change = a * np.sqrt(np.sum(delta * delta, axis=1))
    hue = sum(np.abs(delta[:, i] - delta[:, j]) for i, j in _PAIRS)
    return float(np.mean(change + hue))


def reg_gradient(g: ColorAdjust, problem: CompositeProblem) -> np.ndarray:
    """Sub-gradient of :func:`reg_penalty` in ``(gains, biases)``; 0 at kinks."""
    c, a, delta = _fg_terms(g, problem)
    norm = np.sqrt(np.sum(delta * delta, axis=1))
    safe = np.where(norm > 0, norm, 1.0)
    d_delta = np.where(norm[:, None] > 0, a[:, None] * delta / safe[:, None], 0.0)
    for i, j in _PAIRS:
        s = np.sign(delta[:, i] - delta[:, j])
        d_delta[:, i] += s
        d_delta[:, j] -= s
    n = len(c)
    return np.concatenate([np.sum(d_delta * c, axis=0), np.sum(d_delta, axis=0)]) / n


def _small_composite(params: NetworkParams, g: ColorAdjust, problem: CompositeProblem):
    terms = problem.network_terms(params.input_shape[:2])
    return terms, terms[0] * np.asarray(g.gains) + terms[1] * np.asarray(g.biases) + terms[2]


def energy(params: NetworkParams, g: ColorAdjust, problem: CompositeProblem) -> float:
    _, small = _small_composite(params, g, problem)
    score = forward_score(params, small)
    # no foreground: I_g does not depend on g and the regularizer is empty
    reg = reg_penalty(g, problem) if problem.w and problem.n_fg else 0.0
    return -score + problem.w * reg


def energy_and_gradient(params: NetworkParams, g: ColorAdjust, problem: CompositeProblem) -> tuple[float, np.ndarray]:
    (a_fg, a_one, _), small = _small_composite(params, g, problem)
    score, gimg = score_and_input_gradient(params, small)
    d_score = np.concatenate([np.sum(gimg * a_fg, axis=(0, 1)), np.sum(gimg * a_one, axis=(0, 1))])
    e = -score
    grad = -d_score
    if problem.w and problem.n_fg:
        e += problem.w * reg_penalty(g, problem)
        grad = grad + problem.w * reg_gradient(g, problem)
    return float(e), grad


def energy_gradient(params: NetworkParams, g: ColorAdjust, problem: CompositeProblem) -> np.ndarray:
    """``dE/d(gains, biases)``: network input gradient chained through the composite, plus the regularizer."""
    return energy_and_gradient(params, g, problem)[1]


# ---------------------------------------------------------------- optimization

@dataclass(frozen=True)
class OptimizeOptions:
    starts: int = 8
    seed: int = 0
    gain_bounds: tuple[float, float] = GAIN_BOUNDS
    bias_bounds: tuple[float, float] = BIAS_BOUNDS
    init_gain: tuple[float, float] = (0.7, 1.3)
    init_bias: tuple[float, float] = (-0.15, 0.15)
    history: int = 10
    pgtol: float = 1e-5
    max_iterations: int = 200
    factr: float = 1e7  # scipy default: stop once relative progress is ~1e-9


@dataclass
class AdjustResult:
    adjust: ColorAdjust
    energy: float
    energy_identity: float
    trace: list[dict] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return sum(t["iterations"] for t in self.trace)

    def report(self) -> dict:
        return {"g": self.adjust.to_json(), "E_identity": self.energy_identity, "E_star": self.energy,
                "starts": len(self.trace), "iterations": self.iterations}


def start_points(opts: OptimizeOptions) -> list[np.ndarray]:
    rng = np.random.default_rng(opts.seed)
    pts = [ColorAdjust.identity().as_vector()]
    for _ in range(opts.starts - 1):
        pts.append(np.concatenate([rng.uniform(*opts.init_gain, 3), rng.uniform(*opts.init_bias, 3)]))
    return pts


def optimize_color(params: NetworkParams, problem: CompositeProblem,
                   opts: OptimizeOptions = OptimizeOptions()) -> AdjustResult:
    """Multi-start L-BFGS-B over the six adjustment parameters.

    The identity is always the first start; the lowest energy seen over all
    starts wins (ties go to the earlier start).
    """
    if opts.starts < 1:
        raise ValueError("need at least one start")
    bounds = [opts.gain_bounds] * 3 + [opts.bias_bounds] * 3
    best_x, best_e = None, np.inf
    e_identity = None
    trace = []
    for k, x0 in enumerate(start_points(opts)):
        seen = {"x": None, "e": np.inf}

        def fun(x):
            g = ColorAdjust.from_vector(x)
            e, grad = energy_and_gradient(params, g, problem)
            if not (np.isfinite(e) and np.all(np.isfinite(grad))):
                raise ColorOptError("non-finite energy", g)
            if e < seen["e"]:
                seen["x"], seen["e"] = np.array(x, dtype=np.float64), e
            return e, grad

        x0 = np.clip(x0, [b[0] for b in bounds], [b[1] for b in bounds])
        _, _, info = fmin_l_bfgs_b(fun, x0, bounds=bounds, m=opts.history, pgtol=opts.pgtol,
                                   maxiter=opts.max_iterations, factr=opts.factr)
        if k == 0:
            # first evaluation of the first start is the identity
            e_identity = energy(params, ColorAdjust.identity(), problem)
        trace.append({"start": k, "energy": seen["e"], "iterations": int(info["nit"]),
                      "evaluations": int(info["funcalls"]), "g": ColorAdjust.from_vector(seen["x"]).to_json()})
        if seen["e"] < best_e:
            best_x, best_e = seen["x"], seen["e"]
    return AdjustResult(ColorAdjust.from_vector(best_x), float(best_e), float(e_identity), trace)


# ---------------------------------------------------------------- baseline

def reinhard_match(problem: CompositeProblem) -> ColorAdjust:
    """Per-channel gain/bias matching foreground mean/std to the background's.

    Foreground = ``alpha > 0``; background = ``alpha == 0``. A channel with zero
    foreground spread keeps gain 1 and only shifts its mean.
    """
    fg_sel = problem.alpha > 0
    bg_sel = ~fg_sel
    if fg_sel.sum() < 2 or bg_sel.sum() < 2:
        raise ValueError("need at least two foreground and two background pixels")
    f = problem.fg[fg_sel]
    b = problem.bg[bg_sel]
    mf, sf = f.mean(axis=0), f.std(axis=0)
    mb, sb = b.mean(axis=0), b.std(axis=0)
    lam = np.where(sf > 0, sb / np.where(sf > 0, sf, 1.0), 1.0)
    return ColorAdjust(tuple(float(v) for v in lam), tuple(float(v) for v in mb - lam * mf))


# ---------------------------------------------------------------- hard negative mining

@dataclass(frozen=True)
class MiningConfig:
    """Per-round settings: how many composites to recolour and how to retrain."""

    samples: int = 40
    w: float = 0.0
    starts: int = 2
    max_iterations: int = 60
    retrain_iterations: int = 1000
    seed: int = 0


@dataclass
class MiningRound:
    params: NetworkParams
    mined: np.ndarray  # recoloured composites, clamped, at problem resolution
    source_index: np.ndarray  # which problems were recoloured


def mine_hard_negatives(params0: NetworkParams, problems: list[CompositeProblem], train_images: np.ndarray,
                        train_labels: np.ndarray, rounds: int, cfg: MiningConfig, train_cfg) -> list[MiningRound]:
    """Recolour composites against the current model, add the results as
    composite-labelled data, retrain, repeat.

    Entry 0 is the unmodified input model (with no mined set); entries
    1..rounds are the retrained models and the negatives mined against the
    previous model. Retraining continues from the current weights.
    """
    from dataclasses import replace

    from .realnet import train_arrays

    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if not problems:
        raise ValueError("no composite problems to mine from")
    rng = np.random.default_rng(cfg.seed)
    images = np.asarray(train_images, dtype=np.float32)
    labels = np.asarray(train_labels, dtype=np.float64)
    out = [MiningRound(params0, np.zeros((0,) + problems[0].fg.shape), np.zeros(0, dtype=int))]
    current = params0
    for r in range(1, rounds + 1):
        pick = np.sort(rng.choice(len(problems), size=min(cfg.samples, len(problems)), replace=False))
        mined = []
        opts = OptimizeOptions(starts=cfg.starts, seed=int(rng.integers(2**31)), max_iterations=cfg.max_iterations)
        for i in pick:
            prob = CompositeProblem(problems[i].fg, problems[i].bg, problems[i].alpha, cfg.w)
            res = optimize_color(current, prob, opts)
            mined.append(apply_adjust(res.adjust, prob, clamp=True))
        mined = np.stack(mined)
        small = np.stack([preprocess(m, current) for m in mined]).astype(np.float32)
        images = np.concatenate([images, small])
        labels = np.concatenate([labels, np.zeros(len(small))])
        tcfg = replace(train_cfg, max_iterations=cfg.retrain_iterations, seed=int(rng.integers(2**31)))
        current = train_arrays(current, images, labels, tcfg, log_every=0).params
        log.info("mining round %d: %d negatives added", r, len(small))
        out.append(MiningRound(current, mined, pick))
    return out
