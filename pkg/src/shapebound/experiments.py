"""Scenario-driven matching runs, pose metrics and confusion matrices.

A scenario is a JSON document describing how to synthesise (or where to load)
the input image, which priors to use, the hypothesis grid and the engine
settings.  ``run_experiment`` turns one into a self-contained report.
"""

from __future__ import annotations

import copy
import itertools
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import foam
from .bounds import extract_discrete_shape, extract_semidiscrete_shape, init_many
from .errors import EmptyMetricsError, InvalidConfigurationError
from .field import (
    BernoulliField,
    ClampPolicy,
    NoiseSpec,
    apply_noise,
    binary_shape_to_probability,
    from_probabilities,
)
from .glyphs import embed, render
from .hypotheses import (
    HypothesisGrid,
    PriorCache,
    PriorClass,
    ScaleTranslate,
    enumerate_hypotheses,
    load_prior_bundle,
)
from .pgm import load_probability_image, save_probability_image
from .summaries import DEFAULT_M, build_tables

# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsSummary:
    mu_t: float
    sigma_t: float
    mu_s: float
    sigma_s: float
    tau: Optional[float] = None
    solution_count: int = 0


def pose_metrics(solutions, truth: ScaleTranslate, tau: Optional[float] = None) -> MetricsSummary:
    """Translation bias/RMS in pixels and scale bias/RMS in percent."""
    sols = list(solutions)
    if not sols:
        raise EmptyMetricsError("pose metrics need at least one solution")
    dt = np.array([[s.tx - truth.tx, s.ty - truth.ty] for s in sols], dtype=np.float64)
    ds = np.array([[s.sx / truth.sx - 1.0, s.sy / truth.sy - 1.0] for s in sols], dtype=np.float64)
    return MetricsSummary(
        mu_t=float(np.linalg.norm(dt.mean(axis=0))),
        sigma_t=float(np.sqrt((dt**2).sum(axis=1).mean())),
        mu_s=100.0 * float(np.linalg.norm(ds.mean(axis=0))),
        sigma_s=100.0 * float(np.sqrt((ds**2).sum(axis=1).mean())),
        tau=tau,
        solution_count=len(sols),
    )


def solution_filter(solutions, beta: float) -> list:
    """Keep solutions whose upper bound reaches ``L + beta * (U - L)``.

    ``solutions`` holds dicts (or objects) with ``lower`` and ``upper``;
    ``L``/``U`` are the greatest lower/upper bound among them.
    """
    sols = list(solutions)
    if not sols or beta == 0:
        return sols
    get = (lambda s, k: s[k]) if isinstance(sols[0], dict) else getattr
    lo = max(get(s, "lower") for s in sols)
    up = max(get(s, "upper") for s in sols)
    thr = lo + beta * (up - lo)
    if beta == 1:
        thr = up
    return [s for s in sols if get(s, "upper") >= thr]


@dataclass
class ConfusionMatrix:
    beta: float
    classes: list
    counts: np.ndarray  # raw pooled solution counts, rows = true class
    p_total: float

    @property
    def fractions(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, self.counts / np.maximum(rows, 1), 0.0)

    def to_csv(self) -> str:
        lines = ["true_class," + ",".join(self.classes)]
        for c, row in zip(self.classes, self.fractions):
            lines.append(c + "," + ",".join(f"{v:.6f}" for v in row))
        return "\n".join(lines) + "\n"


def confusion(runs, beta: float, classes: Optional[list] = None) -> ConfusionMatrix:
    """Pool solution counts over images; ``runs`` is a list of ``(true_class, solutions)``.

    Each solution carries ``class_id``, ``lower`` and ``upper``.
    """
    runs = list(runs)
    if classes is None:
        seen = {c for c, _ in runs}
        for _, sols in runs:
            seen.update(s["class_id"] for s in sols)
        classes = sorted(seen)
    idx = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for true, sols in runs:
        for s in solution_filter(sols, beta):
            counts[idx[true], idx[s["class_id"]]] += 1
    total = counts.sum()
    p = float(np.trace(counts) / total) if total else float("nan")
    return ConfusionMatrix(beta, list(classes), counts, p)


# ---------------------------------------------------------------------------
# matching


@dataclass
class MatchOutcome:
    result: foam.FoamResult
    hypotheses: list
    bounds: list
    image_field: BernoulliField
    cache: PriorCache

    def solution_rows(self) -> list:
        rows = []
        for hid in self.result.solutions:
            h = self.hypotheses[hid]
            lo, up = self.result.bounds[hid]
            t = h.transform
            rows.append({"id": hid, "class_id": h.class_id, "sx": t.sx, "sy": t.sy, "tx": t.tx, "ty": t.ty, "lower": lo, "upper": up})
        return rows

    def best(self) -> int:
        """Solution with the greatest upper bound (lowest id on ties)."""
        return max(self.result.solutions, key=lambda h: (self.bounds[h].upper, -h))


def match(image_field: BernoulliField, priors, grid: HypothesisGrid, config: Optional[foam.FoamConfig] = None, m: int = DEFAULT_M, observer=None) -> MatchOutcome:
    """Enumerate, initialise (batched per scaled prior) and schedule all hypotheses."""
    config = config or foam.FoamConfig()
    policy = image_field.policy
    img_tables = build_tables(image_field, m)
    hyps = enumerate_hypotheses(grid, image_field.width, image_field.height)
    cache = PriorCache(list(priors), policy, m)
    bounders = []
    for key, group in itertools.groupby(hyps, key=lambda h: (h.class_id, h.transform.sx, h.transform.sy)):
        tp = cache.get(*key)
        bounders.extend(init_many(img_tables, tp.tables, list(group), tp.z_ticks, config.rho))
    result = foam.run(bounders, config, observer)
    return MatchOutcome(result, hyps, bounders, image_field, cache)


# ---------------------------------------------------------------------------
# scenarios

DEFAULT_ENGINE = {
    "m": DEFAULT_M,
    "delta_max": "auto",
    "strategy": "potential_reduction",
    "max_cycles": None,
    "parallel": 1,
    "alpha": 0.9,
    "beta": 0.25,
    "rho": 1.2,
}


def load_scenario(path) -> dict:
    try:
        sc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise InvalidConfigurationError(f"{path}: not valid JSON ({e})") from e
    sc.setdefault("base_dir", str(Path(path).resolve().parent))
    return sc


def _size(v) -> tuple:
    return (int(v), int(v)) if np.isscalar(v) else (int(v[0]), int(v[1]))


def _engine(sc: dict) -> dict:
    eng = dict(DEFAULT_ENGINE)
    eng.update(sc.get("engine", {}))
    return eng


def scenario_policy(sc: dict) -> ClampPolicy:
    dm = _engine(sc)["delta_max"]
    if dm == "auto":
        img = sc.get("image", {})
        fg, bg = img.get("fg_p", 0.98), img.get("bg_p", 0.02)
        if math.isclose(fg + bg, 1.0) and fg > 0.5 and fg < 1.0:
            return ClampPolicy.for_levels(fg)
        return ClampPolicy()
    return ClampPolicy(float(dm))


def synthesize(sc: dict) -> tuple:
    """Return ``(image, truth_mask)`` for a scenario's ``image`` section."""
    spec = sc.get("image")
    if spec is None:
        raise InvalidConfigurationError("scenario has no image section")
    if "path" in spec:
        img, _ = load_probability_image(Path(sc.get("base_dir", ".")) / spec["path"])
        return img, None
    w, h = _size(spec.get("size", [spec.get("width", 0), spec.get("height", 0)]))
    if w < 1 or h < 1:
        raise InvalidConfigurationError("image size must be positive")
    mask = np.zeros((h, w), dtype=bool)
    for obj in spec.get("objects", []):
        g = render(obj["glyph"], _size(obj["size"]), **obj.get("variant", {}))
        mask |= embed(g, w, h, int(obj["tx"]), int(obj["ty"]))
    img = binary_shape_to_probability(mask, spec.get("fg_p", 0.98), spec.get("bg_p", 0.02))
    for i, nz in enumerate(spec.get("noise", [])):
        nz = dict(nz)
        nz.setdefault("seed", int(sc.get("seed", 0)) + i)
        img = apply_noise(img, NoiseSpec.from_json(nz))
    return img, mask


def scenario_priors(sc: dict) -> list:
    ps = sc.get("priors")
    if ps is None:
        raise InvalidConfigurationError("scenario has no priors section")
    if "bundle" in ps:
        path = Path(sc.get("base_dir", ".")) / ps["bundle"]
        if not path.exists():
            raise InvalidConfigurationError(f"prior bundle {path} does not exist")
        return load_prior_bundle(path)[0]
    img = sc.get("image", {})
    fg, bg = ps.get("fg_p", img.get("fg_p", 0.98)), ps.get("bg_p", img.get("bg_p", 0.02))
    size = _size(ps["size"])
    return [PriorClass(g, binary_shape_to_probability(render(g, size), fg, bg)) for g in ps["glyphs"]]


def scenario_grid(sc: dict, priors) -> HypothesisGrid:
    g = sc.get("grid", {})

    def rng(v):
        if v is None:
            return None
        if isinstance(v, dict):
            return tuple(range(int(v["start"]), int(v["stop"]) + 1, int(v.get("step", 1))))
        return tuple(int(x) for x in v)

    return HypothesisGrid(
        classes=tuple(priors),
        sx=tuple(float(s) for s in g.get("sx", [1.0])),
        sy=tuple(float(s) for s in g.get("sy", [1.0])),
        tx=rng(g.get("tx")),
        ty=rng(g.get("ty")),
        translations=tuple(tuple(int(v) for v in t) for t in g["translations"]) if g.get("translations") is not None else None,
    )


def scenario_truth(sc: dict) -> Optional[tuple]:
    """``(class_id, ScaleTranslate)`` of the generating object, when known."""
    t = sc.get("truth")
    if t is None:
        objs = sc.get("image", {}).get("objects", [])
        if not objs:
            return None
        o = objs[0]
        t = {"class": o["glyph"], "tx": o["tx"], "ty": o["ty"]}
    return t.get("class"), ScaleTranslate(float(t.get("sx", 1.0)), float(t.get("sy", 1.0)), int(t["tx"]), int(t["ty"]))


def foam_config(sc: dict, record_trace: bool = True) -> foam.FoamConfig:
    e = _engine(sc)
    return foam.FoamConfig(
        alpha=float(e["alpha"]),
        beta=float(e["beta"]),
        rho=float(e["rho"]),
        max_cycles=e["max_cycles"],
        strategy=e["strategy"],
        parallel=int(e["parallel"]),
        record_trace=record_trace,
    )


def apply_overrides(sc: dict, **kw) -> dict:
    """Copy of ``sc`` with engine settings replaced by the non-None keywords."""
    sc = copy.deepcopy(sc)
    eng = sc.setdefault("engine", {})
    for k, v in kw.items():
        if v is None:
            continue
        if k == "seed":
            sc["seed"] = v
        else:
            eng[k] = v
    return sc


def run_experiment(sc: dict, out_dir=None, record_trace: bool = True) -> dict:
    """Synthesise, match, measure; write artefacts to ``out_dir`` when given."""
    t0 = time.perf_counter()
    policy = scenario_policy(sc)
    img, _ = synthesize(sc)
    priors = scenario_priors(sc)
    grid = scenario_grid(sc, priors)
    eng = _engine(sc)
    field_ = from_probabilities(img, policy)
    out = match(field_, priors, grid, foam_config(sc, record_trace), int(eng["m"]))
    res = out.result
    rows = out.solution_rows()
    truth = scenario_truth(sc)
    report = {
        "scenario": {k: v for k, v in sc.items() if k != "base_dir"},
        "delta_max": policy.delta_max,
        "result": {
            "status": res.status,
            "gamma": res.gamma,
            "n_hypotheses": res.n_hypotheses,
            "n_cycles": res.n_cycles,
            "total_bound_pairs": res.total_bound_pairs,
            "tau": res.tau,
            "solutions": rows,
            "discards_during_refinement": [[c, h] for c, h in res.discards if c > 0],
        },
        "seconds": None,
        "artifacts": {},
    }
    if truth is not None:
        cls, pose = truth
        report["truth"] = {"class": cls, "sx": pose.sx, "sy": pose.sy, "tx": pose.tx, "ty": pose.ty}
        report["metrics"] = asdict(pose_metrics([out.hypotheses[h].transform for h in res.solutions], pose, res.tau))
        report["truth_in_solutions"] = any(
            out.hypotheses[h].class_id == cls and out.hypotheses[h].transform == pose for h in res.solutions
        )
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        best = out.bounds[out.best()]
        w, h = field_.width, field_.height
        arts = {
            "input": str(save_probability_image(d / "input.pgm", img, policy.delta_max, {"scenario": sc.get("name")})),
            "discrete_shape": str(extract_discrete_shape(best).save(d / "best_discrete.pgm", w, h)),
            "semidiscrete_shape": str(extract_semidiscrete_shape(best).save(d / "best_semidiscrete.pgm", w, h)),
        }
        if record_trace:
            res.write_trace(d / "trace.jsonl")
            arts["trace"] = str(d / "trace.jsonl")
        report["artifacts"] = arts
    report["seconds"] = time.perf_counter() - t0
    if out_dir is not None:
        (Path(out_dir) / "report.json").write_text(json.dumps(report, indent=2, default=_json_default))
    return report


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def oracle_rows(sc: dict) -> list:
    """Exact evidence of every hypothesis, by full pixel scan."""
    from .bounds import exact_evidence, exact_evidence_ticks

    policy = scenario_policy(sc)
    img, _ = synthesize(sc)
    priors = scenario_priors(sc)
    grid = scenario_grid(sc, priors)
    f = from_probabilities(img, policy)
    hyps = enumerate_hypotheses(grid, f.width, f.height)
    cache = PriorCache(priors, policy, int(_engine(sc)["m"]))
    rows = []
    for h in hyps:
        tp = cache.get(h.class_id, h.transform.sx, h.transform.sy)
        rows.append((h, exact_evidence_ticks(f, tp.field, h.support_img), exact_evidence(f, tp.field, h.support_img)))
    best = max(r[1] for r in rows)
    return [
        {
            "hypothesis_id": h.id,
            "class_id": h.class_id,
            "sx": h.transform.sx,
            "sy": h.transform.sy,
            "tx": h.transform.tx,
            "ty": h.transform.ty,
            "exact_evidence": ev,
            "is_argmax": int(t == best),
        }
        for h, t, ev in rows
    ]


def scale_scenario(sc: dict, k: int) -> dict:
    """The same scene at ``k`` times the resolution (sizes and positions scaled)."""
    sc = copy.deepcopy(sc)
    img = sc["image"]
    if "path" in img:
        raise InvalidConfigurationError("only synthetic scenarios can be rescaled")
    w, h = _size(img.get("size", [img.get("width", 0), img.get("height", 0)]))
    img.pop("width", None)
    img.pop("height", None)
    img["size"] = [w * k, h * k]
    for o in img.get("objects", []):
        o["size"] = [v * k for v in _size(o["size"])]
        o["tx"] *= k
        o["ty"] *= k
    if "priors" in sc and "size" in sc["priors"]:
        sc["priors"]["size"] = [v * k for v in _size(sc["priors"]["size"])]
    g = sc.get("grid", {})
    if g.get("translations") is not None:
        g["translations"] = [[tx * k, ty * k] for tx, ty in g["translations"]]
    for ax in ("tx", "ty"):
        v = g.get(ax)
        if isinstance(v, list):
            g[ax] = [x * k for x in v]
        elif isinstance(v, dict):
            g[ax] = {"start": v["start"] * k, "stop": v["stop"] * k, "step": v.get("step", 1) * k}
    if "truth" in sc:
        sc["truth"]["tx"] *= k
        sc["truth"]["ty"] *= k
    return sc
