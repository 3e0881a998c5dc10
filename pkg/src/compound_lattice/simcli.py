"""Experiment harness and command-line interface.

Every experiment is driven by a flat ``key=value`` configuration file (``#``
starts a comment).  Outputs are CSV files whose first lines echo the full
configuration as ``#`` comments, followed by a header row that names units.
Given the same configuration and seed, outputs are byte-identical for any
number of worker threads.

Configuration keys
------------------
experiment      capacity | fer | construct | bounds
chain           zsqrt2 (default) or z2, the binary chain eta R^i Z^2 with
                R = [[1, 1], [1, -1]], scaled to the same volumes
eta, depth      chain scaling and number of coded levels
inv_sigma2_db   1/sigma^2 in dB, sigma being the per-dimension noise std
h_min, h_max, h_points
                log-spaced fading grid; h_max = 0 means sqrt(1 + sqrt 2)
h_values        explicit fading values (overrides the grid)
levels          levels to report (default: all)
n_samples       Monte-Carlo samples per capacity / Bhattacharyya estimate
N, k            polar block length (= T) and number of chained blocks
target_fer      per-state union-bound budget used by the construction
variant         chained | bec
bound           bhattacharyya (default) | error: what the chained construction
                sums against target_fer (the BEC variant always uses
                Bhattacharyya parameters)
rate_caps       per-level rate ceilings in bits (missing levels: 1)
n_codewords     genie-aided SC runs per level and state in the construction
code            serialized code for ``fer`` (constructed on the fly if empty)
vnr_db          grid of distances to the Poltyrev limit, dB
states          fading values simulated by ``fer`` (default: h1, h2)
max_errors, max_blocks, batch_frames
                FER stopping rule and batch size (frames of k blocks)
decoder         known (receiver uses its knowledge of H to order the chained
                blocks) | agnostic (both orders, smaller path metric wins)
h_samples       number of random h for ``bounds``
seed, out, workers
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from . import __version__
from .algebra import FadingRealization, PartitionChain, extreme_channels
from .channelcap import (
    bhattacharyya,
    capacity_bound_check,
    coset_llr,
    level_capacity,
    mc_mean,
    partition_capacity,
    sigma_from_db,
)
from .lattice import LatticeBasis, sigma_for_distance_db
from .mlcodec import (
    MultilevelCode,
    block_errors,
    design_multilevel,
    encode,
    multistage_decode,
    prop1_error_bound,
    random_message,
    rate_accounting,
    state_for_fading,
)

EXPERIMENTS = ("capacity", "fer", "construct", "bounds")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class SimConfig:
    experiment: str = "capacity"
    chain: str = "zsqrt2"
    eta: float = 0.5
    depth: int = 3
    inv_sigma2_db: float = 10.5
    h_min: float = 1.0
    h_max: float = 0.0
    h_points: int = 33
    h_values: list[float] = field(default_factory=list)
    levels: list[int] = field(default_factory=list)
    n_samples: int = 200_000
    N: int = 1024
    k: int = 4
    target_fer: float = 1e-3
    variant: str = "chained"
    bound: str = "bhattacharyya"
    rate_caps: list[float] = field(default_factory=list)
    n_codewords: int = 1000
    code: str = ""
    vnr_db: list[float] = field(default_factory=lambda: [1.6, 1.8, 2.0, 2.2])
    states: list[float] = field(default_factory=list)
    max_errors: int = 100
    max_blocks: int = 100_000
    batch_frames: int = 64
    decoder: str = "known"
    h_samples: int = 10
    seed: int = 0
    out: str = ""
    workers: int = 1

    def __post_init__(self):
        self.validate()

    # -- parsing ---------------------------------------------------------

    @classmethod
    def from_text(cls, text: str, **overrides) -> "SimConfig":
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in kinds:
                raise ValueError(f"line {lineno}: unknown or malformed entry {raw.strip()!r}")
            values[key] = _convert(kinds[key], value, key)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def from_file(cls, path, **overrides) -> "SimConfig":
        return cls.from_text(Path(path).read_text(), **overrides)

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}")
        if self.chain not in ("zsqrt2", "z2"):
            raise ValueError("chain must be zsqrt2 or z2")
        if self.variant not in ("chained", "bec"):
            raise ValueError("variant must be chained or bec")
        if self.bound not in ("bhattacharyya", "error"):
            raise ValueError("bound must be bhattacharyya or error")
        if self.decoder not in ("known", "agnostic"):
            raise ValueError("decoder must be known or agnostic")
        if not self.eta > 0 or self.depth < 1:
            raise ValueError("need eta > 0 and depth >= 1")
        if self.N < 2 or self.N & (self.N - 1):
            raise ValueError("N must be a power of two >= 2")
        if self.k < 1 or self.h_points < 1 or self.n_samples < 2 or self.workers < 1:
            raise ValueError("k, h_points, n_samples and workers must be positive")
        if not 0 < self.target_fer < 1:
            raise ValueError("target_fer must lie in (0, 1)")
        if self.max_errors < 1 or self.max_blocks < 1 or self.batch_frames < 1:
            raise ValueError("FER stopping rule needs positive counts")
        if any(not 0 <= i < self.depth for i in self.levels):
            raise ValueError("levels must lie in [0, depth)")
        if any(not h > 0 for h in self.h_values + self.states) or not self.h_min > 0:
            raise ValueError("fading values must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def echo(self) -> list[str]:
        """Configuration as ``key=value`` lines (worker count and output path excluded)."""
        out = []
        for f in dataclasses.fields(self):
            if f.name in ("workers", "out"):
                continue
            v = getattr(self, f.name)
            out.append(f"{f.name}={','.join(map(repr, v)) if isinstance(v, list) else v}")
        return out

    # -- derived quantities ----------------------------------------------

    @property
    def sigma(self) -> float:
        return sigma_from_db(self.inv_sigma2_db)

    @property
    def level_list(self) -> list[int]:
        return self.levels or list(range(self.depth))

    @property
    def h_grid(self) -> np.ndarray:
        if self.h_values:
            return np.array(self.h_values, dtype=float)
        hi = self.h_max if self.h_max > 0 else extreme_channels()[1]
        return np.exp(np.linspace(math.log(self.h_min), math.log(hi), self.h_points))

    @property
    def state_list(self) -> list[float]:
        return self.states or list(extreme_channels())

    def partition_chain(self) -> PartitionChain:
        return PartitionChain(self.eta, self.depth)


def _convert(kind: str, value: str, key: str):
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "str":
            return value
        items = [v.strip() for v in value.split(",") if v.strip()]
        if kind == "list[int]":
            return [int(v) for v in items]
        if kind == "list[float]":
            return [float(v) for v in items]
    except ValueError as exc:
        raise ValueError(f"{key}: cannot parse {value!r}") from exc
    raise TypeError(f"unsupported config type {kind}")


# ---------------------------------------------------------------------------
# output


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.10g}"
    return str(x)


def write_csv(cfg: SimConfig, header: list[str], rows, path=None) -> str:
    buf = io.StringIO()
    buf.write(f"# compound_lattice {__version__}\n")
    for line in cfg.echo():
        buf.write(f"# {line}\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    text = buf.getvalue()
    if path:
        Path(path).write_text(text)
    return text


def _text_report(cfg: SimConfig, lines: list[str], path=None) -> str:
    text = "".join(f"# {ln}\n" for ln in cfg.echo()) + "\n".join(lines) + "\n"
    if path:
        Path(path).write_text(text)
    return text


def _seed(cfg: SimConfig, *key: int) -> int:
    """Independent 63-bit seed for a sub-experiment identified by ``key``."""
    return int(np.random.SeedSequence(cfg.seed, spawn_key=key).generate_state(2, np.uint64)[0] >> np.uint64(1))


# ---------------------------------------------------------------------------
# capacity sweep


R_MATRIX = np.array([[1.0, 1.0], [1.0, -1.0]])


def z2_chain(eta: float, depth: int) -> tuple[list[LatticeBasis], list[np.ndarray]]:
    """Bases eta' R^i Z^2 and coset representatives eta' R^i e1, i = 0..depth.

    ``eta'`` matches the level volumes of the Z[sqrt2] chain with the same ``eta``.
    """
    s = eta * 2.0**0.75
    bases, reps = [], []
    M = np.eye(2)
    for _ in range(depth + 1):
        bases.append(LatticeBasis(s * M))
        reps.append(s * M[:, 0])
        M = R_MATRIX @ M
    return bases, reps


def _z2_estimates(cfg: SimConfig, level: int, h: float, seed: int):
    bases, reps = z2_chain(cfg.eta, cfg.depth)
    f = FadingRealization(float(h))
    top, bottom = f.apply(bases[level]), f.apply(bases[level + 1])
    rep = f.diagonal * reps[level]
    sigma = cfg.sigma
    cap = partition_capacity(top, bottom, sigma, cfg.n_samples, seed)

    def z_sample(rng, count):
        w = rng.normal(0.0, sigma, size=(2, count))
        return np.exp(-0.5 * coset_llr(bottom, rep, sigma, w))

    z, z_se, _ = mc_mean(z_sample, cfg.n_samples, seed)
    return cap.bits, cap.stderr, z, z_se


def cmd_capacity_sweep(cfg: SimConfig, workers: int | None = None) -> str:
    """CSV of per-level capacity and the BEC-surrogate rate 1 - Z over the h grid."""
    workers = workers or cfg.workers
    chain = cfg.partition_chain()
    sigma = cfg.sigma
    tasks = [(hi, h, lv) for hi, h in enumerate(cfg.h_grid) for lv in cfg.level_list]

    def run(task):
        hi, h, lv = task
        # every h shares the noise stream of its level (common random numbers)
        seed = _seed(cfg, 1, lv)
        if cfg.chain == "z2":
            return _z2_estimates(cfg, lv, h, seed)
        f = FadingRealization(float(h))
        c = level_capacity(chain, lv, f, sigma, cfg.n_samples, seed)
        z = bhattacharyya(chain, lv, f, sigma, cfg.n_samples, seed)
        return c.bits, c.stderr, z.z, z.stderr

    results = _map(run, tasks, workers)
    rows = [
        (h, lv, bits, se, 1.0 - z, z_se)
        for (hi, h, lv), (bits, se, z, z_se) in zip(tasks, results)
    ]
    header = ["h", "level", "capacity_bits", "stderr_bits", "bec_rate_bits", "bec_rate_stderr_bits"]
    return write_csv(cfg, header, rows, cfg.out)


def _map(fn, items, workers: int):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# ---------------------------------------------------------------------------
# construction


def construct(cfg: SimConfig, workers: int | None = None):
    chain = cfg.partition_chain()
    return design_multilevel(
        chain,
        cfg.sigma,
        cfg.N,
        cfg.k,
        cfg.target_fer,
        cfg.variant,
        tuple(cfg.state_list),
        cfg.rate_caps or None,
        cfg.n_codewords,
        cfg.n_samples,
        _seed(cfg, 2),
        workers or cfg.workers,
        cfg.bound,
    )


def cmd_construct(cfg: SimConfig, workers: int | None = None) -> tuple[str, str]:
    """Serialized code and construction report.

    The code is written to ``out`` and the report to ``out + '.report'``.
    Raises if the target budget admits no information bits at all.
    """
    code, report = construct(cfg, workers)
    if sum(code.n_info) == 0:
        raise ValueError(f"target_fer={cfg.target_fer:g} is infeasible at N={cfg.N}: every index frozen")
    text = code.dumps()
    rep = _text_report(cfg, report.lines())
    if cfg.out:
        Path(cfg.out).write_text(text)
        Path(cfg.out + ".report").write_text(rep)
    return text, rep


# ---------------------------------------------------------------------------
# FER simulation


@dataclass
class FerPoint:
    vnr_db: float
    state: float
    trials: int
    errors: int
    sigma: float

    @property
    def fer(self) -> float:
        return self.errors / self.trials if self.trials else float("nan")

    @property
    def wilson_ci(self) -> tuple[float, float]:
        ci = binomtest(self.errors, self.trials).proportion_ci(confidence_level=0.95, method="wilson")
        return float(ci.low), float(ci.high)


def _fer_batch(code: MultilevelCode, fading: FadingRealization, sigma: float, frames: int, seed: int, hint):
    rng = np.random.default_rng(seed)
    X = encode(code, random_message(code, rng, frames))
    Y = fading.diagonal[:, None] * X + rng.normal(0.0, sigma, size=X.shape)
    res = multistage_decode(Y, fading, sigma, code, hint)
    return int(block_errors(X, res.x_hat, code.T).sum())


def simulate_fer(
    code: MultilevelCode,
    fading: FadingRealization,
    sigma: float,
    max_errors: int = 100,
    max_blocks: int = 100_000,
    batch_frames: int = 64,
    seed: int = 0,
    workers: int = 1,
    decoder: str = "known",
) -> tuple[int, int]:
    """Block errors and blocks simulated, each frame being ``k`` blocks of ``T`` columns.

    Batches are seeded by index and accumulated in index order; simulation
    stops after the first batch at which ``max_errors`` is reached or the
    block budget is spent, so the counts do not depend on ``workers``.
    """
    hint = state_for_fading(fading) if decoder == "known" else None
    frames_total = -(-max_blocks // code.k)
    n_batches = -(-frames_total // batch_frames)
    root = np.random.SeedSequence(seed)
    errors = blocks = 0
    b = 0
    with ThreadPoolExecutor(max_workers=workers) if workers > 1 else _Serial() as pool:
        while b < n_batches and errors < max_errors:
            idx = list(range(b, min(b + workers, n_batches)))
            sizes = [min(batch_frames, frames_total - i * batch_frames) for i in idx]
            seeds = [_batch_seed(root, i) for i in idx]
            outs = list(pool.map(lambda a: _fer_batch(code, fading, sigma, *a, hint), zip(sizes, seeds)))
            for size, e in zip(sizes, outs):
                errors += e
                blocks += size * code.k
                b += 1
                if errors >= max_errors:
                    break
    return errors, blocks


def _batch_seed(root: np.random.SeedSequence, i: int) -> int:
    return int(np.random.SeedSequence(root.entropy, spawn_key=(i,)).generate_state(1)[0])


class _Serial:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False

    @staticmethod
    def map(fn, items):
        return map(fn, items)


def load_or_construct(cfg: SimConfig, workers: int | None = None) -> MultilevelCode:
    if cfg.code:
        code = MultilevelCode.loads(Path(cfg.code).read_text())
        if code.chain.eta != cfg.eta:
            raise ValueError("code file and config disagree on eta")
        return code
    return construct(cfg, workers)[0]


def fer_sweep(cfg: SimConfig, code: MultilevelCode, workers: int | None = None) -> list[FerPoint]:
    workers = workers or cfg.workers
    logvol = rate_accounting(code, cfg.sigma).logvol
    points = []
    for gi, gap in enumerate(cfg.vnr_db):
        sigma = sigma_for_distance_db(logvol, gap)
        for si, h in enumerate(cfg.state_list):
            e, n = simulate_fer(
                code,
                FadingRealization(h),
                sigma,
                cfg.max_errors,
                cfg.max_blocks,
                cfg.batch_frames,
                _seed(cfg, 3, gi, si),
                workers,
                cfg.decoder,
            )
            points.append(FerPoint(gap, h, n, e, sigma))
    return points


def cmd_fer_sweep(cfg: SimConfig, workers: int | None = None) -> str:
    """CSV of per-state block error rates over the distance-to-Poltyrev grid."""
    code = load_or_construct(cfg, workers)
    pts = fer_sweep(cfg, code, workers)
    rows = [(p.vnr_db, p.state, p.sigma, p.fer, *p.wilson_ci, p.errors, p.trials) for p in pts]
    header = ["vnr_db", "state_h", "sigma", "fer", "ci_low", "ci_high", "errors", "trials"]
    return write_csv(cfg, header, rows, cfg.out)


def fer_crossing(points: list[FerPoint], target: float = 1e-3) -> float:
    """Distance (dB) at which log10 FER crosses ``target``, by a weighted straight-line fit.

    Points without errors enter through their upper Wilson limit; the fit
    uses log10 FER against dB with binomial weights.
    """
    x = np.array([p.vnr_db for p in points])
    f = np.array([p.fer if p.errors else p.wilson_ci[1] for p in points])
    w = np.array([max(p.errors, 1) for p in points], dtype=float)
    slope, icpt = np.polyfit(x, np.log10(f), 1, w=np.sqrt(w))
    if slope > -1e-9:  # flat or increasing: no crossing
        return float("nan")
    return float((math.log10(target) - icpt) / slope)


# ---------------------------------------------------------------------------
# bound report


def cmd_bound_report(cfg: SimConfig, workers: int | None = None) -> str:
    """Capacity sandwich from the unit lattice at random h, and the Gaussian tail bound versus MC."""
    workers = workers or cfg.workers
    chain = cfg.partition_chain()
    sigma = cfg.sigma
    rng = np.random.default_rng(_seed(cfg, 4))
    h1, h2 = extreme_channels()
    hs = cfg.h_values or list(np.exp(rng.uniform(-math.log(h2) * 2, math.log(h2) * 2, cfg.h_samples)))
    rows = []
    for lv in cfg.level_list:
        rep = capacity_bound_check(chain, lv, sigma, hs, cfg.n_samples, _seed(cfg, 5, lv), workers)
        for r in rep.rows:
            rows.append(
                (
                    "capacity_sandwich",
                    lv,
                    r.h,
                    r.lower.bits,
                    r.value.bits,
                    r.upper.bits,
                    r.value.bits - r.lower.bits,
                    r.upper.bits - r.value.bits,
                    "pass" if r.ok else "FAIL",
                )
            )
    for lv in range(cfg.depth + 1):
        bound = prop1_error_bound(lv, cfg.eta, 1.0, sigma)
        d = math.sqrt(2.0 * cfg.eta**2 * 2.0**lv)
        tail = _norm_tail_mc(d / 2.0, sigma, cfg.n_samples, _seed(cfg, 6, lv), workers)
        ok = abs(tail[0] - bound) <= 3.0 * tail[1] + 1e-12
        rows.append(("tail_bound", lv, float("nan"), tail[0], bound, tail[1], bound - tail[0], float("nan"), "pass" if ok else "FAIL"))
    header = ["check", "level", "h", "lower_or_mc", "value", "upper_or_stderr", "margin_low", "margin_high", "result"]
    return write_csv(cfg, header, rows, cfg.out)


def _norm_tail_mc(radius: float, sigma: float, n: int, seed: int, workers: int) -> tuple[float, float]:
    def sample(rng, count):
        w = rng.normal(0.0, sigma, size=(2, count))
        return (np.einsum("ij,ij->j", w, w) >= radius * radius).astype(float)

    mean, se, _ = mc_mean(sample, n, seed, workers)
    return mean, se


# ---------------------------------------------------------------------------
# command line


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="compound-lattice", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="key=value configuration file")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--out", help="output path (stdout if omitted)")
        sp.add_argument("--threads", type=int, default=None, help="worker threads")
    return p


COMMANDS = {
    "capacity": cmd_capacity_sweep,
    "fer": cmd_fer_sweep,
    "construct": cmd_construct,
    "bounds": cmd_bound_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    text = args.config.read_text() if args.config else ""
    try:
        cfg = SimConfig.from_text(text, experiment=args.command, seed=args.seed, out=args.out, workers=args.threads)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    result = COMMANDS[args.command](cfg)
    if not cfg.out:
        sys.stdout.write(result if isinstance(result, str) else result[1])
    return 0
