"""Command-line driver: ``geointerp {datagen,train,sample,eval,bench}``.

Every command reads one INI config (plus ``--set section.key=value``
overrides) and writes into a run directory.  Without ``--run-dir`` a fresh
directory ``<root>/<config hash>-<timestamp>`` is created, where the root is
``$GEOINTERP_OUTPUT_ROOT`` or ``./runs``.  Each command leaves a copy of the
resolved config and the library version next to its outputs.  Outputs are
written to temporary names and renamed only when the command succeeds.

Run directory layout::

    config.ini  VERSION
    target.csv                   (datagen)
    velocity.ckpt  score.ckpt  loss.csv   (train)
    samples.csv  sample_info.txt (sample)
    metrics.txt                  (eval)
    slopes.txt  bench_errors.csv (bench)
"""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, int_list, load_config
from .distributions import (
    SampleSet,
    ingest_latlon_csv,
    load_samples,
    log_density_uniform,
    random_vmf_mixture,
    random_wrapped_mixture,
    sample_uniform,
    sample_vmf_mixture,
    sample_wrapped_gaussian_so3,
    save_samples,
)
from .errors import ConfigError, DegeneracyError, GeoInterpError
from .evaluation import MetricsReport, convergence_bench, kl_knn, w2_empirical
from .fields import FieldNet, PerturbedDrift
from .manifold import SO3, SPHERE, quaternion_to_rotation, s5_to_so3, so3_to_s5
from .samplers import nll_ode, sample
from .training import load_checkpoint, save_checkpoint, train

log = logging.getLogger("geointerp")

ENV_ROOT = "GEOINTERP_OUTPUT_ROOT"


# ---------------------------------------------------------------------------
# Routes
# ---------------------------------------------------------------------------


def prior_draw(route: str):
    """``prior(rng, m)`` on the sphere the route trains on."""
    if route == "s2":
        dim = 3
    elif route == "so3-es":
        dim = 6
    else:
        def haar(rng, m):
            q = rng.standard_normal((m, 4))
            q /= np.linalg.norm(q, axis=1, keepdims=True)
            return so3_to_s5(quaternion_to_rotation(q))
        return haar

    def uniform(rng, m):
        g = rng.standard_normal((m, dim))
        return g / np.linalg.norm(g, axis=1, keepdims=True)
    return uniform


def to_training_space(route: str, samples: SampleSet) -> np.ndarray:
    if route == "s2":
        if samples.manifold != SPHERE or samples.ambient_dim != 3:
            raise ConfigError("route s2 needs S^2 samples")
        return samples.points
    if samples.manifold != SO3:
        raise ConfigError(f"route {route} needs SO(3) samples")
    return so3_to_s5(samples.points)


def from_training_space(route: str, points: np.ndarray, seed=None, source="") -> SampleSet:
    if route == "s2":
        return SampleSet(SPHERE, points, seed, source)
    return SampleSet(SO3, s5_to_so3(points), seed, source)


# ---------------------------------------------------------------------------
# Output handling
# ---------------------------------------------------------------------------


class Outputs:
    """Collects temp files and renames them into place on success."""

    def __init__(self, run_dir: Path, cfg: RunConfig):
        self.run_dir = run_dir
        self.cfg = cfg
        self.pending: list[tuple[Path, Path]] = []

    def path(self, name: str) -> Path:
        final = self.run_dir / name
        tmp = self.run_dir / f".{name}.partial"
        self.pending.append((tmp, final))
        return tmp

    def commit(self) -> None:
        (self.run_dir / "config.ini").write_text(self.cfg.to_ini(), encoding="utf-8")
        (self.run_dir / "VERSION").write_text(__version__ + "\n", encoding="utf-8")
        for tmp, final in self.pending:
            os.replace(tmp, final)
        self.pending.clear()

    def discard(self) -> None:
        for tmp, _ in self.pending:
            tmp.unlink(missing_ok=True)
        self.pending.clear()


def resolve_run_dir(args, cfg: RunConfig) -> tuple[Path, bool]:
    if args.run_dir:
        path = Path(args.run_dir)
        created = not path.exists()
    else:
        root = Path(os.environ.get(ENV_ROOT, "runs"))
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = root / f"{cfg.digest()}-{stamp}"
        created = True
    path.mkdir(parents=True, exist_ok=True)
    return path, created


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"missing {what}: {path}")
    return path


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_datagen(cfg: RunConfig, out: Outputs) -> SampleSet:
    t = cfg["target"]
    seed = cfg.seed
    threads = cfg["run"]["threads"]
    kind = t["kind"]
    if kind == "uniform":
        data = sample_uniform(SPHERE if cfg.route == "s2" else SO3, t["count"], seed, threads=threads)
    elif kind == "vmf":
        spec = random_vmf_mixture(t["components"], t["concentration"], seed)
        data = sample_vmf_mixture(spec, t["count"], seed, threads)
    elif kind == "wrapped":
        spec = random_wrapped_mixture(t["components"], t["concentration"], seed)
        data = sample_wrapped_gaussian_so3(spec, t["count"], seed, threads)
    elif kind == "csv":
        data = ingest_latlon_csv(t["path"])
    else:
        data = load_samples(t["path"])
    to_training_space(cfg.route, data)  # route consistency check
    save_samples(out.path("target.csv"), data)
    return data


def _build_nets(cfg: RunConfig):
    n = cfg["net"]
    d = cfg.ambient_dim
    vnet = FieldNet.create(d, cfg.hidden, n["activation"], n["time_freqs"], seed=cfg.seed + 10)
    snet = None
    if n["train_score"]:
        snet = FieldNet.create(d, cfg.hidden, n["score_activation"], n["time_freqs"], seed=cfg.seed + 11)
    return vnet, snet


def cmd_train(cfg: RunConfig, out: Outputs):
    data = load_samples(_require(out.run_dir / "target.csv", "target samples (run datagen first)"))
    pts = to_training_space(cfg.route, data)
    vnet, snet = _build_nets(cfg)
    result = train(vnet, snet, prior_draw(cfg.route), pts, cfg.train_config())
    save_checkpoint(out.path("velocity.ckpt"), result.velocity)
    if result.score is not None:
        save_checkpoint(out.path("score.ckpt"), result.score)
    result.trace.to_csv(out.path("loss.csv"))
    return result


def _load_drift(cfg: RunConfig, run_dir: Path, need_score: bool) -> PerturbedDrift:
    d = cfg.ambient_dim
    vnet = load_checkpoint(_require(run_dir / "velocity.ckpt", "velocity checkpoint (run train first)"),
                           ambient_dim=d)
    score = None
    spath = run_dir / "score.ckpt"
    if spath.exists():
        score = load_checkpoint(spath, ambient_dim=d)
    elif need_score:
        raise ConfigError("stochastic sampling with epsilon > 0 needs a score checkpoint")
    return PerturbedDrift(vnet, score, 0.0)


def cmd_sample(cfg: RunConfig, out: Outputs):
    scfg = cfg.sampler_config()
    _, eps, _ = scfg.resolved()
    drift = _load_drift(cfg, out.run_dir, eps > 0)
    rng = np.random.default_rng(cfg.seed + 2)
    x0 = prior_draw(cfg.route)(rng, cfg["sample"]["count"])
    res = sample(drift, x0, scfg)
    gen = from_training_space(cfg.route, res.points, scfg.seed, f"generated:{res.scheme}")
    save_samples(out.path("samples.csv"), gen)
    with open(out.path("sample_info.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"scheme={res.scheme}\nepsilon={res.epsilon!r}\ndegraded={str(res.degraded).lower()}\n")
        fh.write(f"clamp_events={res.clamp_events}\n")
        for w in res.warnings:
            fh.write(f"warning={w}\n")
    return res


def cmd_eval(cfg: RunConfig, out: Outputs, generated=None, reference=None) -> MetricsReport:
    gen_path = Path(generated) if generated else out.run_dir / "samples.csv"
    ref_path = Path(reference) if reference else out.run_dir / "target.csv"
    gen = load_samples(_require(gen_path, "generated samples"))
    ref = load_samples(_require(ref_path, "reference samples"))
    e = cfg["eval"]
    rep = MetricsReport(seed=cfg.seed)
    rep.w2 = w2_empirical(gen, ref, e["max_n"], cfg.seed)
    try:
        rep.set_kl(kl_knn(gen, ref, e["k"]))
    except DegeneracyError as exc:
        rep.warnings.append(f"kl skipped: {exc}")
    rep.sizes = {"generated": len(gen), "reference": len(ref)}
    if e["nll"]:
        drift = _load_drift(cfg, out.run_dir, False)
        pts = to_training_space(cfg.route, ref)[: e["nll_count"]]
        d = pts.shape[1] - 1
        scfg = cfg.sampler_config()
        scfg.steps = e["nll_steps"]
        nll = nll_ode(drift, pts, lambda x: log_density_uniform(SPHERE, x, d), scfg)
        rep.mean_nll = float(np.mean(nll))
    rep.config = {f"{s}.{k}": str(v) for s, kv in cfg.values.items() for k, v in kv.items()}
    rep.write(out.path("metrics.txt"))
    return rep


def cmd_bench(cfg: RunConfig, out: Outputs):
    b = cfg["bench"]
    schemes = [s.strip() for s in str(b["schemes"]).split(",") if s.strip()]
    esde = [s for s in schemes if s.startswith("esde-")]
    unsupported = [s for s in schemes if s not in ("grw", "esde-em", "esde-heun")]
    if unsupported:
        raise ConfigError(f"the benchmark covers grw and esde-* schemes, not {', '.join(unsupported)}")
    slopes, errors, dts = {}, {}, {}
    if esde:
        r = convergence_bench(esde, b["epsilon"], int_list(b["steps"]), b["paths"], cfg.seed)
        slopes.update(r.slopes), errors.update(r.errors), dts.update(r.dts)
    if "grw" in schemes:
        r = convergence_bench(["grw"], b["epsilon"], int_list(b["grw_steps"]), b["grw_paths"], cfg.seed)
        slopes.update(r.slopes), errors.update(r.errors), dts.update(r.dts)
    with open(out.path("slopes.txt"), "w", encoding="utf-8") as fh:
        for name in schemes:
            fh.write(f"slope.{name}={slopes[name]!r}\n")
    with open(out.path("bench_errors.csv"), "w", encoding="utf-8") as fh:
        fh.write("scheme,dt,error\n")
        for name in schemes:
            for dt, err in zip(dts[name], errors[name]):
                fh.write(f"{name},{dt!r},{err!r}\n")
    return slopes


COMMANDS = {"datagen": cmd_datagen, "train": cmd_train, "sample": cmd_sample,
            "eval": cmd_eval, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geointerp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--run-dir", help="run directory (default: new directory under the output root)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "eval":
            p.add_argument("--generated", help="samples file to score (default: run-dir/samples.csv)")
            p.add_argument("--reference", help="ground-truth samples (default: run-dir/target.csv)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = None
    created = False
    try:
        cfg = load_config(args.config, args.set)
        run_dir, created = resolve_run_dir(args, cfg)
        out = Outputs(run_dir, cfg)
        kwargs = {}
        if args.command == "eval":
            kwargs = {"generated": args.generated, "reference": args.reference}
        COMMANDS[args.command](cfg, out, **kwargs)
        out.commit()
    except (GeoInterpError, OSError) as exc:
        if out is not None:
            out.discard()
            if created:
                shutil.rmtree(out.run_dir, ignore_errors=True)
        msg = str(exc).replace("\n", " ")
        print(f"{type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    print(run_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
