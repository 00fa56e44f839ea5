"""Command-line driver: keys, encode/decode pipelines and the experiments.

Every command reads an optional JSON config (``--config``), lets a few
flags override it, validates the result and writes CSV/JSON outputs into
``--out``. Each output embeds the tool version and the resolved config.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, bounds, recovery, secrecy, sensing, signals
from .errors import InapplicableBoundError, KeyDeficitError, RankDeficientError
from .keystream import KeyChain, MASK64

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
COMMANDS = ("keygen", "encode", "decode", "bounds", "attack", "convergence", "gaussianity", "ric")
# fields that steer execution but never change results; kept out of the provenance echo
RUNTIME_FIELDS = ("out", "threads")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    m: int = 128
    n: int = 256
    k: int = 8
    w: int = 2
    etas: list = field(default_factory=lambda: [0.03])
    theta: float = 0.5
    seed: int = 0
    trials: int = 100
    basis: str = "dct2"
    basis_source: str | None = None
    key: str | None = None
    input: str | None = None
    ground_truth: str | None = None
    out: str = "."
    scaled: bool = False
    solver: str = "bpdn"
    gamma: float = 0.0
    decode_class: int | None = None
    ratio: float = 1.0
    lb_trials: int = 100
    ric_k: int | None = None
    ric_trials: int = 1000
    e1: float = 1.0
    e2: float = 1.0
    chi: int = secrecy.DESK_CHI
    P: int = secrecy.DESK_P
    n_grid: list = field(default_factory=lambda: [16, 32, 64, 128, 256, 512, 1024])
    plaintexts: int = 100
    rows: int = secrecy.DESK_R
    rhos: list = field(default_factory=lambda: [1e-3])
    signal: str = "sphere"
    threads: int | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        data = dict(data)
        if "class" in data:
            data["decode_class"] = data.pop("class")
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        ints = ("m", "n", "k", "w", "seed", "trials", "lb_trials", "ric_trials", "chi", "P",
                "plaintexts", "rows")
        for name in ints:
            v = getattr(self, name)
            need(isinstance(v, int) and not isinstance(v, bool), f"{name} must be an integer")
        need(self.m >= 1 and self.n >= 1, "m and n must be positive")
        need(0 <= self.k <= self.n, "k must lie in [0, n]")
        need(self.w >= 1, "w must be >= 1")
        need(0 <= self.seed <= MASK64, "seed must be a 64-bit unsigned integer")
        need(isinstance(self.etas, list) and all(isinstance(e, (int, float)) for e in self.etas),
             "etas must be a list of numbers")
        need(all(0.0 <= e <= 0.5 for e in self.etas), "every eta must lie in [0, 1/2]")
        need(0.0 < self.theta < 1.0, "theta must lie in (0, 1)")
        need(self.trials >= 1 and self.lb_trials >= 1, "trial counts must be positive")
        need(self.basis in signals.BASIS_KINDS, f"basis must be one of {signals.BASIS_KINDS}")
        need(self.solver in ("bpdn", "cosamp"), "solver must be bpdn or cosamp")
        need(isinstance(self.scaled, bool), "scaled must be true or false")
        need(math.isfinite(self.gamma) and self.gamma >= 0, "gamma must be >= 0")
        need(self.decode_class is None or (isinstance(self.decode_class, int) and self.decode_class >= 0),
             "class must be a non-negative integer")
        need(self.ratio >= 1.0, "ratio E[e^2]/E[e]^2 must be >= 1")
        need(self.ric_k is None or (isinstance(self.ric_k, int) and self.ric_k >= 1), "ric_k must be >= 1")
        need(self.e1 > 0 and self.e2 > 0, "energies must be positive")
        need(isinstance(self.n_grid, list) and all(isinstance(v, int) and v >= 2 for v in self.n_grid),
             "n_grid must be a list of integers >= 2")
        need(isinstance(self.rhos, list) and all(0 < r < 1 for r in self.rhos), "rhos must lie in (0, 1)")
        need(self.signal in ("sphere", "ar1", "onehot"), "signal must be sphere, ar1 or onehot")
        need(self.threads is None or (isinstance(self.threads, int) and self.threads >= 1),
             "threads must be a positive integer")

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        for name in RUNTIME_FIELDS:
            d.pop(name)
        return d


def provenance(command: str, cfg: ExperimentConfig) -> dict:
    return {"tool": "mccs", "version": __version__, "command": command, "config": cfg.echo()}


def preamble(command: str, cfg: ExperimentConfig) -> list[str]:
    return [json.dumps(provenance(command, cfg), sort_keys=True)]


def _out(cfg: ExperimentConfig, name: str) -> Path:
    d = Path(cfg.out)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _need(value, what):
    if value is None:
        raise ConfigError(f"{what} is required")
    return value


def _basis(cfg: ExperimentConfig) -> signals.OrthonormalBasis:
    source = cfg.basis_source if cfg.basis == "file" else (cfg.seed if cfg.basis == "random-onb" else None)
    try:
        return signals.make_basis(cfg.basis, cfg.n, source)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_keys(cfg: ExperimentConfig) -> KeyChain:
    try:
        return KeyChain.load(_need(cfg.key, "key file"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"key file is not JSON: {exc}") from exc


def _etas(cfg: ExperimentConfig, levels: int) -> list[float]:
    if len(cfg.etas) < levels:
        raise ConfigError(f"{levels} flip densities needed, config has {len(cfg.etas)}")
    return [float(e) for e in cfg.etas[:levels]]


# -- commands --------------------------------------------------------------------

def cmd_keygen(cfg: ExperimentConfig) -> Path:
    path = _out(cfg, "key.json")
    KeyChain.derive(cfg.w, cfg.seed).save(path)
    return path


def cmd_encode(cfg: ExperimentConfig) -> Path:
    """Encode every ``n``-sample window of the corpus with the top-class matrix."""
    keys = _load_keys(cfg)
    top = keys.class_count - 1
    etas = _etas(cfg, top)
    windows = signals.ingest_csv(_need(cfg.input, "input corpus"), cfg.n)
    frames = []
    for i, x in enumerate(windows):
        a = sensing.gen_matrix(keys, top, cfg.m, cfg.n, i, etas)
        frames.append(sensing.encode(a, x, cfg.scaled))
    path = _out(cfg, "measurements.csv")
    sensing.write_measurements(path, frames, preamble("encode", cfg))
    return path


def cmd_decode(cfg: ExperimentConfig) -> Path:
    """Decode a measurement file with the matrix of class ``decode_class``."""
    keys = _load_keys(cfg)
    top = keys.class_count - 1
    u = top if cfg.decode_class is None else cfg.decode_class
    keys = keys.for_class(u)
    etas = _etas(cfg, u)
    frames = sensing.read_measurements(_need(cfg.input, "measurement file"), cfg.scaled)
    truth = None
    if cfg.ground_truth is not None:
        truth = signals.ingest_csv(cfg.ground_truth, cfg.n)
        if len(truth) < len(frames):
            raise ConfigError(f"ground truth holds {len(truth)} windows for {len(frames)} frames")
    basis = _basis(cfg)
    residual_eta = float(sum(cfg.etas[u:top]))
    rows, decoded = [], []
    for j, frame in enumerate(frames):
        if frame.m != cfg.m:
            raise ConfigError(f"frame {frame.frame_index} holds {frame.m} measurements, config says m={cfg.m}")
        a = sensing.gen_matrix(keys, u, cfg.m, cfg.n, frame.frame_index, etas)
        prob = recovery.RecoveryProblem.from_frame(frame, a, basis, cfg.gamma, cfg.k)
        res = recovery.solve_bpdn(prob) if cfg.solver == "bpdn" else recovery.solve_cosamp(prob)
        score = None
        if truth is not None and np.any(truth[j]):
            score = recovery.rsnr(truth[j], res.x_hat)
        rows.append({
            "frame_index": frame.frame_index, "class": u, "eta": residual_eta, "rsnr_db": score,
            "iterations": res.iterations, "residual": res.residual, "converged": res.converged,
        })
        decoded.append(res.x_hat)
    path = _out(cfg, "results.csv")
    recovery.write_results(path, rows, preamble("decode", cfg))
    signals.write_corpus(_out(cfg, "decoded.csv"), np.array(decoded).reshape(-1))
    return path


def cmd_bounds(cfg: ExperimentConfig) -> Path:
    if not cfg.etas or any(e <= 0 for e in cfg.etas):
        raise ConfigError("bound sweeps need a nonempty grid of positive etas")
    stats = signals.SignalStats.from_ratio(1.0, cfg.ratio)
    basis = _basis(cfg) if cfg.ric_k is not None else None
    rows = bounds.bound_sweep(cfg.m, cfg.n, cfg.etas, cfg.theta, stats, cfg.lb_trials, cfg.seed,
                              cfg.ric_k, basis, cfg.ric_trials)
    path = _out(cfg, "bounds.csv")
    bounds.write_sweep(path, rows, preamble("bounds", cfg))
    return path


def cmd_ric(cfg: ExperimentConfig) -> Path:
    import csv

    keys = KeyChain.derive(2, cfg.seed)
    basis = _basis(cfg)
    k = cfg.ric_k or cfg.k
    path = _out(cfg, "ric.csv")
    with open(path, "w", newline="") as fh:
        for line in preamble("ric", cfg):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("eta", "k", "sigma_min", "sigma_max", "delta", "eps", "delta_2k_max", "applicable"))
        for eta in cfg.etas:
            a0 = sensing.gen_matrix(keys, 0, cfg.m, cfg.n, 0)
            a1 = sensing.gen_matrix(keys, 1, cfg.m, cfg.n, 0, (eta,))
            pair = bounds.estimate_ric_constants(a1, sensing.perturbation_between(a0, a1), basis, k,
                                                 cfg.ric_trials, cfg.seed)
            dmax = bounds.delta_2k_max(pair[1].eps)
            ok = pair[1].eps < bounds.EPS_MAX and pair[1].delta < dmax
            for est in pair:
                w.writerow((sensing.fmt_float(eta), est.k, sensing.fmt_float(est.sigma_min),
                            sensing.fmt_float(est.sigma_max), sensing.fmt_float(est.delta),
                            sensing.fmt_float(est.eps), sensing.fmt_float(dmax), int(ok)))
    return path


def cmd_attack(cfg: ExperimentConfig) -> Path:
    if cfg.chi < 1000 or cfg.P < 20:
        raise ConfigError("the attack needs chi >= 1000 and P >= 20")
    rep = secrecy.distinguishing_attack(cfg.e1, cfg.e2, cfg.n, cfg.chi, cfg.P, cfg.seed)
    path = _out(cfg, "attack.json")
    secrecy.write_attack_json(path, rep, provenance("attack", cfg))
    return path


def cmd_convergence(cfg: ExperimentConfig) -> Path:
    rep = secrecy.estimate_convergence_constant(cfg.n_grid, cfg.plaintexts, cfg.rows, cfg.rhos, cfg.seed)
    path = _out(cfg, "convergence.csv")
    secrecy.write_convergence(path, _out(cfg, "convergence.json"), rep, provenance("convergence", cfg))
    return path


def cmd_gaussianity(cfg: ExperimentConfig) -> Path:
    from .keystream import BitStream

    stream = BitStream(cfg.seed)
    if cfg.signal == "sphere":
        x = signals.sphere_uniform(cfg.n, stream)
    elif cfg.signal == "ar1":
        x = signals.ar1(cfg.n, 0.95, stream)
    else:
        x = np.zeros(cfg.n)
        x[0] = 1.0
    out = secrecy.gaussianity_check(x, cfg.chi, cfg.seed)
    path = _out(cfg, "gaussianity.json")
    data = {"n": cfg.n, "chi": cfg.chi, "signal": cfg.signal, "statistic": out.statistic,
            "scaled_statistic": out.statistic * math.sqrt(cfg.chi), "p_value": out.p_value,
            "provenance": provenance("gaussianity", cfg)}
    path.write_text(json.dumps(data, indent=2) + "\n")
    return path


HANDLERS = {
    "keygen": cmd_keygen, "encode": cmd_encode, "decode": cmd_decode, "bounds": cmd_bounds,
    "attack": cmd_attack, "convergence": cmd_convergence, "gaussianity": cmd_gaussianity,
    "ric": cmd_ric,
}


# -- argument handling ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mccs", description="Multiclass compressed-sensing encryption toolkit.")
    p.add_argument("--version", action="version", version=f"mccs {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name, help=HANDLERS[name].__doc__.splitlines()[0] if HANDLERS[name].__doc__ else None)
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--seed", type=int, help="master seed (64-bit unsigned)")
        s.add_argument("--out", help="output directory")
        s.add_argument("--trials", type=int, help="Monte Carlo trials")
        s.add_argument("--threads", type=int, help="BLAS thread cap")
        if name in ("encode", "decode"):
            s.add_argument("--key", help="key file")
            s.add_argument("--input", help="input corpus or measurement CSV")
            s.add_argument("--scaled", action="store_true", default=None, help="1/sqrt(n) measurement scaling")
        if name == "keygen":
            s.add_argument("--w", type=int, help="number of user classes")
        if name == "decode":
            s.add_argument("--class", dest="decode_class", type=int, help="decoder class")
            s.add_argument("--solver", choices=("bpdn", "cosamp"))
            s.add_argument("--ground-truth", dest="ground_truth", help="plaintext corpus for RSNR scoring")
    return p


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    for name in ("seed", "out", "trials", "threads", "key", "input", "scaled", "w",
                 "decode_class", "solver", "ground_truth"):
        v = getattr(args, name, None)
        if v is not None:
            data["class" if name == "decode_class" else name] = v
    if "decode_class" in data:
        data["class"] = data.pop("decode_class")
    try:
        return ExperimentConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _run(command: str, cfg: ExperimentConfig) -> Path:
    if cfg.threads is None:
        return HANDLERS[command](cfg)
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=cfg.threads):
        return HANDLERS[command](cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        path = _run(args.command, cfg)
    except (KeyDeficitError, ConfigError) as exc:
        print(f"mccs: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RankDeficientError, InapplicableBoundError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"mccs: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"mccs: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"mccs: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
